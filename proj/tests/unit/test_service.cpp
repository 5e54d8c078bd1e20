#include <gtest/gtest.h>

// nba headers (Eigen) before socket headers: resolv.h defines a `_res` macro
#include "../support/synthetic_log.hpp"
#include "nba/service.hpp"

#include <filesystem>
#include <thread>

#include <httplib.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

namespace {

using namespace nba;
namespace fs = std::filesystem;
using nlohmann::json;

class ServiceTest : public ::testing::Test {
protected:
    static void SetUpTestSuite() {
        dir_ = fs::temp_directory_path() / "nba_service_test";
        fs::remove_all(dir_);
        synth::TwoVariantSpec spec;
        spec.traces = 120;
        cfg_ = RunConfig::load(synth::write_two_variant_project(
                                   dir_, spec,
                                   R"({"hidden_size": 12, "epochs": 20, "batch_size": 32, "learning_rate": 0.01, "patience": 0})")
                                   .string());
        auto out = train_pipeline(cfg_);
        write_artifacts(out.artifacts, cfg_.resolve(cfg_.artifacts_dir));
        engine_ = Engine::open(cfg_);
    }
    static void TearDownTestSuite() { engine_.reset(); }

    static json ev(const std::string& a, double kpi) { return {{"activity", a}, {"kpi", kpi}}; }

    static std::string new_case(CaseService& svc) {
        auto r = svc.create_case(json::object());
        EXPECT_EQ(r.status, 201);
        return r.body.at("case_id");
    }

    static inline fs::path dir_;
    static inline RunConfig cfg_;
    static inline std::shared_ptr<const Engine> engine_;
};

TEST_F(ServiceTest, CreateAppendRecommendFlow) {
    CaseService svc(engine_);
    const auto id = new_case(svc);
    EXPECT_EQ(svc.append_event(id, ev("A", 10)).status, 200);
    auto st = svc.append_event(id, ev("B", 10));
    ASSERT_EQ(st.status, 200);
    EXPECT_EQ(st.body["marking"]["executed"], json::array({"A", "B"}));
    EXPECT_EQ(st.body["marking"]["pending"], json::array({"D", "Y"}));
    auto enabled = st.body["enabled"].get<std::vector<std::string>>();
    EXPECT_NE(std::find(enabled.begin(), enabled.end(), "C"), enabled.end());
    EXPECT_NE(std::find(enabled.begin(), enabled.end(), "X"), enabled.end());
    EXPECT_FALSE(st.body["accepting"].get<bool>());

    auto rec = svc.get_recommendation(id, 5);
    ASSERT_EQ(rec.status, 200) << rec.body.dump();
    EXPECT_TRUE(rec.body.contains("decision_path"));
    ASSERT_TRUE(rec.body["action"].is_string());
    EXPECT_EQ(rec.body["k"], 5);

    // the case keeps the recommendation in its history
    auto state = svc.get_state(id);
    EXPECT_EQ(state.body["recommendations"], 1);
    EXPECT_EQ(state.body["last_recommendation"]["action"], rec.body["action"]);

    // accepting the action appends it like any observed event
    EXPECT_EQ(svc.append_event(id, {{"activity", rec.body["action"]}, {"kpi", rec.body["action_kpi"]}}).status, 200);
    EXPECT_EQ(svc.get_state(id).body["events"].size(), 3u);
}

TEST_F(ServiceTest, WhatIfIsPure) {
    CaseService svc(engine_);
    const auto id = new_case(svc);
    svc.append_event(id, ev("A", 10));
    svc.append_event(id, ev("B", 10));
    const auto before = svc.get_state(id).body;
    json body = {{"activities", json::array({ev("X", 40)})}};
    auto a = svc.what_if(id, body);
    auto b = svc.what_if(id, body);
    ASSERT_EQ(a.status, 200) << a.body.dump();
    EXPECT_EQ(a.body, b.body);
    EXPECT_EQ(a.body["events"].size(), 3u);
    EXPECT_FALSE(a.body["recommendation"].is_null());
    EXPECT_EQ(svc.get_state(id).body, before);
}

TEST_F(ServiceTest, WhatIfEndFromAcceptingStateIsConformant) {
    CaseService svc(engine_);
    const auto id = new_case(svc);
    for (const char* a : {"A", "B", "C", "D"}) svc.append_event(id, ev(a, 10));
    auto r = svc.what_if(id, {{"activities", json::array({"End"})}});
    ASSERT_EQ(r.status, 200);
    EXPECT_TRUE(r.body["conformant"].get<bool>());
    EXPECT_TRUE(r.body["terminated"].get<bool>());
    EXPECT_TRUE(r.body["recommendation"].is_null());
    // ending early leaves D pending
    const auto id2 = new_case(svc);
    for (const char* a : {"A", "B", "C"}) svc.append_event(id2, ev(a, 10));
    auto r2 = svc.what_if(id2, {{"activities", json::array({"End"})}});
    EXPECT_FALSE(r2.body["conformant"].get<bool>());
    EXPECT_EQ(r2.body["nonconformance"]["reason"], "not-accepting");
}

TEST_F(ServiceTest, ErrorsCarryStatusAndCode) {
    CaseService svc(engine_);
    EXPECT_EQ(svc.get_state("nope").status, 404);
    EXPECT_EQ(svc.get_state("nope").body["error"]["code"], "case_not_found");
    EXPECT_EQ(svc.append_event("nope", ev("A", 1)).status, 404);
    EXPECT_EQ(svc.get_recommendation("nope", std::nullopt).status, 404);
    EXPECT_EQ(svc.what_if("nope", {{"activities", json::array()}}).status, 404);

    const auto id = new_case(svc);
    EXPECT_EQ(svc.append_event(id, {{"kpi", 1}}).status, 400);
    EXPECT_EQ(svc.append_event(id, ev("A", -1)).status, 400);
    svc.append_event(id, ev("A", 10));
    auto pre = svc.get_recommendation(id, std::nullopt);
    EXPECT_EQ(pre.status, 409);
    EXPECT_EQ(pre.body["error"]["code"], "precondition_failed");
    EXPECT_EQ(svc.get_recommendation(id, 0).status, 400);

    for (const char* a : {"B", "C", "D", "End"}) EXPECT_EQ(svc.append_event(id, ev(a, 10)).status, 200);
    auto conflict = svc.append_event(id, ev("A", 1));
    EXPECT_EQ(conflict.status, 409);
    EXPECT_EQ(conflict.body["error"]["code"], "case_terminated");
    EXPECT_EQ(svc.get_recommendation(id, std::nullopt).status, 409);
    EXPECT_TRUE(svc.get_state(id).body["terminated"].get<bool>());

    EXPECT_EQ(svc.create_case({{"case_id", id}}).status, 409);
    EXPECT_EQ(svc.handle("POST", "/cases", {}, "{oops").status, 400);
    EXPECT_EQ(svc.handle("GET", "/nowhere", {}, "").status, 404);
    EXPECT_EQ(svc.handle("GET", "/cases/" + id + "/recommendation", {{"k", "x"}}, "").status, 400);
}

TEST_F(ServiceTest, UnknownActivitiesFlaggedOrRejectedInStrictMode) {
    CaseService lax(engine_);
    const auto id = new_case(lax);
    auto r = lax.append_event(id, ev("Mystery", 1));
    ASSERT_EQ(r.status, 200);
    EXPECT_EQ(r.body["unknown_activities"], json::array({"Mystery"}));
    lax.append_event(id, ev("A", 1));
    auto rec = lax.get_recommendation(id, std::nullopt);
    EXPECT_EQ(rec.status, 400);
    EXPECT_EQ(rec.body["error"]["code"], "unknown_activity");

    auto cfg = cfg_;
    cfg.graph_options.strict = true;
    CaseService strict(Engine::open(cfg));
    const auto sid = new_case(strict);
    auto s = strict.append_event(sid, ev("Mystery", 1));
    EXPECT_EQ(s.status, 400);
    EXPECT_EQ(s.body["error"]["code"], "unknown_activity");
    EXPECT_EQ(strict.get_state(sid).body["events"].size(), 0u);
}

TEST_F(ServiceTest, NonConformantPrefixStoredAndRecommendationIntervenes) {
    CaseService svc(engine_);
    const auto id = new_case(svc);
    svc.append_event(id, ev("A", 10));
    auto st = svc.append_event(id, ev("C", 10));  // C needs B first
    EXPECT_FALSE(st.body["conformant"].get<bool>());
    EXPECT_EQ(st.body["nonconformance"]["failing_step"], 1);
    EXPECT_EQ(st.body["marking"]["executed"], json::array({"A"}));
    // the threshold gate still decides first; force the prescriptive path
    auto cfg = cfg_;
    cfg.threshold = 1e-3;
    CaseService tight(Engine::open(cfg));
    const auto tid = new_case(tight);
    tight.append_event(tid, ev("A", 10));
    tight.append_event(tid, ev("C", 10));
    auto rec = tight.get_recommendation(tid, std::nullopt);
    ASSERT_EQ(rec.status, 200);
    EXPECT_EQ(rec.body["decision_path"], "intervention");
    EXPECT_TRUE(rec.body["action"].is_null());
}

TEST_F(ServiceTest, ConcurrentAppendsToOneCaseAreSerialized) {
    CaseService svc(engine_);
    const auto id = new_case(svc);
    std::vector<std::thread> threads;
    for (int t = 0; t < 8; ++t)
        threads.emplace_back([&] {
            for (int i = 0; i < 25; ++i) {
                svc.append_event(id, ev("A", 1));
                auto s = svc.get_state(id).body;
                // executed set must always reflect the stored prefix
                EXPECT_EQ(s["marking"]["executed"], json::array({"A"}));
            }
        });
    for (auto& t : threads) t.join();
    auto s = svc.get_state(id).body;
    EXPECT_EQ(s["events"].size(), 200u);
    EXPECT_DOUBLE_EQ(s["total_kpi"].get<double>(), 200.0);
}

TEST_F(ServiceTest, JournalRestoresCases) {
    const auto journal = dir_ / "journal.jsonl";
    fs::remove(journal);
    std::string id;
    {
        CaseService svc(engine_, journal.string());
        id = new_case(svc);
        svc.append_event(id, ev("A", 10));
        svc.append_event(id, {{"activity", "B"}, {"kpi", 12.5}, {"timestamp", "2024-01-01T10:00:00Z"}});
        new_case(svc);
    }
    CaseService restored(engine_, journal.string());
    EXPECT_EQ(restored.case_count(), 2u);
    auto s = restored.get_state(id).body;
    ASSERT_EQ(s["events"].size(), 2u);
    EXPECT_EQ(s["events"][1]["kpi"], 12.5);
    EXPECT_EQ(s["events"][1]["timestamp"], "2024-01-01 10:00:00");
    EXPECT_EQ(s["marking"]["executed"], json::array({"A", "B"}));
    // new ids do not collide with restored ones
    auto fresh = restored.create_case(json::object());
    EXPECT_EQ(fresh.status, 201);
}

TEST_F(ServiceTest, HttpEndpointsAndGracefulStop) {
    CaseService svc(engine_);
    HttpServer http(svc);
    const int port = http.start("127.0.0.1", 0);
    ASSERT_GT(port, 0);
    httplib::Client cli("127.0.0.1", port);
    auto health = cli.Get("/health");
    ASSERT_TRUE(health);
    EXPECT_EQ(health->status, 200);
    EXPECT_EQ(json::parse(health->body)["status"], "ok");

    auto meta = json::parse(cli.Get("/meta")->body);
    EXPECT_EQ(meta["vocabulary_hash"], engine_->vocabulary().hash());
    EXPECT_EQ(meta["schema_version"], kApiSchemaVersion);

    auto created = cli.Post("/cases", "{}", "application/json");
    ASSERT_TRUE(created);
    EXPECT_EQ(created->status, 201);
    const std::string id = json::parse(created->body)["case_id"];
    EXPECT_EQ(cli.Post(("/cases/" + id + "/events").c_str(), ev("A", 10).dump(), "application/json")->status, 200);
    EXPECT_EQ(cli.Post(("/cases/" + id + "/events").c_str(), ev("B", 10).dump(), "application/json")->status, 200);
    auto rec = cli.Get(("/cases/" + id + "/recommendation?k=10").c_str());
    ASSERT_TRUE(rec);
    EXPECT_EQ(rec->status, 200);
    EXPECT_TRUE(json::parse(rec->body)["action"].is_string());
    auto missing = cli.Get("/cases/none");
    EXPECT_EQ(missing->status, 404);
    EXPECT_EQ(json::parse(missing->body)["error"]["code"], "case_not_found");

    // requests racing with stop either complete or fail cleanly
    std::atomic<int> ok{0};
    std::thread load([&] {
        httplib::Client c("127.0.0.1", port);
        for (int i = 0; i < 50; ++i) {
            auto r = c.Get(("/cases/" + id + "/recommendation").c_str());
            if (!r) break;
            EXPECT_EQ(r->status, 200);
            ++ok;
        }
    });
    std::this_thread::sleep_for(std::chrono::milliseconds(20));
    http.stop();
    http.wait();
    load.join();
    EXPECT_GT(ok.load(), 0);
    EXPECT_FALSE(http.running());
}

TEST_F(ServiceTest, BusyPortIsABindError) {
    int fd = ::socket(AF_INET, SOCK_STREAM, 0);
    ASSERT_GE(fd, 0);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    addr.sin_port = 0;
    ASSERT_EQ(::bind(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr), 0);
    ASSERT_EQ(::listen(fd, 1), 0);
    socklen_t len = sizeof addr;
    ::getsockname(fd, reinterpret_cast<sockaddr*>(&addr), &len);
    const int port = ntohs(addr.sin_port);
    CaseService svc(engine_);
    HttpServer http(svc);
    EXPECT_THROW(http.start("127.0.0.1", port), BindError);
    ::close(fd);
}

} // namespace
