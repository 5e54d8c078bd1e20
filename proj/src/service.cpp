#include "nba/service.hpp"

#include <sstream>

#include <httplib.h>

namespace nba {

using nlohmann::json;

namespace {

std::string now_iso() {
    return format_timestamp(std::chrono::floor<std::chrono::seconds>(std::chrono::system_clock::now()));
}

ApiResponse error(int status, const std::string& code, const std::string& message) {
    return {status, {{"schema_version", kApiSchemaVersion}, {"error", {{"code", code}, {"message", message}}}}};
}

ApiResponse from_error(const Error& e) {
    int status = 500;
    const auto& c = e.code();
    if (c == "case_terminated" || c == "precondition_failed" || c == "already_terminated")
        status = 409;
    else if (c == "unknown_activity" || c == "undeclared_activity" || c == "schema_error" || c == "parse_error" ||
             c == "config_error" || c == "out_of_bounds" || c == "query_error")
        status = 400;
    return error(status, c, e.what());
}

ApiResponse not_found(const std::string& id) { return error(404, "case_not_found", "no case with id '" + id + "'"); }

json verdict_json(const ConformanceVerdict& v) {
    if (v.conformant) return nullptr;
    return {{"failing_step", v.failing_step ? json(*v.failing_step) : json(nullptr)},
            {"reason", v.reason ? to_string(*v.reason) : "not-enabled"},
            {"detail", v.detail}};
}

json events_json(const Trace& t) {
    json out = json::array();
    for (const auto& e : t.events)
        out.push_back({{"activity", e.activity},
                       {"kpi", e.kpi_value},
                       {"timestamp", e.timestamp ? json(format_timestamp(*e.timestamp)) : json(nullptr)}});
    return out;
}

struct EventInput {
    std::string activity;
    double kpi = 0.0;
    std::optional<Timestamp> timestamp;
};

EventInput parse_event(const json& j) {
    EventInput in;
    if (j.is_string()) {
        in.activity = j.get<std::string>();
    } else if (j.is_object()) {
        if (!j.contains("activity") || !j["activity"].is_string())
            throw SchemaError("event needs a string 'activity'");
        in.activity = j["activity"].get<std::string>();
        if (j.contains("kpi") && !j["kpi"].is_null()) {
            if (!j["kpi"].is_number()) throw SchemaError("'kpi' must be a number");
            in.kpi = j["kpi"].get<double>();
        }
        if (j.contains("timestamp") && !j["timestamp"].is_null())
            in.timestamp = parse_timestamp(j["timestamp"].get<std::string>());
    } else {
        throw SchemaError("event must be an activity name or an object");
    }
    if (in.activity.empty()) throw SchemaError("activity must be non-empty");
    if (!(in.kpi >= 0.0)) throw SchemaError("kpi must be non-negative");
    return in;
}

json parse_body(const std::string& body) {
    if (body.empty()) return json::object();
    try {
        return json::parse(body);
    } catch (const json::exception& e) {
        throw SchemaError(std::string("request body is not valid JSON: ") + e.what());
    }
}

std::vector<std::string> split_path(const std::string& path) {
    std::vector<std::string> parts;
    std::stringstream ss(path);
    std::string p;
    while (std::getline(ss, p, '/'))
        if (!p.empty()) parts.push_back(p);
    return parts;
}

} // namespace

CaseService::CaseService(std::shared_ptr<const Engine> engine, std::string journal_path) : engine_(std::move(engine)) {
    if (!engine_) throw PreconditionError("service needs an engine");
    if (!journal_path.empty()) {
        recover(journal_path);
        journal_.open(journal_path, std::ios::app);
        if (!journal_) throw IoError("cannot open journal " + journal_path);
    }
}

void CaseService::recover(const std::string& path) {
    std::ifstream in(path);
    if (!in) return;
    replaying_ = true;
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
        ++n;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception&) {
            if (in.peek() == EOF) break;  // torn final write
            throw IoError("journal " + path + " line " + std::to_string(n) + " is corrupt");
        }
        const auto op = j.value("op", std::string());
        if (op == "create") {
            create_case({{"case_id", j.at("case_id")}});
        } else if (op == "event") {
            json ev = {{"activity", j.at("activity")}, {"kpi", j.value("kpi", 0.0)}};
            if (j.contains("timestamp")) ev["timestamp"] = j["timestamp"];
            auto r = append_event(j.at("case_id").get<std::string>(), ev);
            if (r.status != 200) throw IoError("journal " + path + " line " + std::to_string(n) + " does not replay");
        }
    }
    replaying_ = false;
}

void CaseService::journal(const json& entry) {
    if (replaying_ || !journal_.is_open()) return;
    std::lock_guard lk(journal_mutex_);
    journal_ << entry.dump() << '\n';
    journal_.flush();
}

std::size_t CaseService::case_count() const {
    std::shared_lock lk(cases_mutex_);
    return cases_.size();
}

std::shared_ptr<CaseSession> CaseService::find(const std::string& id) const {
    std::shared_lock lk(cases_mutex_);
    auto it = cases_.find(id);
    return it == cases_.end() ? nullptr : it->second;
}

ApiResponse CaseService::create_case(const json& body) {
    if (!body.is_object()) return error(400, "schema_error", "body must be a JSON object");
    auto s = std::make_shared<CaseSession>();
    s->marking = engine_->graph().initial_marking();
    s->created = s->updated = now_iso();
    {
        std::unique_lock lk(cases_mutex_);
        if (body.contains("case_id")) {
            if (!body["case_id"].is_string() || body["case_id"].get<std::string>().empty())
                return error(400, "schema_error", "case_id must be a non-empty string");
            s->id = body["case_id"].get<std::string>();
            if (cases_.count(s->id)) return error(409, "case_exists", "case '" + s->id + "' already exists");
        } else {
            do {
                char buf[32];
                std::snprintf(buf, sizeof buf, "case-%06llu", static_cast<unsigned long long>(next_id_++));
                s->id = buf;
            } while (cases_.count(s->id));
        }
        s->running.trace.case_id = s->id;
        cases_.emplace(s->id, s);
    }
    journal({{"op", "create"}, {"case_id", s->id}, {"at", s->created}});
    std::lock_guard lk(s->mutex);
    return {201, snapshot(*s)};
}

void CaseService::append_locked(CaseSession& s, const std::string& activity, double kpi, std::optional<Timestamp> ts) {
    const bool end = activity == kEndActivity;
    s.running.trace.events.push_back({s.id, activity, ts, end ? 0.0 : kpi});
    if (!end && !engine_->vocabulary().contains(activity)) s.unknown_activities.push_back(activity);
    auto replayed = engine_->graph().replay(s.running.activities());
    s.marking = replayed.marking;
    s.verdict = replayed.verdict;
    s.updated = now_iso();
}

ApiResponse CaseService::append_event(const std::string& id, const json& body) {
    auto s = find(id);
    if (!s) return not_found(id);
    EventInput in;
    try {
        in = parse_event(body);
    } catch (const Error& e) {
        return from_error(e);
    }
    const bool known = in.activity == kEndActivity || engine_->vocabulary().contains(in.activity);
    if (engine_->graph().options().strict && (!known || !engine_->graph().declares(in.activity)))
        return error(400, "unknown_activity", "activity '" + in.activity + "' is unknown (strict mode)");
    std::lock_guard lk(s->mutex);
    if (s->running.is_terminated()) return error(409, "case_terminated", "case '" + id + "' has already terminated");
    append_locked(*s, in.activity, in.kpi, in.timestamp);
    json entry = {{"op", "event"}, {"case_id", id}, {"activity", in.activity}, {"kpi", in.kpi}};
    if (in.timestamp) entry["timestamp"] = format_timestamp(*in.timestamp);
    journal(entry);
    return {200, snapshot(*s)};
}

json CaseService::snapshot(const CaseSession& s) const {
    const auto& g = engine_->graph();
    return {{"schema_version", kApiSchemaVersion},
            {"case_id", s.id},
            {"events", events_json(s.running.trace)},
            {"terminated", s.running.is_terminated()},
            {"total_kpi", s.running.total_kpi()},
            {"marking", g.marking_to_json(s.marking)},
            {"enabled", s.running.is_terminated() ? std::vector<std::string>{} : g.enabled_activities(s.marking)},
            {"accepting", g.is_accepting(s.marking)},
            {"conformant", s.verdict.conformant},
            {"nonconformance", verdict_json(s.verdict)},
            {"unknown_activities", s.unknown_activities},
            {"threshold", engine_->threshold()},
            {"last_recommendation", s.history.empty() ? json(nullptr) : s.history.back()},
            {"recommendations", s.history.size()},
            {"created", s.created},
            {"updated", s.updated}};
}

ApiResponse CaseService::get_state(const std::string& id) const {
    auto s = find(id);
    if (!s) return not_found(id);
    std::lock_guard lk(s->mutex);
    return {200, snapshot(*s)};
}

ApiResponse CaseService::get_recommendation(const std::string& id, std::optional<std::size_t> k) {
    auto s = find(id);
    if (!s) return not_found(id);
    if (k && *k == 0) return error(400, "query_error", "k must be positive");
    std::lock_guard lk(s->mutex);
    try {
        auto rec = engine_->recommend(s->running, k);
        json body = rec.to_json();
        body["schema_version"] = kApiSchemaVersion;
        body["case_id"] = id;
        body["k"] = k.value_or(engine_->config().k);
        body["threshold"] = engine_->threshold();
        body["at"] = now_iso();
        s->history.push_back(body);
        return {200, body};
    } catch (const Error& e) {
        return from_error(e);
    }
}

ApiResponse CaseService::what_if(const std::string& id, const json& body) const {
    auto s = find(id);
    if (!s) return not_found(id);
    if (!body.is_object() || !body.contains("activities") || !body["activities"].is_array())
        return error(400, "schema_error", "body needs an 'activities' array");
    std::optional<std::size_t> k;
    if (body.contains("k")) {
        if (!body["k"].is_number_unsigned() || body["k"].get<std::size_t>() == 0)
            return error(400, "query_error", "k must be a positive integer");
        k = body["k"].get<std::size_t>();
    }
    RunningCase hypo;
    {
        std::lock_guard lk(s->mutex);
        hypo = s->running;
    }
    std::vector<EventInput> added;
    try {
        for (const auto& ev : body["activities"]) added.push_back(parse_event(ev));
    } catch (const Error& e) {
        return from_error(e);
    }
    if (hypo.is_terminated() && !added.empty())
        return error(409, "case_terminated", "case '" + id + "' has already terminated");
    for (std::size_t i = 0; i < added.size(); ++i) {
        if (hypo.is_terminated()) return error(400, "schema_error", "activities continue after End");
        const auto& a = added[i];
        if (engine_->graph().options().strict && a.activity != kEndActivity &&
            (!engine_->vocabulary().contains(a.activity) || !engine_->graph().declares(a.activity)))
            return error(400, "unknown_activity", "activity '" + a.activity + "' is unknown (strict mode)");
        hypo.trace.events.push_back({id, a.activity, a.timestamp, a.activity == kEndActivity ? 0.0 : a.kpi});
    }
    const auto& g = engine_->graph();
    auto replayed = g.replay(hypo.activities());
    json out = {{"schema_version", kApiSchemaVersion},
                {"case_id", id},
                {"events", events_json(hypo.trace)},
                {"terminated", hypo.is_terminated()},
                {"total_kpi", hypo.total_kpi()},
                {"marking", g.marking_to_json(replayed.marking)},
                {"enabled", hypo.is_terminated() ? std::vector<std::string>{} : g.enabled_activities(replayed.marking)},
                {"accepting", g.is_accepting(replayed.marking)},
                {"conformant", replayed.verdict.conformant},
                {"nonconformance", verdict_json(replayed.verdict)},
                {"recommendation", nullptr}};
    if (!hypo.is_terminated()) {
        try {
            auto rec = engine_->recommend(hypo, k).to_json();
            rec["k"] = k.value_or(engine_->config().k);
            rec["threshold"] = engine_->threshold();
            out["recommendation"] = rec;
        } catch (const Error& e) {
            out["recommendation_error"] = {{"code", e.code()}, {"message", e.what()}};
        }
    }
    return {200, out};
}

ApiResponse CaseService::health() const {
    return {200, {{"schema_version", kApiSchemaVersion}, {"status", "ok"}, {"cases", case_count()}}};
}

ApiResponse CaseService::meta() const {
    auto m = engine_->meta();
    m["schema_version"] = kApiSchemaVersion;
    return {200, m};
}

ApiResponse CaseService::handle(const std::string& method, const std::string& path,
                                const std::map<std::string, std::string>& query, const std::string& body) {
    const auto parts = split_path(path);
    try {
        if (parts.size() == 1 && parts[0] == "health" && method == "GET") return health();
        if (parts.size() == 1 && parts[0] == "meta" && method == "GET") return meta();
        if (!parts.empty() && parts[0] == "cases") {
            if (parts.size() == 1 && method == "POST") return create_case(parse_body(body));
            if (parts.size() == 2 && method == "GET") return get_state(parts[1]);
            if (parts.size() == 3 && parts[2] == "events" && method == "POST")
                return append_event(parts[1], parse_body(body));
            if (parts.size() == 3 && parts[2] == "what-if" && method == "POST")
                return what_if(parts[1], parse_body(body));
            if (parts.size() == 3 && parts[2] == "recommendation" && method == "GET") {
                std::optional<std::size_t> k;
                if (auto it = query.find("k"); it != query.end()) {
                    std::size_t pos = 0;
                    long long v = -1;
                    try {
                        v = std::stoll(it->second, &pos);
                    } catch (const std::exception&) {
                        pos = 0;
                    }
                    if (pos != it->second.size() || v <= 0)
                        return error(400, "query_error", "k must be a positive integer, got '" + it->second + "'");
                    k = static_cast<std::size_t>(v);
                }
                return get_recommendation(parts[1], k);
            }
        }
        return error(404, "not_found", method + " " + path + " is not an endpoint");
    } catch (const Error& e) {
        return from_error(e);
    } catch (const std::exception& e) {
        return error(500, "internal_error", e.what());
    }
}

HttpServer::HttpServer(CaseService& service) : service_(service), server_(std::make_unique<httplib::Server>()) {
    auto route = [this](const httplib::Request& req, httplib::Response& res) {
        std::map<std::string, std::string> query;
        for (const auto& [k, v] : req.params) query.emplace(k, v);
        auto r = service_.handle(req.method, req.path, query, req.body);
        res.status = r.status;
        res.set_content(r.body.dump(), "application/json");
    };
    server_->Get(".*", route);
    server_->Post(".*", route);
    server_->Options(".*", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });
    server_->set_default_headers({{"Access-Control-Allow-Origin", "*"},
                                  {"Access-Control-Allow-Headers", "Content-Type"},
                                  {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"}});
    server_->set_keep_alive_timeout(1);
    // the library default adds SO_REUSEPORT, which would let a second server share the port
    server_->set_socket_options([](socket_t sock) {
        int yes = 1;
        setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, reinterpret_cast<const void*>(&yes), sizeof(yes));
    });
}

HttpServer::~HttpServer() {
    stop();
    wait();
}

int HttpServer::start(const std::string& host, int port) {
    if (thread_) throw StateError("server already started");
    int bound = port;
    if (port == 0) {
        bound = server_->bind_to_any_port(host);
        if (bound < 0) throw BindError("cannot bind " + host + " to any port");
    } else if (!server_->bind_to_port(host, port)) {
        throw BindError("cannot bind " + host + ":" + std::to_string(port) + " (address in use or not permitted)");
    }
    thread_ = std::make_unique<std::thread>([this] { server_->listen_after_bind(); });
    server_->wait_until_ready();
    return bound;
}

void HttpServer::stop() {
    if (server_) server_->stop();
}

void HttpServer::wait() {
    if (thread_ && thread_->joinable()) thread_->join();
}

bool HttpServer::running() const { return server_ && server_->is_running(); }

} // namespace nba
