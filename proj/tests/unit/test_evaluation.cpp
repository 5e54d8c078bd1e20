#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <random>
#include <sstream>

#include "nba/errors.hpp"
#include "nba/evaluation.hpp"
#include "../support/osa_oracle.hpp"

namespace {

using namespace nba;
using Seq = std::vector<std::string>;

using osa::osa_oracle;

Seq random_seq(std::mt19937_64& rng, std::size_t max_len, int alphabet) {
    Seq s(rng() % (max_len + 1));
    for (auto& x : s) x = std::string(1, static_cast<char>('a' + rng() % static_cast<unsigned>(alphabet)));
    return s;
}

TEST(DamerauLevenshtein, Basics) {
    EXPECT_EQ(damerau_levenshtein(Seq{"A", "B", "C"}, Seq{"A", "B", "C"}), 0u);
    EXPECT_EQ(damerau_levenshtein(Seq{"A", "B"}, Seq{"B", "A"}), 1u);
    EXPECT_EQ(damerau_levenshtein(Seq{}, Seq{"A", "B"}), 2u);
    EXPECT_EQ(damerau_levenshtein(Seq{"A"}, Seq{}), 1u);
    // the restricted variant cannot edit the swapped pair again
    EXPECT_EQ(damerau_levenshtein(Seq{"C", "A"}, Seq{"A", "B", "C"}), 3u);
}

TEST(DamerauLevenshtein, MatchesExhaustiveSearch) {
    std::mt19937_64 rng(2718);
    for (int i = 0; i < 200; ++i) {
        auto a = random_seq(rng, 6, 5), b = random_seq(rng, 6, 5);
        const auto d = damerau_levenshtein(a, b);
        EXPECT_EQ(d, osa_oracle(a, b));
        EXPECT_EQ(d, damerau_levenshtein(b, a));
        EXPECT_EQ(damerau_levenshtein(a, a), 0u);
        EXPECT_LE(d, std::max(a.size(), b.size()));
    }
}

TEST(InTimeRate, Definition) {
    EXPECT_EQ(in_time_rate(std::vector<double>{90, 110}, 100), 50.0);
    EXPECT_EQ(in_time_rate(std::vector<double>{1, 2, 3}, 100), 100.0);
    EXPECT_EQ(in_time_rate(std::vector<double>{100}, 100), 100.0);
    EXPECT_EQ(in_time_rate(std::vector<double>{100}, 100, false), 0.0);
    EXPECT_FALSE(in_time_rate(std::vector<double>{}, 100).has_value());
}

TEST(InTimeRate, MonotoneInThreshold) {
    std::mt19937_64 rng(8);
    std::vector<double> totals(40);
    for (auto& v : totals) v = static_cast<double>(rng() % 200);
    double prev = 101;
    for (double t = 250; t >= 0; t -= 5) {
        double r = *in_time_rate(totals, t);
        EXPECT_LE(r, prev);
        prev = r;
    }
}

// Two-variant process: cheap A B C D or expensive A B X Y.
class TwoVariantPredictor : public SuffixPredictor {
public:
    std::map<Seq, PredictedSuffix> table = {
        {{"A", "B"}, {{{"X", 50}, {"Y", 50}, {"End", 0}}, false}},
        {{"A", "B", "C"}, {{{"D", 1}, {"End", 0}}, false}},
        {{"A", "B", "X"}, {{{"Y", 50}, {"End", 0}}, false}},
    };
    PredictedSuffix predict(std::span<const std::string> prefix) const override {
        auto it = table.find(Seq(prefix.begin(), prefix.end()));
        return it == table.end() ? PredictedSuffix{{{"End", 0}}, false} : it->second;
    }
    std::size_t max_suffix_length() const override { return 6; }
};

EventLog two_variant_log(int per_variant) {
    ActivityVocabulary vocab({"A", "B", "C", "D", "X", "Y"});
    std::vector<Trace> traces;
    for (int i = 0; i < 2 * per_variant; ++i) {
        const bool cheap = i % 2 == 0;
        Trace t{std::to_string(i), {}};
        t.events.push_back({t.case_id, "A", {}, 1});
        t.events.push_back({t.case_id, "B", {}, 1});
        t.events.push_back({t.case_id, cheap ? "C" : "X", {}, cheap ? 1.0 : 50.0});
        t.events.push_back({t.case_id, cheap ? "D" : "Y", {}, cheap ? 1.0 : 50.0});
        traces.push_back(append_termination(t));
    }
    return EventLog(traces, vocab);
}

// Both variants conform; shortcuts such as <End> or <D, End> do not.
DcrGraph two_variant_graph() {
    using R = RelationType;
    return DcrGraph({"A", "B", "C", "D", "X", "Y"},
                    {{R::condition, "A", "B"}, {R::condition, "B", "C"}, {R::condition, "B", "X"},
                     {R::condition, "C", "D"}, {R::condition, "X", "Y"}, {R::response, "B", "D"},
                     {R::response, "B", "Y"}, {R::exclude, "C", "X"}, {R::exclude, "C", "Y"},
                     {R::exclude, "X", "C"}, {R::exclude, "X", "D"}});
}

struct TwoVariantSetup {
    EventLog log = two_variant_log(10);
    SuffixIndex index = SuffixIndex::build(log, 1.0, 4);
    TwoVariantPredictor predictor;
    IndexCandidateSource source{index, log.vocabulary()};
    DcrGraph graph = two_variant_graph();
    RecommenderContext ctx() const { return {&predictor, &source, &graph}; }
    EvalConfig config() const {
        EvalConfig c;
        c.k_values = {5, 10};
        c.min_prefix = 2;
        c.max_prefix = 4;
        c.threshold = 50;
        return c;
    }
};

const EvalCell& cell(const EvalReport& r, const std::string& method, std::optional<std::size_t> k, std::size_t p) {
    for (const auto& c : r.cells)
        if (c.method == method && c.k == k && c.prefix_size == p) return c;
    throw std::runtime_error("missing cell");
}

TEST(Evaluate, DistinctCandidatesReachTheCheapPath) {
    TwoVariantSetup s;
    auto cands = s.source.candidates(s.predictor.table.at({"A", "B"}), 5);
    ASSERT_EQ(cands.size(), 5u);
    std::set<Seq> seqs;
    for (const auto& c : cands) seqs.insert(c.activities());
    EXPECT_EQ(seqs.size(), 5u);
    EXPECT_TRUE(seqs.count({"C", "D", "End"}));
    // without de-duplication the ten identical expensive suffixes crowd it out
    IndexCandidateSource raw(s.index, s.log.vocabulary(), false);
    for (const auto& c : raw.candidates(s.predictor.table.at({"A", "B"}), 5))
        EXPECT_EQ(c.activities(), (Seq{"X", "Y", "End"}));
}

TEST(Evaluate, TwoVariantHandTraced) {
    TwoVariantSetup s;
    auto report = evaluate(s.log, s.ctx(), s.config());
    // per prefix size: baseline + one series per k
    ASSERT_EQ(report.cells.size(), 3u * 3u);
    const auto& b2 = cell(report, "baseline", std::nullopt, 2);
    EXPECT_EQ(b2.n, 20u);
    EXPECT_EQ(b2.in_time_rate, 0.0);
    EXPECT_EQ(b2.mean_dl, 1.0);  // cheap traces 2 edits off, expensive exact
    for (std::size_t k : {5u, 10u}) {
        const auto& r2 = cell(report, "nba", k, 2);
        EXPECT_EQ(r2.in_time_rate, 100.0);
        EXPECT_EQ(r2.mean_dl, 1.0);  // now the expensive traces are 2 off
        // from A B X nothing cheaper conforms
        EXPECT_EQ(cell(report, "nba", k, 3).in_time_rate, 50.0);
    }
    EXPECT_EQ(cell(report, "baseline", std::nullopt, 3).in_time_rate, 50.0);
    // traces have 4 events, so no prefix of size 4 is evaluated
    EXPECT_EQ(cell(report, "baseline", std::nullopt, 4).n, 0u);
    EXPECT_FALSE(cell(report, "nba", 5, 4).in_time_rate.has_value());

    EXPECT_EQ(report.diagnostics.optimized_step_violations, 0u);
    EXPECT_GT(report.diagnostics.optimized_steps, 0u);
    EXPECT_EQ(report.diagnostics.interventions, 0u);
    for (const auto& r : report.instances) {
        if (r.method != "nba" || r.prefix_size != 2) continue;
        EXPECT_EQ(r.completion, (Seq{"C", "D"}));
        EXPECT_EQ(r.total_kpi, 4.0);
        EXPECT_TRUE(r.completion_conformant);
    }
}

TEST(Evaluate, BelowThresholdRowsMatchBaseline) {
    TwoVariantSetup s;
    auto cfg = s.config();
    cfg.threshold = 1e6;
    auto report = evaluate(s.log, s.ctx(), cfg);
    for (std::size_t p = 2; p <= 4; ++p) {
        auto base = cell(report, "baseline", std::nullopt, p);
        for (std::size_t k : cfg.k_values) {
            auto row = cell(report, "nba", k, p);
            base.method = row.method;
            base.k = row.k;
            EXPECT_EQ(row, base);
        }
    }
    std::map<std::pair<std::size_t, std::size_t>, const InstanceResult*> baseline;
    for (const auto& r : report.instances)
        if (r.method == "baseline") baseline[{r.trace_index, r.prefix_size}] = &r;
    for (const auto& r : report.instances) {
        if (r.method != "nba") continue;
        ASSERT_TRUE(r.all_below_threshold);
        const auto* b = baseline.at({r.trace_index, r.prefix_size});
        EXPECT_EQ(r.completion, b->completion);
        EXPECT_EQ(r.total_kpi, b->total_kpi);
    }
}

TEST(Evaluate, WorkerCountDoesNotChangeReport) {
    TwoVariantSetup s;
    auto cfg = s.config();
    auto one = evaluate(s.log, s.ctx(), cfg);
    cfg.workers = 3;
    auto three = evaluate(s.log, s.ctx(), cfg);
    EXPECT_EQ(one.to_json(true), three.to_json(true));
}

TEST(Evaluate, InterventionCompletesWithPrediction) {
    TwoVariantSetup s;
    ActivityVocabulary vocab({"A", "B", "C", "D", "X", "Y"});
    // B before A violates the first condition
    Trace bad{"bad", {{"bad", "B", {}, 1}, {"bad", "A", {}, 1}, {"bad", "X", {}, 50}, {"bad", "Y", {}, 50}}};
    s.predictor.table[{"B", "A"}] = {{{"X", 50}, {"Y", 50}, {"End", 0}}, false};
    auto report = evaluate(EventLog({append_termination(bad)}, vocab), s.ctx(), s.config());
    const InstanceResult* nba_row = nullptr;
    for (const auto& r : report.instances)
        if (r.method == "nba" && r.prefix_size == 2) nba_row = &r;
    ASSERT_TRUE(nba_row);
    EXPECT_TRUE(nba_row->intervention);
    EXPECT_EQ(nba_row->completion, (Seq{"X", "Y"}));
    EXPECT_EQ(nba_row->total_kpi, 102.0);
    EXPECT_GT(report.diagnostics.interventions, 0u);
}

TEST(Evaluate, ConfigValidation) {
    TwoVariantSetup s;
    auto cfg = s.config();
    cfg.min_prefix = 1;
    EXPECT_THROW(evaluate(s.log, s.ctx(), cfg), ConfigError);
    cfg = s.config();
    cfg.k_values.clear();
    EXPECT_THROW(evaluate(s.log, s.ctx(), cfg), ConfigError);
    cfg = s.config();
    cfg.threshold = 0;
    EXPECT_THROW(evaluate(s.log, s.ctx(), cfg), ConfigError);
}

TEST(Report, CsvSchemaAndRoundTrip) {
    TwoVariantSetup s;
    auto report = evaluate(s.log, s.ctx(), s.config());
    std::stringstream ss;
    write_csv(ss, report.cells);
    std::string header;
    std::getline(std::stringstream(ss.str()), header);
    EXPECT_EQ(header, "method,k,prefix_size,in_time_rate,mean_dl,n");
    auto back = read_csv(ss);
    ASSERT_EQ(back.size(), report.cells.size());
    for (std::size_t i = 0; i < back.size(); ++i) {
        auto expected = report.cells[i];
        expected.mean_dl_normalized.reset();  // JSON only
        EXPECT_EQ(back[i], expected);
    }
}

TEST(Report, ExactDoublesSurviveCsv) {
    std::vector<EvalCell> cells = {{"nba", 5, 3, 100.0 / 3.0, 0.1 + 0.2, std::nullopt, 7},
                                   {"baseline", std::nullopt, 2, std::nullopt, std::nullopt, std::nullopt, 0}};
    std::stringstream ss;
    write_csv(ss, cells);
    EXPECT_EQ(read_csv(ss), cells);
}

TEST(Report, EmptyTestLogIsHeaderOnly) {
    TwoVariantSetup s;
    auto report = evaluate(EventLog({}, s.log.vocabulary()), s.ctx(), s.config());
    EXPECT_TRUE(report.cells.empty());
    std::stringstream ss;
    write_csv(ss, report.cells);
    EXPECT_EQ(ss.str(), "method,k,prefix_size,in_time_rate,mean_dl,n\n");
}

TEST(Report, ReadRejectsMalformed) {
    std::stringstream bad_header("a,b\n");
    EXPECT_THROW(read_csv(bad_header), ParseError);
    std::stringstream bad_row("method,k,prefix_size,in_time_rate,mean_dl,n\nnba,5,x,1,1,1\n");
    try {
        read_csv(bad_row);
        FAIL();
    } catch (const ParseError& e) {
        EXPECT_EQ(e.row(), 2u);
    }
}

TEST(Report, ExportWritesCsvAndJson) {
    TwoVariantSetup s;
    auto report = evaluate(s.log, s.ctx(), s.config());
    const auto dir = std::filesystem::path(::testing::TempDir()) / "nba_report_test";
    export_report(report, dir.string());
    EXPECT_TRUE(std::filesystem::exists(dir / "report.csv"));
    std::ifstream js(dir / "report.json");
    auto j = nlohmann::json::parse(js);
    EXPECT_EQ(j["cells"].size(), report.cells.size());
    EXPECT_TRUE(j["cells"][0].contains("mean_dl_normalized"));
    std::filesystem::remove_all(dir);
    EXPECT_THROW(export_report(report, "/proc/nonexistent/dir"), IoError);
}

} // namespace
