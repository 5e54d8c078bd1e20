#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "nba/candidate_index.hpp"
#include "nba/dcr.hpp"
#include "nba/evaluation.hpp"
#include "nba/eventlog.hpp"
#include "nba/predictor.hpp"
#include "nba/recommender.hpp"

namespace nba {

// Declarative run configuration. Relative paths resolve against the
// directory of the config file.
struct RunConfig {
    std::filesystem::path base_dir = ".";

    std::string log_path;
    CsvSchema schema;
    KpiMode kpi_mode = KpiMode::inter_event_duration;
    double subsample_fraction = 1.0;
    std::size_t max_trace_events = 0;  // 0: no limit

    double train_fraction = 2.0 / 3.0;
    TrainConfig predictor;

    double kpi_weight = 1.0;
    std::size_t leaf_size = 16;
    bool distinct_candidates = true;

    std::string graph_path;
    DcrOptions graph_options;

    std::size_t k = 10;
    std::optional<double> threshold;  // expert value; derived from the training split when absent
    bool check_threshold_once = false;

    std::vector<std::size_t> k_values = {5, 10, 15};
    std::size_t min_prefix = 2;
    std::size_t max_prefix = 12;
    bool boundary_in_time = true;
    std::size_t max_steps = 0;

    std::uint64_t seed = 42;
    std::size_t workers = 1;
    std::string artifacts_dir = "artifacts";
    std::string report_dir = "reports";

    std::string host = "127.0.0.1";
    int port = 8080;
    std::string journal_path;

    static RunConfig from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = ".");
    static RunConfig load(const std::string& path);
    nlohmann::json to_json() const;
    // Stable hash over everything that influences results.
    std::string hash() const;

    std::filesystem::path resolve(const std::string& p) const;
    void validate(bool need_log, bool need_graph) const;
};

struct PreparedLog {
    EventLog train;  // terminated
    EventLog test;   // terminated, training vocabulary
    std::size_t dropped_unseen = 0;
};

PreparedLog prepare_log(const RunConfig& cfg);

struct Artifacts {
    MultiTaskModel model;
    SuffixIndex index;
    Threshold threshold;
    nlohmann::json stats;

    const ActivityVocabulary& vocabulary() const { return model.vocabulary(); }
};

struct TrainOutcome {
    Artifacts artifacts;
    TrainingSummary summary;
    std::size_t train_traces = 0, test_traces = 0, dropped_unseen = 0;
};

inline constexpr const char* kModelFile = "model.ckpt.json";
inline constexpr const char* kIndexFile = "index.json";
inline constexpr const char* kVocabularyFile = "vocabulary.json";
inline constexpr const char* kStatsFile = "stats.json";

// Parse, split, train the predictor, build the index and fix the threshold.
TrainOutcome train_pipeline(const RunConfig& cfg, std::ostream* progress = nullptr);
void write_artifacts(const Artifacts& artifacts, const std::filesystem::path& dir);
// Loads and cross-checks the four artifact files (ArtifactError on mismatch).
Artifacts load_artifacts(const std::filesystem::path& dir);

// Loaded artifacts + graph + adapters, shared read-only by callers.
class Engine {
public:
    Engine(Artifacts artifacts, DcrGraph graph, RunConfig cfg);
    Engine(const Engine&) = delete;
    Engine& operator=(const Engine&) = delete;

    static std::shared_ptr<const Engine> open(const RunConfig& cfg);

    RecommenderContext context() const { return {&predictor_, &candidates_, &graph_}; }
    Recommendation recommend(const RunningCase& running, std::optional<std::size_t> k = std::nullopt) const;
    Rollout roll_out(const RunningCase& running, std::optional<std::size_t> k = std::nullopt) const;
    EvalReport evaluate(const EventLog& test_log) const;

    const Artifacts& artifacts() const { return artifacts_; }
    const DcrGraph& graph() const { return graph_; }
    const RunConfig& config() const { return cfg_; }
    double threshold() const { return artifacts_.threshold.value; }
    const ActivityVocabulary& vocabulary() const { return artifacts_.vocabulary(); }
    nlohmann::json meta() const;

private:
    Artifacts artifacts_;
    DcrGraph graph_;
    RunConfig cfg_;
    ModelSuffixPredictor predictor_;
    IndexCandidateSource candidates_;
};

// Re-derives the test split, checks it matches the artifacts and evaluates.
EvalReport evaluate_pipeline(const RunConfig& cfg, const Engine& engine);

} // namespace nba
