#pragma once

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "nba/eventlog.hpp"
#include "nba/recommender.hpp"

namespace nba {

// Optimal-string-alignment distance: insertions, deletions, substitutions and
// transpositions of adjacent symbols, no substring edited twice.
std::size_t damerau_levenshtein(std::span<const std::string> a, std::span<const std::string> b);

// Percentage of totals <= t (or < t when the boundary is not in time).
// Absent for an empty set.
std::optional<double> in_time_rate(std::span<const double> totals, double t, bool boundary_in_time = true);

struct EvalConfig {
    std::vector<std::size_t> k_values = {5, 10, 15};
    std::size_t min_prefix = 2;
    std::size_t max_prefix = 12;
    double threshold = 0.0;
    bool boundary_in_time = true;
    bool check_threshold_once = false;
    std::size_t max_steps = 0;  // 0: predictor's maximum suffix length
    std::size_t workers = 1;

    void validate() const;
};

inline constexpr const char* kBaselineMethod = "baseline";
inline constexpr const char* kRecommenderMethod = "nba";

// One evaluated (trace, prefix size, method) combination.
struct InstanceResult {
    std::size_t trace_index = 0;
    std::string case_id;
    std::size_t prefix_size = 0;
    std::string method;
    std::optional<std::size_t> k;
    std::vector<std::string> completion;  // continuation after the prefix, END excluded
    double total_kpi = 0.0;
    std::size_t dl = 0;
    double dl_normalized = 0.0;
    bool in_time = false;
    double predicted_total_kpi = 0.0;  // prefix + first predicted suffix
    // recommender only
    std::size_t steps = 0;
    std::size_t optimized_steps = 0;
    std::size_t step_violations = 0;  // optimized first steps not enabled after the prefix
    bool all_below_threshold = false;
    bool all_optimized = false;
    bool completion_conformant = false;  // replay of prefix + completion, accepting at END
    bool intervention = false;
    bool fallback = false;
    bool truncated = false;
};

struct EvalCell {
    std::string method;
    std::optional<std::size_t> k;
    std::size_t prefix_size = 0;
    std::optional<double> in_time_rate;
    std::optional<double> mean_dl;
    std::optional<double> mean_dl_normalized;
    std::size_t n = 0;

    bool operator==(const EvalCell&) const = default;
};

struct EvalDiagnostics {
    std::size_t recommender_instances = 0;
    std::size_t optimized_steps = 0;
    std::size_t optimized_step_violations = 0;
    std::size_t interventions = 0;
    std::size_t fallback_instances = 0;
    std::size_t truncated_instances = 0;
    std::size_t all_optimized_instances = 0;
    std::size_t all_optimized_nonconformant = 0;
};

struct EvalReport {
    std::vector<EvalCell> cells;
    std::vector<InstanceResult> instances;
    EvalDiagnostics diagnostics;
    nlohmann::json metadata = nlohmann::json::object();

    nlohmann::json to_json(bool with_instances = false) const;
};

// Cells for every (method, k, prefix size), baseline first at each size.
EvalReport evaluate(const EventLog& test_log, const RecommenderContext& ctx, const EvalConfig& config);

// Aggregates instance rows into cells in the given grid order.
std::vector<EvalCell> aggregate(std::span<const InstanceResult> instances, const EvalConfig& config);

// CSV columns: method,k,prefix_size,in_time_rate,mean_dl,n
void write_csv(std::ostream& out, std::span<const EvalCell> cells);
std::vector<EvalCell> read_csv(std::istream& in);
void export_report(const EvalReport& report, const std::string& directory, const std::string& stem = "report");

} // namespace nba
