#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

namespace nba {

enum class RelationType { condition, response, include, exclude, milestone };

RelationType relation_type_from_string(std::string_view s);
std::string_view to_string(RelationType t);

struct Relation {
    RelationType type = RelationType::condition;
    std::string source;
    std::string target;

    bool operator==(const Relation&) const = default;
};

// Executed / included / pending, one flag per graph activity index.
struct Marking {
    std::vector<char> executed, included, pending;

    bool operator==(const Marking&) const = default;
};

enum class Verdict { not_enabled, not_accepting };
std::string_view to_string(Verdict v);

struct ConformanceVerdict {
    bool conformant = true;
    std::optional<std::size_t> failing_step;
    std::optional<Verdict> reason;
    std::string detail;

    static ConformanceVerdict ok() { return {}; }
    static ConformanceVerdict fail(std::size_t step, Verdict reason, std::string detail);
};

struct ReplayResult {
    Marking marking;  // state before the failing step when non-conformant
    ConformanceVerdict verdict;
};

struct DcrOptions {
    // Activities outside the graph are unconstrained unless strict.
    bool strict = false;
    // A target both excluded and included by one execution ends up included.
    bool include_wins = true;
};

class DcrGraph {
public:
    struct InitialMarking {
        std::optional<std::vector<std::string>> executed, included, pending;
    };

    DcrGraph();
    // END is declared automatically when missing.
    DcrGraph(std::vector<std::string> activities, std::vector<Relation> relations, InitialMarking initial = {},
             DcrOptions options = {});

    static DcrGraph from_json(const nlohmann::json& j, DcrOptions options = {});
    static DcrGraph load(const std::string& path, DcrOptions options = {});
    nlohmann::json to_json() const;

    const std::vector<std::string>& activities() const { return activities_; }
    const std::vector<Relation>& relations() const { return relations_; }
    const DcrOptions& options() const { return options_; }
    void set_options(DcrOptions o) { options_ = o; }
    std::size_t size() const { return activities_.size(); }
    bool declares(std::string_view activity) const;
    std::optional<std::size_t> find(std::string_view activity) const;
    std::size_t index_of(std::string_view activity) const;  // DomainError when undeclared
    std::size_t end_index() const { return end_; }

    const Marking& initial_marking() const { return initial_; }

    bool enabled(const Marking& m, std::string_view activity) const;
    bool enabled(const Marking& m, std::size_t activity) const;
    // Throws ExecutionError naming the reason when the activity is not enabled.
    Marking execute(const Marking& m, std::string_view activity) const;
    Marking execute(const Marking& m, std::size_t activity) const;
    bool is_accepting(const Marking& m) const;
    bool is_terminated(const Marking& m) const { return m.executed[end_] != 0; }

    std::vector<std::string> enabled_activities(const Marking& m) const;

    ReplayResult replay(std::span<const std::string> prefix) const;
    ConformanceVerdict simulate_suffix(const Marking& m, std::span<const std::string> suffix) const;

    nlohmann::json marking_to_json(const Marking& m) const;

private:
    struct Adjacency {
        std::vector<std::size_t> conditions_in, milestones_in;  // sources
        std::vector<std::size_t> responses, includes, excludes; // targets
    };

    std::string why_not_enabled(const Marking& m, std::size_t a) const;
    Marking apply(const Marking& m, std::size_t a) const;

    std::vector<std::string> activities_;
    std::unordered_map<std::string, std::size_t> lookup_;
    std::vector<Relation> relations_;
    std::vector<Adjacency> adj_;
    Marking initial_;
    std::size_t end_ = 0;
    DcrOptions options_;
};

} // namespace nba
