#pragma once

#include <chrono>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

namespace nba {

using Timestamp = std::chrono::sys_seconds;

// Name of the termination activity appended to every training trace.
inline constexpr std::string_view kEndActivity = "End";

struct Event {
    std::string case_id;
    std::string activity;
    // Recommended (not yet observed) events carry no timestamp.
    std::optional<Timestamp> timestamp;
    double kpi_value = 0.0;

    bool operator==(const Event&) const = default;
};

struct Trace {
    std::string case_id;
    std::vector<Event> events;

    std::size_t size() const { return events.size(); }
    bool empty() const { return events.empty(); }
    bool is_terminated() const { return !events.empty() && events.back().activity == kEndActivity; }
    std::vector<std::string> activities() const;
    std::vector<double> kpi_values() const;
    double total_kpi() const;

    bool operator==(const Trace&) const = default;
};

// Bijection activity name <-> dense index in [0, size()). The termination
// symbol always owns the last index. Ordinals are index + 1 so that 0 stays
// free as padding.
class ActivityVocabulary {
public:
    ActivityVocabulary();
    // `names` in index order, without the termination symbol.
    explicit ActivityVocabulary(std::vector<std::string> names);

    // Activities in order of first appearance across `traces`.
    static ActivityVocabulary from_traces(std::span<const Trace> traces);

    std::size_t size() const { return names_.size(); }
    bool contains(std::string_view name) const;
    std::optional<int> find(std::string_view name) const;
    int index_of(std::string_view name) const;  // throws VocabularyError
    const std::string& name_of(int index) const;
    int end_index() const { return static_cast<int>(names_.size()) - 1; }

    int ordinal_of(std::string_view name) const { return index_of(name) + 1; }
    const std::string& name_of_ordinal(int ordinal) const { return name_of(ordinal - 1); }

    // One-hot column for an index. Columns run in reverse index order, so
    // the first activity of the vocabulary sets the last column.
    int onehot_column(int index) const { return static_cast<int>(names_.size()) - 1 - index; }
    int index_of_column(int column) const { return static_cast<int>(names_.size()) - 1 - column; }

    const std::vector<std::string>& names() const { return names_; }

    nlohmann::json to_json() const;
    static ActivityVocabulary from_json(const nlohmann::json& j);
    std::string hash() const;

    bool operator==(const ActivityVocabulary& other) const { return names_ == other.names_; }

private:
    std::vector<std::string> names_;
    std::unordered_map<std::string, int> index_;
};

class EventLog {
public:
    EventLog() = default;
    // Throws SchemaError on duplicate case ids.
    EventLog(std::vector<Trace> traces, ActivityVocabulary vocabulary);

    const std::vector<Trace>& traces() const { return traces_; }
    const ActivityVocabulary& vocabulary() const { return vocabulary_; }
    std::size_t size() const { return traces_.size(); }
    bool empty() const { return traces_.empty(); }
    std::size_t event_count() const;

private:
    std::vector<Trace> traces_;
    ActivityVocabulary vocabulary_;
};

struct CsvSchema {
    std::string case_column = "case_id";
    std::string activity_column = "activity";
    std::string timestamp_column = "timestamp";
    std::optional<std::string> kpi_column;
    char delimiter = ',';
};

enum class KpiMode { explicit_column, inter_event_duration };

KpiMode kpi_mode_from_string(std::string_view s);
std::string_view to_string(KpiMode mode);

// Accepts "YYYY-MM-DD HH:MM:SS" with '-' or '/' date separators, optional 'T',
// optional fractional seconds (truncated) and an optional 'Z' or +HH:MM offset.
Timestamp parse_timestamp(std::string_view text);
std::string format_timestamp(Timestamp ts);

EventLog parse_log(const std::string& path, const CsvSchema& schema);
EventLog parse_log(std::istream& in, const CsvSchema& schema);

Trace derive_kpi(const Trace& trace, KpiMode mode);
EventLog derive_kpi(const EventLog& log, KpiMode mode);

// Appends the termination event. Throws TerminationError if one is present.
Trace append_termination(const Trace& trace);
EventLog append_termination(const EventLog& log);

// hd^k and tl^k, 1 <= k < |trace|; BoundsError otherwise.
Trace prefix(const Trace& trace, std::size_t k);
Trace suffix(const Trace& trace, std::size_t k);

Eigen::MatrixXd onehot_encode(const Trace& trace, const ActivityVocabulary& vocab);
Eigen::MatrixXd onehot_encode(std::span<const int> indices, const ActivityVocabulary& vocab);
std::vector<int> ordinal_encode(const Trace& trace, const ActivityVocabulary& vocab);
std::vector<std::string> onehot_decode(const Eigen::MatrixXd& matrix, const ActivityVocabulary& vocab);
std::vector<std::string> ordinal_decode(std::span<const int> ordinals, const ActivityVocabulary& vocab);

struct LogSplit {
    EventLog train;
    EventLog test;
    // Test traces dropped because they contain activities unseen in training.
    std::size_t dropped_unseen = 0;
};

// Case-level random split; the vocabulary of both halves is built from the
// training part only.
LogSplit split_log(const EventLog& log, double train_fraction, std::uint64_t seed);

// Keeps traces with at most `max_events` events, then a random `fraction` of them.
EventLog subsample_log(const EventLog& log, double fraction, std::size_t max_events, std::uint64_t seed);

struct PrefixSample {
    std::vector<int> prefix;  // vocabulary indices of hd^k
    int label_activity = 0;
    double label_kpi = 0.0;

    Eigen::MatrixXd encoded(const ActivityVocabulary& vocab) const { return onehot_encode(prefix, vocab); }
    Eigen::VectorXd label_onehot(const ActivityVocabulary& vocab) const;
};

// One sample per prefix length k in [1, n-1] of every (terminated) trace.
std::vector<PrefixSample> build_prediction_samples(const EventLog& log);

} // namespace nba
