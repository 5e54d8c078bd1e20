#include "nba/eventlog.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include "nba/errors.hpp"
#include "nba/hash.hpp"

namespace nba {

namespace {

std::vector<std::string> split_csv_line(const std::string& line, char delimiter, std::size_t row) {
    std::vector<std::string> fields;
    std::string field;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    field.push_back('"');
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                field.push_back(c);
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == delimiter) {
            fields.push_back(std::move(field));
            field.clear();
        } else {
            field.push_back(c);
        }
    }
    if (quoted) throw ParseError(row, "unterminated quoted field");
    fields.push_back(std::move(field));
    return fields;
}

std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

bool read_int(std::string_view& s, std::size_t digits, int& out) {
    if (s.size() < digits) return false;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + digits, out);
    if (ec != std::errc{} || ptr != s.data() + digits) return false;
    s.remove_prefix(digits);
    return true;
}

bool expect(std::string_view& s, std::string_view any_of) {
    if (s.empty() || any_of.find(s.front()) == std::string_view::npos) return false;
    s.remove_prefix(1);
    return true;
}

void check_event(const Event& e) {
    if (e.activity.empty()) throw SchemaError("event of case '" + e.case_id + "' has an empty activity");
    if (!(e.kpi_value >= 0.0) || !std::isfinite(e.kpi_value))
        throw SchemaError("event of case '" + e.case_id + "' has a negative or non-finite KPI value");
}

// Fisher-Yates with an explicit bounded draw so results do not depend on the
// standard library's distribution implementation.
void shuffle_indices(std::vector<std::size_t>& idx, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    for (std::size_t i = idx.size(); i > 1; --i) {
        std::uint64_t bound = i;
        std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % bound;
        std::uint64_t r;
        do r = rng(); while (r >= limit);
        std::swap(idx[i - 1], idx[r % bound]);
    }
}

} // namespace

std::vector<std::string> Trace::activities() const {
    std::vector<std::string> out;
    out.reserve(events.size());
    for (const auto& e : events) out.push_back(e.activity);
    return out;
}

std::vector<double> Trace::kpi_values() const {
    std::vector<double> out;
    out.reserve(events.size());
    for (const auto& e : events) out.push_back(e.kpi_value);
    return out;
}

double Trace::total_kpi() const {
    double total = 0.0;
    for (const auto& e : events) total += e.kpi_value;
    return total;
}

// ---------------------------------------------------------------------------
// ActivityVocabulary

ActivityVocabulary::ActivityVocabulary() : ActivityVocabulary(std::vector<std::string>{}) {}

ActivityVocabulary::ActivityVocabulary(std::vector<std::string> names) : names_(std::move(names)) {
    names_.emplace_back(kEndActivity);
    for (std::size_t i = 0; i < names_.size(); ++i) {
        if (names_[i].empty()) throw VocabularyError("empty activity name");
        if (!index_.emplace(names_[i], static_cast<int>(i)).second)
            throw VocabularyError("duplicate activity '" + names_[i] + "' in vocabulary");
    }
}

ActivityVocabulary ActivityVocabulary::from_traces(std::span<const Trace> traces) {
    std::vector<std::string> names;
    std::unordered_map<std::string, bool> seen;
    for (const auto& t : traces)
        for (const auto& e : t.events)
            if (e.activity != kEndActivity && seen.emplace(e.activity, true).second) names.push_back(e.activity);
    return ActivityVocabulary(std::move(names));
}

bool ActivityVocabulary::contains(std::string_view name) const { return find(name).has_value(); }

std::optional<int> ActivityVocabulary::find(std::string_view name) const {
    auto it = index_.find(std::string(name));
    if (it == index_.end()) return std::nullopt;
    return it->second;
}

int ActivityVocabulary::index_of(std::string_view name) const {
    auto idx = find(name);
    if (!idx) throw VocabularyError("activity '" + std::string(name) + "' is not in the vocabulary");
    return *idx;
}

const std::string& ActivityVocabulary::name_of(int index) const {
    if (index < 0 || static_cast<std::size_t>(index) >= names_.size())
        throw VocabularyError("vocabulary index " + std::to_string(index) + " out of range");
    return names_[static_cast<std::size_t>(index)];
}

nlohmann::json ActivityVocabulary::to_json() const {
    nlohmann::json j = nlohmann::json::object();
    for (std::size_t i = 0; i < names_.size(); ++i) j[names_[i]] = i;
    return j;
}

ActivityVocabulary ActivityVocabulary::from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw VocabularyError("vocabulary must be a JSON object");
    std::vector<std::string> names(j.size());
    std::vector<bool> filled(j.size(), false);
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (!it.value().is_number_integer()) throw VocabularyError("vocabulary index of '" + it.key() + "' is not an integer");
        auto idx = it.value().get<long long>();
        if (idx < 0 || static_cast<std::size_t>(idx) >= names.size() || filled[static_cast<std::size_t>(idx)])
            throw VocabularyError("vocabulary indices must form a bijection onto [0, n)");
        names[static_cast<std::size_t>(idx)] = it.key();
        filled[static_cast<std::size_t>(idx)] = true;
    }
    if (names.empty() || names.back() != kEndActivity)
        throw VocabularyError("vocabulary must hold the termination symbol at the last index");
    names.pop_back();
    return ActivityVocabulary(std::move(names));
}

std::string ActivityVocabulary::hash() const {
    std::string joined;
    for (const auto& n : names_) {
        joined += n;
        joined.push_back('\x1f');
    }
    return fnv1a_hex(joined);
}

// ---------------------------------------------------------------------------
// EventLog

EventLog::EventLog(std::vector<Trace> traces, ActivityVocabulary vocabulary)
    : traces_(std::move(traces)), vocabulary_(std::move(vocabulary)) {
    std::unordered_map<std::string, bool> ids;
    for (const auto& t : traces_) {
        if (!ids.emplace(t.case_id, true).second) throw SchemaError("duplicate case id '" + t.case_id + "'");
        for (const auto& e : t.events)
            if (e.case_id != t.case_id) throw SchemaError("event case id differs from its trace '" + t.case_id + "'");
    }
}

std::size_t EventLog::event_count() const {
    std::size_t n = 0;
    for (const auto& t : traces_) n += t.size();
    return n;
}

// ---------------------------------------------------------------------------
// Parsing

KpiMode kpi_mode_from_string(std::string_view s) {
    if (s == "explicit-column") return KpiMode::explicit_column;
    if (s == "inter-event-duration") return KpiMode::inter_event_duration;
    throw ConfigError("unknown KPI mode '" + std::string(s) + "' (expected explicit-column or inter-event-duration)");
}

std::string_view to_string(KpiMode mode) {
    return mode == KpiMode::explicit_column ? "explicit-column" : "inter-event-duration";
}

Timestamp parse_timestamp(std::string_view text) {
    std::string_view s = trim(text);
    const std::string original(s);
    int y = 0, mo = 0, d = 0, h = 0, mi = 0, sec = 0;
    auto fail = [&] { return std::invalid_argument("malformed timestamp '" + original + "'"); };
    if (!read_int(s, 4, y) || !expect(s, "-/") || !read_int(s, 2, mo) || !expect(s, "-/") || !read_int(s, 2, d))
        throw fail();
    if (!s.empty()) {
        if (!expect(s, "T ") || !read_int(s, 2, h) || !expect(s, ":") || !read_int(s, 2, mi)) throw fail();
        if (!s.empty() && s.front() == ':') {
            s.remove_prefix(1);
            if (!read_int(s, 2, sec)) throw fail();
        }
        if (!s.empty() && (s.front() == '.' || s.front() == ',')) {
            s.remove_prefix(1);
            while (!s.empty() && s.front() >= '0' && s.front() <= '9') s.remove_prefix(1);
        }
    }
    int offset_minutes = 0;
    if (!s.empty()) {
        if (s == "Z") {
            s.remove_prefix(1);
        } else if (s.front() == '+' || s.front() == '-') {
            int sign = s.front() == '-' ? -1 : 1;
            s.remove_prefix(1);
            int oh = 0, om = 0;
            if (!read_int(s, 2, oh)) throw fail();
            if (!s.empty() && s.front() == ':') s.remove_prefix(1);
            if (!s.empty() && !read_int(s, 2, om)) throw fail();
            offset_minutes = sign * (oh * 60 + om);
        }
    }
    if (!s.empty()) throw fail();
    std::chrono::year_month_day ymd{std::chrono::year{y}, std::chrono::month{static_cast<unsigned>(mo)},
                                    std::chrono::day{static_cast<unsigned>(d)}};
    if (!ymd.ok() || h > 23 || mi > 59 || sec > 60) throw fail();
    return std::chrono::sys_days{ymd} + std::chrono::hours{h} + std::chrono::minutes{mi} + std::chrono::seconds{sec} -
           std::chrono::minutes{offset_minutes};
}

std::string format_timestamp(Timestamp ts) {
    auto day = std::chrono::floor<std::chrono::days>(ts);
    std::chrono::year_month_day ymd{day};
    std::chrono::hh_mm_ss hms{ts - day};
    char buf[32];
    std::snprintf(buf, sizeof buf, "%04d-%02u-%02u %02d:%02d:%02d", static_cast<int>(ymd.year()),
                  static_cast<unsigned>(ymd.month()) % 100u, static_cast<unsigned>(ymd.day()) % 100u,
                  static_cast<int>(hms.hours().count()) % 100, static_cast<int>(hms.minutes().count()) % 100,
                  static_cast<int>(hms.seconds().count()) % 100);
    return buf;
}

EventLog parse_log(const std::string& path, const CsvSchema& schema) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open event log '" + path + "'");
    return parse_log(in, schema);
}

// Row numbers are file line numbers: the header is row 1.
EventLog parse_log(std::istream& in, const CsvSchema& schema) {
    std::string line;
    if (!std::getline(in, line)) throw SchemaError("event log is empty; a header row is required");
    if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
    auto header = split_csv_line(line, schema.delimiter, 1);
    auto column = [&](const std::string& name) -> std::size_t {
        for (std::size_t i = 0; i < header.size(); ++i)
            if (trim(header[i]) == name) return i;
        throw SchemaError("missing mandatory column '" + name + "'");
    };
    const std::size_t case_col = column(schema.case_column);
    const std::size_t act_col = column(schema.activity_column);
    const std::size_t ts_col = column(schema.timestamp_column);
    std::optional<std::size_t> kpi_col;
    if (schema.kpi_column) kpi_col = column(*schema.kpi_column);

    std::vector<Trace> traces;
    std::unordered_map<std::string, std::size_t> by_case;
    std::size_t row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (trim(line).empty()) continue;
        auto fields = split_csv_line(line, schema.delimiter, row);
        if (fields.size() != header.size())
            throw ParseError(row, "expected " + std::to_string(header.size()) + " fields, found " + std::to_string(fields.size()));
        Event e;
        e.case_id = std::string(trim(fields[case_col]));
        e.activity = std::string(trim(fields[act_col]));
        if (e.case_id.empty()) throw ParseError(row, "empty case id");
        if (e.activity.empty()) throw ParseError(row, "empty activity");
        if (e.activity == kEndActivity) throw ParseError(row, "activity name '" + e.activity + "' is reserved for termination");
        try {
            e.timestamp = parse_timestamp(fields[ts_col]);
        } catch (const std::invalid_argument& ex) {
            throw ParseError(row, ex.what());
        }
        if (kpi_col) {
            auto text = trim(fields[*kpi_col]);
            double v = 0.0;
            auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
            if (text.empty() || ec != std::errc{} || ptr != text.data() + text.size())
                throw ParseError(row, "malformed KPI value '" + std::string(text) + "'");
            if (!(v >= 0.0) || !std::isfinite(v)) throw ParseError(row, "KPI value must be a non-negative number");
            e.kpi_value = v;
        }
        auto [it, inserted] = by_case.emplace(e.case_id, traces.size());
        if (inserted) traces.push_back(Trace{e.case_id, {}});
        traces[it->second].events.push_back(std::move(e));
    }
    for (auto& t : traces)
        std::stable_sort(t.events.begin(), t.events.end(),
                         [](const Event& a, const Event& b) { return *a.timestamp < *b.timestamp; });
    auto vocab = ActivityVocabulary::from_traces(traces);
    return EventLog(std::move(traces), std::move(vocab));
}

// ---------------------------------------------------------------------------
// Trace transforms

Trace derive_kpi(const Trace& trace, KpiMode mode) {
    Trace out = trace;
    if (mode == KpiMode::explicit_column) return out;
    for (std::size_t i = 0; i < out.events.size(); ++i) {
        if (i == 0 || !out.events[i].timestamp || !out.events[i - 1].timestamp) {
            out.events[i].kpi_value = 0.0;
            continue;
        }
        out.events[i].kpi_value =
            static_cast<double>((*out.events[i].timestamp - *out.events[i - 1].timestamp).count());
    }
    return out;
}

EventLog derive_kpi(const EventLog& log, KpiMode mode) {
    std::vector<Trace> traces;
    traces.reserve(log.size());
    for (const auto& t : log.traces()) traces.push_back(derive_kpi(t, mode));
    return EventLog(std::move(traces), log.vocabulary());
}

Trace append_termination(const Trace& trace) {
    if (trace.empty()) throw PreconditionError("cannot terminate the empty trace of case '" + trace.case_id + "'");
    for (const auto& e : trace.events)
        if (e.activity == kEndActivity) throw TerminationError("trace of case '" + trace.case_id + "' is already terminated");
    Trace out = trace;
    Event end;
    end.case_id = trace.case_id;
    end.activity = std::string(kEndActivity);
    end.timestamp = trace.events.back().timestamp;
    end.kpi_value = 0.0;
    out.events.push_back(std::move(end));
    return out;
}

EventLog append_termination(const EventLog& log) {
    std::vector<Trace> traces;
    traces.reserve(log.size());
    for (const auto& t : log.traces()) traces.push_back(append_termination(t));
    return EventLog(std::move(traces), log.vocabulary());
}

Trace prefix(const Trace& trace, std::size_t k) {
    if (k < 1 || k >= trace.size())
        throw BoundsError("prefix length " + std::to_string(k) + " outside [1, " + std::to_string(trace.size()) + ")");
    return Trace{trace.case_id, {trace.events.begin(), trace.events.begin() + static_cast<std::ptrdiff_t>(k)}};
}

Trace suffix(const Trace& trace, std::size_t k) {
    if (k < 1 || k >= trace.size())
        throw BoundsError("suffix offset " + std::to_string(k) + " outside [1, " + std::to_string(trace.size()) + ")");
    return Trace{trace.case_id, {trace.events.begin() + static_cast<std::ptrdiff_t>(k), trace.events.end()}};
}

// ---------------------------------------------------------------------------
// Encodings

Eigen::MatrixXd onehot_encode(std::span<const int> indices, const ActivityVocabulary& vocab) {
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(indices.size()),
                                              static_cast<Eigen::Index>(vocab.size()));
    for (std::size_t r = 0; r < indices.size(); ++r) {
        vocab.name_of(indices[r]);  // range check
        m(static_cast<Eigen::Index>(r), vocab.onehot_column(indices[r])) = 1.0;
    }
    return m;
}

Eigen::MatrixXd onehot_encode(const Trace& trace, const ActivityVocabulary& vocab) {
    std::vector<int> idx;
    idx.reserve(trace.size());
    for (const auto& e : trace.events) idx.push_back(vocab.index_of(e.activity));
    return onehot_encode(idx, vocab);
}

std::vector<int> ordinal_encode(const Trace& trace, const ActivityVocabulary& vocab) {
    std::vector<int> out;
    out.reserve(trace.size());
    for (const auto& e : trace.events) out.push_back(vocab.ordinal_of(e.activity));
    return out;
}

std::vector<std::string> onehot_decode(const Eigen::MatrixXd& matrix, const ActivityVocabulary& vocab) {
    if (matrix.cols() != static_cast<Eigen::Index>(vocab.size()))
        throw VocabularyError("one-hot width does not match the vocabulary size");
    std::vector<std::string> out;
    for (Eigen::Index r = 0; r < matrix.rows(); ++r) {
        Eigen::Index col = 0;
        matrix.row(r).maxCoeff(&col);
        out.push_back(vocab.name_of(vocab.index_of_column(static_cast<int>(col))));
    }
    return out;
}

std::vector<std::string> ordinal_decode(std::span<const int> ordinals, const ActivityVocabulary& vocab) {
    std::vector<std::string> out;
    out.reserve(ordinals.size());
    for (int o : ordinals) out.push_back(vocab.name_of_ordinal(o));
    return out;
}

Eigen::VectorXd PrefixSample::label_onehot(const ActivityVocabulary& vocab) const {
    Eigen::VectorXd v = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(vocab.size()));
    v(vocab.onehot_column(label_activity)) = 1.0;
    return v;
}

// ---------------------------------------------------------------------------
// Splitting and sampling

LogSplit split_log(const EventLog& log, double train_fraction, std::uint64_t seed) {
    if (!(train_fraction > 0.0 && train_fraction < 1.0))
        throw SplitError("train fraction must lie strictly between 0 and 1");
    if (log.size() < 2) throw SplitError("at least 2 traces are required to split a log");
    std::vector<std::size_t> order(log.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    shuffle_indices(order, seed);
    auto n_train = static_cast<std::size_t>(std::floor(static_cast<double>(log.size()) * train_fraction + 1e-9));
    n_train = std::clamp<std::size_t>(n_train, 1, log.size() - 1);

    // Keep the original log order inside each half.
    std::vector<bool> in_train(log.size(), false);
    for (std::size_t i = 0; i < n_train; ++i) in_train[order[i]] = true;
    std::vector<Trace> train, test;
    for (std::size_t i = 0; i < log.size(); ++i) (in_train[i] ? train : test).push_back(log.traces()[i]);

    auto vocab = ActivityVocabulary::from_traces(train);
    LogSplit out;
    std::vector<Trace> kept;
    for (auto& t : test) {
        bool known = std::all_of(t.events.begin(), t.events.end(), [&](const Event& e) { return vocab.contains(e.activity); });
        if (known)
            kept.push_back(std::move(t));
        else
            ++out.dropped_unseen;
    }
    out.train = EventLog(std::move(train), vocab);
    out.test = EventLog(std::move(kept), vocab);
    return out;
}

EventLog subsample_log(const EventLog& log, double fraction, std::size_t max_events, std::uint64_t seed) {
    if (!(fraction > 0.0 && fraction <= 1.0)) throw ConfigError("subsample fraction must lie in (0, 1]");
    std::vector<std::size_t> eligible;
    for (std::size_t i = 0; i < log.size(); ++i)
        if (log.traces()[i].size() <= max_events) eligible.push_back(i);
    shuffle_indices(eligible, seed);
    auto n = static_cast<std::size_t>(std::floor(static_cast<double>(eligible.size()) * fraction + 1e-9));
    eligible.resize(n);
    std::sort(eligible.begin(), eligible.end());
    std::vector<Trace> traces;
    for (auto i : eligible) traces.push_back(log.traces()[i]);
    auto vocab = ActivityVocabulary::from_traces(traces);
    return EventLog(std::move(traces), std::move(vocab));
}

std::vector<PrefixSample> build_prediction_samples(const EventLog& log) {
    const auto& vocab = log.vocabulary();
    std::vector<PrefixSample> samples;
    for (const auto& t : log.traces()) {
        if (!t.is_terminated())
            throw PreconditionError("trace of case '" + t.case_id + "' lacks a termination event");
        std::vector<int> idx;
        idx.reserve(t.size());
        for (const auto& e : t.events) {
            check_event(e);
            idx.push_back(vocab.index_of(e.activity));
        }
        for (std::size_t k = 1; k < t.size(); ++k) {
            PrefixSample s;
            s.prefix.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k));
            s.label_activity = idx[k];
            s.label_kpi = t.events[k].kpi_value;
            samples.push_back(std::move(s));
        }
    }
    return samples;
}

} // namespace nba
