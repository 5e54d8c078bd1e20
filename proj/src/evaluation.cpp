#include "nba/evaluation.hpp"

#include <algorithm>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <thread>

#include "nba/errors.hpp"

namespace nba {

std::size_t damerau_levenshtein(std::span<const std::string> a, std::span<const std::string> b) {
    const std::size_t n = a.size(), m = b.size();
    std::vector<std::vector<std::size_t>> d(n + 1, std::vector<std::size_t>(m + 1));
    for (std::size_t i = 0; i <= n; ++i) d[i][0] = i;
    for (std::size_t j = 0; j <= m; ++j) d[0][j] = j;
    for (std::size_t i = 1; i <= n; ++i) {
        for (std::size_t j = 1; j <= m; ++j) {
            const std::size_t cost = a[i - 1] == b[j - 1] ? 0 : 1;
            d[i][j] = std::min({d[i - 1][j] + 1, d[i][j - 1] + 1, d[i - 1][j - 1] + cost});
            if (i > 1 && j > 1 && a[i - 1] == b[j - 2] && a[i - 2] == b[j - 1])
                d[i][j] = std::min(d[i][j], d[i - 2][j - 2] + 1);
        }
    }
    return d[n][m];
}

std::optional<double> in_time_rate(std::span<const double> totals, double t, bool boundary_in_time) {
    if (totals.empty()) return std::nullopt;
    std::size_t hits = 0;
    for (double v : totals) hits += boundary_in_time ? v <= t : v < t;
    return 100.0 * static_cast<double>(hits) / static_cast<double>(totals.size());
}

void EvalConfig::validate() const {
    if (k_values.empty()) throw ConfigError("at least one k value is required");
    for (auto k : k_values)
        if (k == 0) throw ConfigError("k values must be >= 1");
    if (min_prefix < 2) throw ConfigError("prefix sizes start at 2 or more");
    if (max_prefix < min_prefix) throw ConfigError("prefix size range is empty");
    if (!(threshold > 0)) throw ConfigError("threshold must be > 0");
}

namespace {

std::vector<std::string> without_end(std::vector<std::string> acts) {
    std::erase(acts, std::string(kEndActivity));
    return acts;
}

double normalized(std::size_t dl, std::size_t la, std::size_t lb) {
    const auto len = std::max(la, lb);
    return len == 0 ? 0.0 : static_cast<double>(dl) / static_cast<double>(len);
}

void score(InstanceResult& r, const std::vector<std::string>& truth, double t, bool boundary) {
    r.dl = damerau_levenshtein(r.completion, truth);
    r.dl_normalized = normalized(r.dl, r.completion.size(), truth.size());
    r.in_time = boundary ? r.total_kpi <= t : r.total_kpi < t;
}

std::vector<InstanceResult> evaluate_trace(const Trace& full, std::size_t trace_index, const RecommenderContext& ctx,
                                           const EvalConfig& cfg) {
    Trace raw = full;
    if (raw.is_terminated()) raw.events.pop_back();
    std::vector<InstanceResult> out;
    const auto& graph = *ctx.graph;
    for (std::size_t p = cfg.min_prefix; p <= cfg.max_prefix && p < raw.size(); ++p) {
        RunningCase running{prefix(raw, p)};
        const auto prefix_acts = running.activities();
        const auto prefix_kpis = running.trace.kpi_values();
        std::vector<std::string> truth;
        for (std::size_t i = p; i < raw.size(); ++i) truth.push_back(raw.events[i].activity);

        InstanceResult base;
        base.trace_index = trace_index;
        base.case_id = raw.case_id;
        base.prefix_size = p;
        base.method = kBaselineMethod;
        const auto predicted = ctx.predictor->predict(prefix_acts);
        base.completion = without_end(predicted.activities());
        base.total_kpi = total_kpi(prefix_kpis, predicted.steps);
        base.predicted_total_kpi = base.total_kpi;
        base.truncated = predicted.truncated;
        score(base, truth, cfg.threshold, cfg.boundary_in_time);
        out.push_back(base);

        for (auto k : cfg.k_values) {
            InstanceResult r = base;
            r.method = kRecommenderMethod;
            r.k = k;
            const auto roll = roll_out(ctx, running, {k, cfg.threshold, cfg.max_steps, cfg.check_threshold_once});
            std::vector<SuffixStep> tail;
            for (std::size_t i = p; i < roll.completed.trace.size(); ++i)
                tail.push_back({roll.completed.trace.events[i].activity, roll.completed.trace.events[i].kpi_value});
            // an intervention halts the roll-out; the instance is completed with the prediction at that point
            if (roll.intervention) {
                const auto& rest = roll.steps.back().prediction.steps;
                tail.insert(tail.end(), rest.begin(), rest.end());
            }
            r.completion.clear();
            for (const auto& s : tail)
                if (s.activity != kEndActivity) r.completion.push_back(s.activity);
            r.total_kpi = total_kpi(prefix_kpis, tail);
            r.steps = roll.steps.size();
            r.intervention = roll.intervention;
            r.truncated = roll.truncated;
            r.all_below_threshold = !roll.steps.empty();
            r.all_optimized = !roll.steps.empty();
            RunningCase state = running;
            for (const auto& rec : roll.steps) {
                r.all_below_threshold &= rec.decision_path == DecisionPath::below_threshold_prediction;
                r.all_optimized &= rec.decision_path == DecisionPath::optimized_candidate;
                r.fallback |= rec.decision_path == DecisionPath::fallback_predicted_activity;
                if (rec.decision_path == DecisionPath::optimized_candidate) {
                    ++r.optimized_steps;
                    const auto rp = graph.replay(state.activities());
                    const auto& action = *rec.action;
                    bool ok = rp.verdict.conformant;
                    if (ok && graph.declares(action)) ok = graph.enabled(rp.marking, action);
                    if (!ok) ++r.step_violations;
                }
                if (rec.action) state = apply_action(state, rec);
            }
            r.completion_conformant = graph.replay(roll.completed.activities()).verdict.conformant;
            score(r, truth, cfg.threshold, cfg.boundary_in_time);
            out.push_back(std::move(r));
        }
    }
    return out;
}

} // namespace

std::vector<EvalCell> aggregate(std::span<const InstanceResult> instances, const EvalConfig& config) {
    struct Acc {
        std::size_t n = 0, hits = 0;
        double dl = 0.0, dl_norm = 0.0;
    };
    // key: (prefix, method order, k)
    std::map<std::tuple<std::size_t, int, std::size_t>, Acc> acc;
    for (const auto& r : instances) {
        auto& a = acc[{r.prefix_size, r.method == kBaselineMethod ? 0 : 1, r.k.value_or(0)}];
        ++a.n;
        a.hits += r.in_time;
        a.dl += static_cast<double>(r.dl);
        a.dl_norm += r.dl_normalized;
    }
    std::vector<EvalCell> cells;
    for (std::size_t p = config.min_prefix; p <= config.max_prefix; ++p) {
        auto emit = [&](const char* method, std::optional<std::size_t> k) {
            EvalCell c;
            c.method = method;
            c.k = k;
            c.prefix_size = p;
            auto it = acc.find({p, k ? 1 : 0, k.value_or(0)});
            if (it != acc.end() && it->second.n > 0) {
                const auto& a = it->second;
                const double n = static_cast<double>(a.n);
                c.n = a.n;
                c.in_time_rate = 100.0 * static_cast<double>(a.hits) / n;
                c.mean_dl = a.dl / n;
                c.mean_dl_normalized = a.dl_norm / n;
            }
            cells.push_back(std::move(c));
        };
        emit(kBaselineMethod, std::nullopt);
        for (auto k : config.k_values) emit(kRecommenderMethod, k);
    }
    return cells;
}

EvalReport evaluate(const EventLog& test_log, const RecommenderContext& ctx, const EvalConfig& config) {
    config.validate();
    if (!ctx.predictor || !ctx.candidates || !ctx.graph) throw PreconditionError("evaluation context is incomplete");
    const auto& traces = test_log.traces();
    std::vector<std::vector<InstanceResult>> per_trace(traces.size());
    const std::size_t workers = std::max<std::size_t>(1, std::min(config.workers, traces.size()));

    std::vector<std::exception_ptr> errors(workers);
    auto work = [&](std::size_t w) {
        try {
            for (std::size_t i = w; i < traces.size(); i += workers) per_trace[i] = evaluate_trace(traces[i], i, ctx, config);
        } catch (...) {
            errors[w] = std::current_exception();
        }
    };
    if (workers == 1) {
        work(0);
    } else {
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work, w);
        for (auto& th : pool) th.join();
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);

    EvalReport report;
    for (auto& v : per_trace)
        for (auto& r : v) report.instances.push_back(std::move(r));
    // an empty test split gives a header-only report
    if (!traces.empty()) report.cells = aggregate(report.instances, config);

    auto& d = report.diagnostics;
    for (const auto& r : report.instances) {
        if (r.method != kRecommenderMethod) continue;
        ++d.recommender_instances;
        d.optimized_steps += r.optimized_steps;
        d.optimized_step_violations += r.step_violations;
        d.interventions += r.intervention;
        d.fallback_instances += r.fallback;
        d.truncated_instances += r.truncated;
        if (r.all_optimized) {
            ++d.all_optimized_instances;
            d.all_optimized_nonconformant += !r.completion_conformant;
        }
    }
    report.metadata["threshold"] = config.threshold;
    report.metadata["k_values"] = config.k_values;
    report.metadata["prefix_sizes"] = {config.min_prefix, config.max_prefix};
    report.metadata["test_traces"] = traces.size();
    return report;
}

namespace {

nlohmann::json opt(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

} // namespace

nlohmann::json EvalReport::to_json(bool with_instances) const {
    nlohmann::json cells_j = nlohmann::json::array();
    for (const auto& c : cells)
        cells_j.push_back({{"method", c.method},
                           {"k", c.k ? nlohmann::json(*c.k) : nlohmann::json(nullptr)},
                           {"prefix_size", c.prefix_size},
                           {"in_time_rate", opt(c.in_time_rate)},
                           {"mean_dl", opt(c.mean_dl)},
                           {"mean_dl_normalized", opt(c.mean_dl_normalized)},
                           {"n", c.n}});
    const auto& d = diagnostics;
    nlohmann::json j = {{"metadata", metadata},
                        {"cells", cells_j},
                        {"diagnostics",
                         {{"recommender_instances", d.recommender_instances},
                          {"optimized_steps", d.optimized_steps},
                          {"optimized_step_violations", d.optimized_step_violations},
                          {"interventions", d.interventions},
                          {"fallback_instances", d.fallback_instances},
                          {"truncated_instances", d.truncated_instances},
                          {"all_optimized_instances", d.all_optimized_instances},
                          {"all_optimized_nonconformant", d.all_optimized_nonconformant}}}};
    if (with_instances) {
        nlohmann::json rows = nlohmann::json::array();
        for (const auto& r : instances)
            rows.push_back({{"case_id", r.case_id},
                            {"prefix_size", r.prefix_size},
                            {"method", r.method},
                            {"k", r.k ? nlohmann::json(*r.k) : nlohmann::json(nullptr)},
                            {"completion", r.completion},
                            {"total_kpi", r.total_kpi},
                            {"dl", r.dl},
                            {"in_time", r.in_time}});
        j["instances"] = rows;
    }
    return j;
}

void write_csv(std::ostream& out, std::span<const EvalCell> cells) {
    out << "method,k,prefix_size,in_time_rate,mean_dl,n\n";
    for (const auto& c : cells) {
        out << c.method << ',' << (c.k ? std::to_string(*c.k) : "") << ',' << c.prefix_size << ','
            << (c.in_time_rate ? fmt(*c.in_time_rate) : "") << ',' << (c.mean_dl ? fmt(*c.mean_dl) : "") << ',' << c.n
            << '\n';
    }
}

std::vector<EvalCell> read_csv(std::istream& in) {
    std::string line;
    std::size_t row = 1;
    if (!std::getline(in, line) || line != "method,k,prefix_size,in_time_rate,mean_dl,n")
        throw ParseError(row, "unexpected report header");
    std::vector<EvalCell> cells;
    while (std::getline(in, line)) {
        ++row;
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::stringstream ss(line);
        std::string field;
        while (std::getline(ss, field, ',')) f.push_back(field);
        if (!line.empty() && line.back() == ',') f.emplace_back();
        if (f.size() != 6) throw ParseError(row, "expected 6 fields, got " + std::to_string(f.size()));
        try {
            EvalCell c;
            c.method = f[0];
            if (!f[1].empty()) c.k = std::stoul(f[1]);
            c.prefix_size = std::stoul(f[2]);
            if (!f[3].empty()) c.in_time_rate = std::stod(f[3]);
            if (!f[4].empty()) c.mean_dl = std::stod(f[4]);
            c.n = std::stoul(f[5]);
            cells.push_back(std::move(c));
        } catch (const std::logic_error&) {
            throw ParseError(row, "malformed number");
        }
    }
    return cells;
}

void export_report(const EvalReport& report, const std::string& directory, const std::string& stem) {
    std::error_code ec;
    std::filesystem::create_directories(directory, ec);
    const auto base = std::filesystem::path(directory) / stem;
    std::ofstream csv(base.string() + ".csv");
    if (!csv) throw IoError("cannot write '" + base.string() + ".csv'");
    write_csv(csv, report.cells);
    std::ofstream js(base.string() + ".json");
    if (!js) throw IoError("cannot write '" + base.string() + ".json'");
    js << report.to_json().dump(2) << '\n';
    if (!csv || !js) throw IoError("write to '" + directory + "' failed");
}

} // namespace nba
