#include "nba/recommender.hpp"

#include <algorithm>
#include <numeric>
#include <set>

#include "nba/errors.hpp"

namespace nba {

double CandidateSuffix::total_kpi() const {
    double s = 0.0;
    for (const auto& st : steps) s += st.kpi;
    return s;
}

std::vector<std::string> CandidateSuffix::activities() const {
    std::vector<std::string> out;
    for (const auto& st : steps) out.push_back(st.activity);
    return out;
}

PredictedSuffix ModelSuffixPredictor::predict(std::span<const std::string> prefix) const {
    std::vector<int> idx;
    idx.reserve(prefix.size());
    for (const auto& a : prefix) idx.push_back(model_->vocabulary().index_of(a));
    return predict_suffix(*model_, idx, model_->max_suffix_length());
}

std::vector<CandidateSuffix> IndexCandidateSource::candidates(const PredictedSuffix& predicted, std::size_t k) const {
    const auto q = vectorize_suffix(predicted, *vocab_, index_->params());
    const std::size_t n = index_->records().size();
    std::size_t want = distinct_ ? std::min(n, 4 * k) : k;
    while (true) {
        std::vector<CandidateSuffix> out;
        std::set<std::vector<int>> seen;
        for (const auto& c : index_->query_knn(q, want)) {
            if (distinct_ && !seen.insert(c.record->activities).second) continue;
            CandidateSuffix cs;
            cs.distance = c.distance;
            for (std::size_t i = 0; i < c.record->activities.size(); ++i)
                cs.steps.push_back({vocab_->name_of_ordinal(c.record->activities[i]), c.record->kpi_values[i]});
            out.push_back(std::move(cs));
            if (out.size() == k) break;
        }
        if (out.size() == k || want >= n) return out;
        want = std::min(n, want * 2);
    }
}

Threshold derive_threshold(const EventLog& log) {
    if (log.size() == 0) throw PreconditionError("cannot derive a threshold from an empty log");
    double sum = 0.0;
    for (const auto& t : log.traces()) sum += t.total_kpi();
    return {sum / static_cast<double>(log.size()), ThresholdOrigin::derived};
}

double total_kpi(std::span<const double> prefix_kpis, std::span<const SuffixStep> suffix) {
    double s = std::accumulate(prefix_kpis.begin(), prefix_kpis.end(), 0.0);
    for (const auto& st : suffix) s += st.kpi;
    return s;
}

std::string_view to_string(DecisionPath p) {
    switch (p) {
        case DecisionPath::below_threshold_prediction: return "below-threshold-prediction";
        case DecisionPath::optimized_candidate: return "optimized-candidate";
        case DecisionPath::fallback_predicted_activity: return "fallback-predicted-activity";
        case DecisionPath::intervention: return "intervention";
    }
    return "?";
}

std::optional<double> Recommendation::action_kpi() const {
    if (!action || projected_suffix.empty()) return std::nullopt;
    return projected_suffix.front().kpi;
}

nlohmann::json Recommendation::to_json() const {
    auto steps = [](const std::vector<SuffixStep>& s) {
        nlohmann::json a = nlohmann::json::array();
        for (const auto& st : s) a.push_back({{"activity", st.activity}, {"kpi", st.kpi}});
        return a;
    };
    nlohmann::json j = {
        {"decision_path", to_string(decision_path)},
        {"action", action ? nlohmann::json(*action) : nlohmann::json(nullptr)},
        {"action_kpi", action_kpi() ? nlohmann::json(*action_kpi()) : nlohmann::json(nullptr)},
        {"projected_suffix", steps(projected_suffix)},
        {"projected_total_kpi", projected_total_kpi},
        {"predicted_suffix", steps(prediction.steps)},
        {"predicted_total_kpi", predicted_total_kpi},
        {"diagnostics", {{"retrieved", retrieved}, {"simulated_out", simulated_out}, {"prediction_truncated", prediction.truncated}}},
    };
    if (prefix_verdict)
        j["intervention"] = {{"failing_step", prefix_verdict->failing_step ? nlohmann::json(*prefix_verdict->failing_step)
                                                                           : nlohmann::json(nullptr)},
                             {"reason", prefix_verdict->reason ? to_string(*prefix_verdict->reason) : "not-enabled"},
                             {"detail", prefix_verdict->detail}};
    return j;
}

Recommendation recommend_next(const RecommenderContext& ctx, const RunningCase& running, std::size_t k, double t,
                              GateMode gate) {
    if (!ctx.predictor || !ctx.candidates || !ctx.graph) throw PreconditionError("recommender context is incomplete");
    if (running.is_terminated()) throw StateError("case '" + running.trace.case_id + "' has already terminated");
    if (running.trace.size() < 2)
        throw PreconditionError("a recommendation needs a prefix of at least 2 events, got " +
                                std::to_string(running.trace.size()));

    const auto prefix = running.activities();
    const auto prefix_kpis = running.trace.kpi_values();
    Recommendation rec;
    rec.prediction = ctx.predictor->predict(prefix);
    if (rec.prediction.steps.empty()) throw PreconditionError("predictor returned an empty suffix");
    rec.predicted_total_kpi = total_kpi(prefix_kpis, rec.prediction.steps);

    auto use_prediction = [&](DecisionPath path) {
        rec.decision_path = path;
        rec.action = rec.prediction.steps.front().activity;
        rec.projected_suffix = rec.prediction.steps;
        rec.projected_total_kpi = rec.predicted_total_kpi;
        return rec;
    };

    const bool below = gate == GateMode::force_prediction || (gate == GateMode::check && rec.predicted_total_kpi <= t);
    if (below) return use_prediction(DecisionPath::below_threshold_prediction);

    const auto replayed = ctx.graph->replay(prefix);
    if (!replayed.verdict.conformant) {
        rec.decision_path = DecisionPath::intervention;
        rec.prefix_verdict = replayed.verdict;
        rec.projected_total_kpi = running.total_kpi();
        return rec;
    }

    auto cands = ctx.candidates->candidates(rec.prediction, k);
    rec.retrieved = cands.size();
    const double prefix_total = std::accumulate(prefix_kpis.begin(), prefix_kpis.end(), 0.0);
    std::vector<std::pair<double, std::size_t>> ranked;
    for (std::size_t i = 0; i < cands.size(); ++i) ranked.emplace_back(prefix_total + cands[i].total_kpi(), i);
    std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.first < b.first; });

    for (const auto& [total, i] : ranked) {
        const auto& c = cands[i];
        if (c.steps.empty() || !ctx.graph->simulate_suffix(replayed.marking, c.activities()).conformant) {
            ++rec.simulated_out;
            continue;
        }
        rec.decision_path = DecisionPath::optimized_candidate;
        rec.action = c.steps.front().activity;
        rec.projected_suffix = c.steps;
        rec.projected_total_kpi = total;
        return rec;
    }
    return use_prediction(DecisionPath::fallback_predicted_activity);
}

RunningCase apply_action(const RunningCase& running, const Recommendation& rec) {
    if (running.is_terminated()) throw StateError("case '" + running.trace.case_id + "' has already terminated");
    if (!rec.action || rec.projected_suffix.empty()) throw PreconditionError("recommendation carries no action");
    RunningCase out = running;
    out.trace.events.push_back({running.trace.case_id, *rec.action, std::nullopt, rec.projected_suffix.front().kpi});
    return out;
}

Rollout roll_out(const RecommenderContext& ctx, const RunningCase& running, const RolloutOptions& options) {
    if (running.is_terminated()) throw StateError("case '" + running.trace.case_id + "' has already terminated");
    const std::size_t max_steps = options.max_steps ? options.max_steps : ctx.predictor->max_suffix_length();
    Rollout r;
    r.completed = running;
    GateMode gate = GateMode::check;
    while (!r.completed.is_terminated()) {
        if (r.steps.size() >= max_steps) {
            r.truncated = true;
            break;
        }
        auto rec = recommend_next(ctx, r.completed, options.k, options.threshold, gate);
        if (options.check_threshold_once && r.steps.empty())
            gate = rec.decision_path == DecisionPath::below_threshold_prediction ? GateMode::force_prediction
                                                                                : GateMode::force_optimization;
        if (rec.decision_path == DecisionPath::intervention) {
            r.intervention = true;
            r.steps.push_back(std::move(rec));
            break;
        }
        r.completed = apply_action(r.completed, rec);
        r.steps.push_back(std::move(rec));
    }
    return r;
}

} // namespace nba
