#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "nba/candidate_index.hpp"
#include "nba/dcr.hpp"
#include "nba/eventlog.hpp"
#include "nba/predictor.hpp"

namespace nba {

// Completes a running prefix with predicted (activity, kpi) steps.
class SuffixPredictor {
public:
    virtual ~SuffixPredictor() = default;
    virtual PredictedSuffix predict(std::span<const std::string> prefix) const = 0;
    virtual std::size_t max_suffix_length() const = 0;
};

struct CandidateSuffix {
    std::vector<SuffixStep> steps;
    double distance = 0.0;

    double total_kpi() const;
    std::vector<std::string> activities() const;
};

// Retrieves up to k historical suffixes similar to a predicted one.
class CandidateSource {
public:
    virtual ~CandidateSource() = default;
    virtual std::vector<CandidateSuffix> candidates(const PredictedSuffix& predicted, std::size_t k) const = 0;
};

class ModelSuffixPredictor final : public SuffixPredictor {
public:
    explicit ModelSuffixPredictor(const MultiTaskModel& model) : model_(&model) {}
    PredictedSuffix predict(std::span<const std::string> prefix) const override;
    std::size_t max_suffix_length() const override { return static_cast<std::size_t>(model_->max_suffix_length()); }

private:
    const MultiTaskModel* model_;
};

// With `distinct`, returns the k nearest records with pairwise different
// activity sequences (the nearest record represents its sequence).
class IndexCandidateSource final : public CandidateSource {
public:
    IndexCandidateSource(const SuffixIndex& index, const ActivityVocabulary& vocab, bool distinct = true)
        : index_(&index), vocab_(&vocab), distinct_(distinct) {}
    std::vector<CandidateSuffix> candidates(const PredictedSuffix& predicted, std::size_t k) const override;

private:
    const SuffixIndex* index_;
    const ActivityVocabulary* vocab_;
    bool distinct_;
};

enum class ThresholdOrigin { expert, derived };

struct Threshold {
    double value = 0.0;
    ThresholdOrigin origin = ThresholdOrigin::expert;
};

// Mean total KPI per trace.
Threshold derive_threshold(const EventLog& log);

double total_kpi(std::span<const double> prefix_kpis, std::span<const SuffixStep> suffix);

struct RunningCase {
    Trace trace;

    bool is_terminated() const { return trace.is_terminated(); }
    std::vector<std::string> activities() const { return trace.activities(); }
    double total_kpi() const { return trace.total_kpi(); }
};

enum class DecisionPath { below_threshold_prediction, optimized_candidate, fallback_predicted_activity, intervention };
std::string_view to_string(DecisionPath p);

struct Recommendation {
    DecisionPath decision_path = DecisionPath::below_threshold_prediction;
    std::optional<std::string> action;      // absent for interventions
    std::vector<SuffixStep> projected_suffix;
    double projected_total_kpi = 0.0;       // prefix + projected suffix
    PredictedSuffix prediction;
    double predicted_total_kpi = 0.0;       // prefix + predicted suffix
    std::size_t retrieved = 0;
    std::size_t simulated_out = 0;
    std::optional<ConformanceVerdict> prefix_verdict;  // set for interventions

    std::optional<double> action_kpi() const;
    nlohmann::json to_json() const;
};

// How the threshold test is applied at one step.
enum class GateMode { check, force_prediction, force_optimization };

struct RecommenderContext {
    const SuffixPredictor* predictor = nullptr;
    const CandidateSource* candidates = nullptr;
    const DcrGraph* graph = nullptr;
};

Recommendation recommend_next(const RecommenderContext& ctx, const RunningCase& running, std::size_t k, double t,
                              GateMode gate = GateMode::check);

// Appends the action with the KPI of the projected first step and no timestamp.
RunningCase apply_action(const RunningCase& running, const Recommendation& rec);

struct RolloutOptions {
    std::size_t k = 10;
    double threshold = 0.0;
    std::size_t max_steps = 0;   // 0: predictor's maximum suffix length
    bool check_threshold_once = false;
};

struct Rollout {
    RunningCase completed;
    std::vector<Recommendation> steps;
    bool truncated = false;
    bool intervention = false;
};

Rollout roll_out(const RecommenderContext& ctx, const RunningCase& running, const RolloutOptions& options);

} // namespace nba
