#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "nba/eventlog.hpp"
#include "nba/kpi.hpp"

namespace nba {

enum class Gate { forget = 0, input = 1, candidate = 2, output = 3 };

// Weights of one LSTM cell. The four gates are stacked row-wise in the order
// forget, input, candidate, output.
struct LstmCellWeights {
    Eigen::MatrixXd input;      // 4H x F
    Eigen::MatrixXd recurrent;  // 4H x H
    Eigen::MatrixXd bias;       // 4H x 1

    static LstmCellWeights zeros(Eigen::Index features, Eigen::Index hidden);

    Eigen::Index hidden() const { return recurrent.cols(); }
    Eigen::Index features() const { return input.cols(); }

    auto input_gate(Gate g) { return input.middleRows(static_cast<Eigen::Index>(g) * hidden(), hidden()); }
    auto recurrent_gate(Gate g) { return recurrent.middleRows(static_cast<Eigen::Index>(g) * hidden(), hidden()); }
    auto bias_gate(Gate g) { return bias.middleRows(static_cast<Eigen::Index>(g) * hidden(), hidden()); }
};

struct LstmState {
    Eigen::VectorXd h;
    Eigen::VectorXd c;

    static LstmState zeros(Eigen::Index hidden) {
        return {Eigen::VectorXd::Zero(hidden), Eigen::VectorXd::Zero(hidden)};
    }
};

// f,i,o = logistic(Wx + Uh + b); g = tanh(Wx + Uh + b);
// c' = f*c + i*g; h' = o*tanh(c'). Throws NumericError on non-finite input.
LstmState lstm_cell_step(const Eigen::VectorXd& x, const LstmState& state, const LstmCellWeights& w);

struct TrainConfig {
    int hidden_size = 100;
    int batch_size = 256;
    int epochs = 100;
    double learning_rate = 0.002;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-7;
    double schedule_decay = 0.004;
    double clip_norm = 5.0;  // <= 0 disables clipping
    int patience = 10;       // <= 0 disables early stopping
    double validation_fraction = 0.1;
    double kpi_loss_weight = 1.0;  // lambda in CE + lambda * MSE
    int max_suffix_length = 0;     // 0: longest training trace + 1

    void validate() const;
    nlohmann::json to_json() const;
    static TrainConfig from_json(const nlohmann::json& j);
};

// All trainable tensors of the multi-task network.
struct ModelParameters {
    LstmCellWeights shared;
    LstmCellWeights activity_branch;
    LstmCellWeights kpi_branch;
    Eigen::MatrixXd activity_head_weight;  // |A| x H, row i = vocabulary index i
    Eigen::MatrixXd activity_head_bias;    // |A| x 1
    Eigen::MatrixXd kpi_head_weight;       // 1 x H
    Eigen::MatrixXd kpi_head_bias;         // 1 x 1

    static constexpr std::size_t kTensorCount = 13;
    static const std::array<const char*, kTensorCount>& tensor_names();
    std::array<Eigen::MatrixXd*, kTensorCount> tensors();
    std::array<const Eigen::MatrixXd*, kTensorCount> tensors() const;

    static ModelParameters zeros_like(const ModelParameters& p);
    bool all_finite() const;
};

struct Prediction {
    Eigen::VectorXd distribution;  // over vocabulary indices
    double kpi = 0.0;              // original units, clamped at 0

    int argmax() const;
};

struct SuffixStep {
    std::string activity;
    double kpi = 0.0;

    bool operator==(const SuffixStep&) const = default;
};

struct PredictedSuffix {
    std::vector<SuffixStep> steps;
    bool truncated = false;

    double total_kpi() const;
    std::vector<std::string> activities() const;
};

struct EpochStats {
    int epoch = 0;
    double train_loss = 0.0;
    double train_accuracy = 0.0;
    double validation_loss = 0.0;
};

struct TrainingSummary {
    std::vector<EpochStats> history;
    int best_epoch = 0;
    std::size_t sample_count = 0;
    std::size_t validation_count = 0;
};

class MultiTaskModel {
public:
    // Incremental forward state after consuming a prefix.
    struct State {
        LstmState shared, activity, kpi;
        std::size_t length = 0;
    };

    MultiTaskModel(ActivityVocabulary vocab, TrainConfig config, KpiNormalizer normalizer, ModelParameters params,
                   int max_suffix_length);

    // Keras-style initialization: Glorot-uniform input kernels, orthogonal
    // recurrent kernels, unit forget-gate bias.
    static MultiTaskModel initialize(const ActivityVocabulary& vocab, const TrainConfig& config,
                                     const KpiNormalizer& normalizer, std::uint64_t seed);

    State begin() const;
    void advance(State& state, int activity_index) const;
    Prediction predict(const State& state) const;

    Prediction forward(std::span<const int> prefix) const;
    Prediction forward(const PrefixSample& sample) const { return forward(sample.prefix); }

    const ActivityVocabulary& vocabulary() const { return vocab_; }
    const TrainConfig& config() const { return config_; }
    const KpiNormalizer& normalizer() const { return normalizer_; }
    const ModelParameters& parameters() const { return params_; }
    ModelParameters& mutable_parameters() { return params_; }
    int max_suffix_length() const { return max_suffix_length_; }

    nlohmann::json to_json() const;
    static MultiTaskModel from_json(const nlohmann::json& j);
    void save(const std::string& path) const;
    static MultiTaskModel load(const std::string& path);

private:
    ActivityVocabulary vocab_;
    TrainConfig config_;
    KpiNormalizer normalizer_;
    ModelParameters params_;
    int max_suffix_length_;
};

struct LossBreakdown {
    double total = 0.0;
    double cross_entropy = 0.0;
    double squared_error = 0.0;
    std::size_t correct = 0;  // argmax hits
};

// Mean joint loss CE + lambda * MSE over `batch` (KPI labels normalized with
// the model's statistics), and its exact gradient via BPTT when `grad` is set.
LossBreakdown batch_loss(const MultiTaskModel& model, std::span<const PrefixSample* const> batch,
                         double kpi_loss_weight, ModelParameters* grad);

// Trains with Nadam on mini-batches; validation samples drive early stopping
// and best-weight restoration. Deterministic for a fixed seed.
MultiTaskModel train(std::span<const PrefixSample> samples, std::span<const PrefixSample> validation,
                     const ActivityVocabulary& vocab, const TrainConfig& config, std::uint64_t seed,
                     TrainingSummary* summary = nullptr);

// Splits the (terminated) log's traces into fit/validation parts by
// config.validation_fraction, then trains.
MultiTaskModel train(const EventLog& terminated_log, const TrainConfig& config, std::uint64_t seed,
                     TrainingSummary* summary = nullptr);

// Greedy roll-out until END or `max_len` steps. Prefixes of length <= 1 are
// rejected with PreconditionError.
PredictedSuffix predict_suffix(const MultiTaskModel& model, std::span<const int> prefix, int max_len);
PredictedSuffix predict_suffix(const MultiTaskModel& model, const Trace& prefix, int max_len);

} // namespace nba
