#pragma once

// Test-only LSTM forward pass and loss written directly from the gate
// equations, sharing no code with the training path, plus a small fixture.

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "nba/predictor.hpp"

namespace model_oracle {

using namespace nba;
using Eigen::MatrixXd;
using Eigen::VectorXd;

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

struct OracleOutput {
    VectorXd probs;
    double kpi_raw;
};

inline OracleOutput oracle_forward(const MultiTaskModel& model, const std::vector<int>& prefix) {
    const auto& p = model.parameters();
    const auto& vocab = model.vocabulary();
    auto cell = [](const LstmCellWeights& w, const VectorXd& x, VectorXd& h, VectorXd& c) {
        const auto H = w.hidden();
        VectorXd z = w.input * x + w.recurrent * h + w.bias.col(0);
        VectorXd next_c(H), next_h(H);
        for (Eigen::Index j = 0; j < H; ++j) {
            double f = sigmoid(z(j)), i = sigmoid(z(H + j)), g = std::tanh(z(2 * H + j)), o = sigmoid(z(3 * H + j));
            next_c(j) = f * c(j) + i * g;
            next_h(j) = o * std::tanh(next_c(j));
        }
        h = next_h;
        c = next_c;
    };
    const auto H1 = p.shared.hidden();
    VectorXd h1 = VectorXd::Zero(H1), c1 = VectorXd::Zero(H1);
    VectorXd ha = VectorXd::Zero(p.activity_branch.hidden()), ca = ha;
    VectorXd hk = VectorXd::Zero(p.kpi_branch.hidden()), ck = hk;
    for (int idx : prefix) {
        VectorXd x = VectorXd::Zero(static_cast<Eigen::Index>(vocab.size()));
        x(vocab.onehot_column(idx)) = 1.0;
        cell(p.shared, x, h1, c1);
        cell(p.activity_branch, h1, ha, ca);
        cell(p.kpi_branch, h1, hk, ck);
    }
    VectorXd logits = p.activity_head_weight * ha + p.activity_head_bias.col(0);
    VectorXd e = (logits.array() - logits.maxCoeff()).exp().matrix();
    return {e / e.sum(), (p.kpi_head_weight * hk)(0) + p.kpi_head_bias(0, 0)};
}

inline double oracle_loss(const MultiTaskModel& model, const std::vector<PrefixSample>& batch, double lambda) {
    double total = 0.0;
    for (const auto& s : batch) {
        auto out = oracle_forward(model, s.prefix);
        double target = model.normalizer().normalize(s.label_kpi);
        total += -std::log(out.probs(s.label_activity)) + lambda * (out.kpi_raw - target) * (out.kpi_raw - target);
    }
    return total / static_cast<double>(batch.size());
}

inline std::vector<PrefixSample> toy_samples() {
    // vocabulary: A=0, B=1, End=2
    return {
        {{0}, 1, 10.0}, {{0, 1}, 0, 20.0}, {{0, 1, 0}, 2, 0.0}, {{1}, 1, 5.0}, {{1, 1}, 2, 0.0}, {{0, 0, 1, 1}, 0, 40.0},
    };
}

inline MultiTaskModel toy_model(int hidden, std::uint64_t seed) {
    TrainConfig cfg;
    cfg.hidden_size = hidden;
    cfg.max_suffix_length = 6;
    auto m = MultiTaskModel::initialize(ActivityVocabulary({"A", "B"}), cfg, KpiNormalizer{15.0, 12.0}, seed);
    // Perturb biases and heads away from their structured init so every tensor
    // carries a non-trivial gradient.
    std::mt19937_64 rng(seed + 1);
    std::uniform_real_distribution<double> u(-0.5, 0.5);
    for (auto* t : m.mutable_parameters().tensors())
        for (Eigen::Index i = 0; i < t->size(); ++i) t->data()[i] += u(rng);
    return m;
}

} // namespace model_oracle
