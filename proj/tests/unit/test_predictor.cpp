#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "nba/errors.hpp"
#include "nba/predictor.hpp"
#include "../support/model_oracle.hpp"

namespace {

using namespace nba;
using Eigen::MatrixXd;
using Eigen::VectorXd;

using model_oracle::oracle_forward;
using model_oracle::oracle_loss;
using model_oracle::sigmoid;
using model_oracle::toy_model;
using model_oracle::toy_samples;

TEST(LstmCell, ZeroWeightsGiveZeroOutput) {
    auto w = LstmCellWeights::zeros(3, 5);
    auto s = lstm_cell_step(VectorXd::Zero(3), LstmState::zeros(5), w);
    EXPECT_TRUE(s.h.isZero());
    EXPECT_TRUE(s.c.isZero());
}

TEST(LstmCell, SingleUnitMatchesHandComputation) {
    auto w = LstmCellWeights::zeros(1, 1);
    // rows: forget, input, candidate, output
    w.input << 0.5, -0.3, 0.8, 0.1;
    w.recurrent << 0.2, 0.4, -0.6, 0.7;
    w.bias << 1.0, 0.0, 0.1, -0.2;
    const double x = 0.9, h = -0.4, c = 0.25;
    const double f = sigmoid(0.5 * x + 0.2 * h + 1.0);
    const double i = sigmoid(-0.3 * x + 0.4 * h + 0.0);
    const double g = std::tanh(0.8 * x - 0.6 * h + 0.1);
    const double o = sigmoid(0.1 * x + 0.7 * h - 0.2);
    const double c_next = f * c + i * g;
    const double h_next = o * std::tanh(c_next);
    LstmState in{VectorXd::Constant(1, h), VectorXd::Constant(1, c)};
    auto out = lstm_cell_step(VectorXd::Constant(1, x), in, w);
    EXPECT_NEAR(out.c(0), c_next, 1e-15);
    EXPECT_NEAR(out.h(0), h_next, 1e-15);
}

TEST(LstmCell, CellUpdateBoundedByGateTerms) {
    std::mt19937_64 rng(5);
    std::normal_distribution<double> n(0.0, 2.0);
    for (int trial = 0; trial < 50; ++trial) {
        auto w = LstmCellWeights::zeros(3, 4);
        for (auto* m : {&w.input, &w.recurrent, &w.bias})
            for (Eigen::Index i = 0; i < m->size(); ++i) m->data()[i] = n(rng);
        VectorXd x(3), h(4), c(4);
        for (auto* v : {&x, &h, &c})
            for (Eigen::Index i = 0; i < v->size(); ++i) (*v)(i) = n(rng);
        auto out = lstm_cell_step(x, {h, c}, w);
        VectorXd z = w.input * x + w.recurrent * h + w.bias;
        for (int j = 0; j < 4; ++j) {
            double bound = std::abs(sigmoid(z(j)) * c(j)) + std::abs(sigmoid(z(4 + j)) * std::tanh(z(8 + j)));
            EXPECT_LE(std::abs(out.c(j)), bound + 1e-12);
        }
    }
}

TEST(LstmCell, RejectsNonFiniteInput) {
    auto w = LstmCellWeights::zeros(2, 2);
    VectorXd x(2);
    x << 1.0, std::nan("");
    EXPECT_THROW(lstm_cell_step(x, LstmState::zeros(2), w), NumericError);
}

TEST(Forward, DistributionSumsToOneAndKpiNonNegative) {
    auto model = toy_model(6, 3);
    std::mt19937_64 rng(8);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<int> prefix(1 + rng() % 8);
        for (auto& v : prefix) v = static_cast<int>(rng() % 3);
        auto p = model.forward(prefix);
        EXPECT_NEAR(p.distribution.sum(), 1.0, 1e-6);
        EXPECT_TRUE((p.distribution.array() >= 0.0).all());
        EXPECT_GE(p.kpi, 0.0);
    }
}

TEST(Forward, ZeroHeadGivesUniformDistribution) {
    auto model = toy_model(4, 1);
    model.mutable_parameters().activity_head_weight.setZero();
    model.mutable_parameters().activity_head_bias.setZero();
    auto p = model.forward(std::vector<int>{0, 1});
    for (Eigen::Index i = 0; i < p.distribution.size(); ++i) EXPECT_NEAR(p.distribution(i), 1.0 / 3.0, 1e-15);
}

TEST(Forward, VocabularyPermutationPermutesOutput) {
    auto model = toy_model(5, 2);
    // New vocabulary {B, A}: index 0 <-> 1 swapped, End stays.
    ActivityVocabulary swapped({"B", "A"});
    ModelParameters p = model.parameters();
    const auto& v1 = model.vocabulary();
    for (int idx = 0; idx < 3; ++idx) {
        int new_idx = idx == 2 ? 2 : 1 - idx;
        p.shared.input.col(swapped.onehot_column(new_idx)) = model.parameters().shared.input.col(v1.onehot_column(idx));
        p.activity_head_weight.row(new_idx) = model.parameters().activity_head_weight.row(idx);
        p.activity_head_bias.row(new_idx) = model.parameters().activity_head_bias.row(idx);
    }
    MultiTaskModel permuted(swapped, model.config(), model.normalizer(), p, model.max_suffix_length());
    auto a = model.forward(std::vector<int>{0, 1, 1});
    auto b = permuted.forward(std::vector<int>{1, 0, 0});
    EXPECT_NEAR(a.distribution(0), b.distribution(1), 1e-14);
    EXPECT_NEAR(a.distribution(1), b.distribution(0), 1e-14);
    EXPECT_NEAR(a.distribution(2), b.distribution(2), 1e-14);
    EXPECT_NEAR(a.kpi, b.kpi, 1e-12);
}

TEST(Forward, IncrementalMatchesOracle) {
    auto model = toy_model(4, 9);
    std::vector<int> prefix = {0, 1, 1, 0, 2};
    auto out = oracle_forward(model, prefix);
    auto p = model.forward(prefix);
    EXPECT_LT((out.probs - p.distribution).cwiseAbs().maxCoeff(), 1e-14);
    EXPECT_NEAR(std::max(0.0, model.normalizer().denormalize(out.kpi_raw)), p.kpi, 1e-10);
}

// Analytic BPTT gradient vs central finite differences (eps = 1e-5); every
// tensor's max elementwise relative error must stay below 1e-4.
TEST(Gradient, MatchesCentralFiniteDifferences) {
    auto model = toy_model(4, 17);
    auto samples = toy_samples();
    std::vector<const PrefixSample*> batch;
    for (const auto& s : samples) batch.push_back(&s);
    const double lambda = 1.0;
    ModelParameters grad = ModelParameters::zeros_like(model.parameters());
    auto loss = batch_loss(model, batch, lambda, &grad);
    EXPECT_NEAR(loss.total, oracle_loss(model, samples, lambda), 1e-12);

    const double eps = 1e-5;
    auto params = model.mutable_parameters().tensors();
    auto grads = grad.tensors();
    for (std::size_t t = 0; t < params.size(); ++t) {
        double worst = 0.0;
        for (Eigen::Index i = 0; i < params[t]->size(); ++i) {
            double& w = params[t]->data()[i];
            const double saved = w;
            w = saved + eps;
            const double up = oracle_loss(model, samples, lambda);
            w = saved - eps;
            const double down = oracle_loss(model, samples, lambda);
            w = saved;
            const double numeric = (up - down) / (2 * eps);
            const double analytic = grads[t]->data()[i];
            const double denom = std::max({std::abs(numeric), std::abs(analytic), 1e-6});
            worst = std::max(worst, std::abs(numeric - analytic) / denom);
        }
        EXPECT_LT(worst, 1e-4) << ModelParameters::tensor_names()[t];
    }
}

TEST(Gradient, ZeroKpiWeightDecouplesKpiBranch) {
    auto model = toy_model(4, 4);
    auto samples = toy_samples();
    std::vector<const PrefixSample*> batch;
    for (const auto& s : samples) batch.push_back(&s);
    ModelParameters grad = ModelParameters::zeros_like(model.parameters());
    batch_loss(model, batch, 0.0, &grad);
    EXPECT_TRUE(grad.kpi_head_weight.isZero(0.0));
    EXPECT_TRUE(grad.kpi_head_bias.isZero(0.0));
    EXPECT_TRUE(grad.kpi_branch.input.isZero(0.0));
    EXPECT_FALSE(grad.activity_head_weight.isZero(0.0));
}

std::vector<PrefixSample> copies_of_one_trace(int copies) {
    // A B C End, vocabulary {A, B, C}
    std::vector<PrefixSample> out;
    for (int c = 0; c < copies; ++c) {
        out.push_back({{0}, 1, 3.0});
        out.push_back({{0, 1}, 2, 7.0});
        out.push_back({{0, 1, 2}, 3, 0.0});
    }
    return out;
}

TEST(Train, MemorizesDeterministicTrace) {
    auto samples = copies_of_one_trace(50);
    TrainConfig cfg;
    cfg.hidden_size = 16;
    cfg.batch_size = 16;
    cfg.epochs = 30;
    cfg.patience = 0;
    TrainingSummary summary;
    auto model = train(samples, {}, ActivityVocabulary({"A", "B", "C"}), cfg, 7, &summary);
    ASSERT_FALSE(summary.history.empty());
    EXPECT_EQ(summary.history.back().train_accuracy, 1.0);
    std::size_t hits = 0;
    for (const auto& s : samples) hits += model.forward(s).argmax() == s.label_activity;
    EXPECT_EQ(hits, samples.size());
    // joint loss decreases over the first epochs
    EXPECT_LT(summary.history[4].train_loss, summary.history[0].train_loss);
}

TEST(Train, DeterministicForFixedSeed) {
    auto samples = copies_of_one_trace(10);
    TrainConfig cfg;
    cfg.hidden_size = 8;
    cfg.batch_size = 4;
    cfg.epochs = 3;
    ActivityVocabulary vocab({"A", "B", "C"});
    auto a = train(samples, {}, vocab, cfg, 99);
    auto b = train(samples, {}, vocab, cfg, 99);
    auto ta = a.parameters().tensors();
    auto tb = b.parameters().tensors();
    for (std::size_t i = 0; i < ta.size(); ++i) EXPECT_TRUE(*ta[i] == *tb[i]) << ModelParameters::tensor_names()[i];
    EXPECT_EQ(a.max_suffix_length(), 5);  // longest prefix 3 -> longest trace 4, plus one
}

TEST(Train, DivergenceNamesTheStep) {
    auto samples = copies_of_one_trace(2);
    TrainConfig cfg;
    cfg.hidden_size = 4;
    cfg.batch_size = 2;
    cfg.epochs = 2;
    cfg.clip_norm = 0.0;
    cfg.learning_rate = 1e308;
    try {
        train(samples, {}, ActivityVocabulary({"A", "B", "C"}), cfg, 1);
        FAIL() << "expected TrainingError";
    } catch (const TrainingError& e) {
        EXPECT_NE(std::string(e.what()).find("epoch 1"), std::string::npos) << e.what();
    }
}

TEST(Train, RejectsEmptySamples) {
    EXPECT_THROW(train(std::vector<PrefixSample>{}, {}, ActivityVocabulary({"A"}), TrainConfig{}, 1), PreconditionError);
}

TEST(PredictSuffix, ImmediateTermination) {
    auto model = toy_model(4, 2);
    model.mutable_parameters().activity_head_weight.setZero();
    model.mutable_parameters().activity_head_bias.setZero();
    model.mutable_parameters().activity_head_bias(2, 0) = 5.0;  // End
    auto s = predict_suffix(model, std::vector<int>{0, 1}, 6);
    ASSERT_EQ(s.steps.size(), 1u);
    EXPECT_EQ(s.steps[0].activity, "End");
    EXPECT_FALSE(s.truncated);
}

TEST(PredictSuffix, RespectsMaxLengthAndFlagsTruncation) {
    auto model = toy_model(4, 2);
    model.mutable_parameters().activity_head_weight.setZero();
    model.mutable_parameters().activity_head_bias.setZero();
    model.mutable_parameters().activity_head_bias(0, 0) = 5.0;  // always A
    for (int max_len = 1; max_len <= 5; ++max_len) {
        auto s = predict_suffix(model, std::vector<int>{0, 1}, max_len);
        EXPECT_EQ(static_cast<int>(s.steps.size()), max_len);
        EXPECT_TRUE(s.truncated);
    }
}

TEST(PredictSuffix, EndOnlyAtTheEnd) {
    auto model = toy_model(6, 11);
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 30; ++trial) {
        std::vector<int> prefix(2 + rng() % 4);
        for (auto& v : prefix) v = static_cast<int>(rng() % 2);
        auto s = predict_suffix(model, prefix, 8);
        EXPECT_LE(s.steps.size(), 8u);
        for (std::size_t i = 0; i + 1 < s.steps.size(); ++i) EXPECT_NE(s.steps[i].activity, "End");
    }
}

TEST(PredictSuffix, RejectsShortPrefixAndKeepsInput) {
    auto model = toy_model(4, 2);
    EXPECT_THROW(predict_suffix(model, std::vector<int>{0}, 5), PreconditionError);
    Trace t{"c", {{"c", "A", std::nullopt, 1.0}, {"c", "B", std::nullopt, 2.0}}};
    const Trace copy = t;
    predict_suffix(model, t, 5);
    EXPECT_EQ(t, copy);
}

TEST(Checkpoint, RoundTripIsBitwise) {
    auto model = toy_model(5, 21);
    auto back = MultiTaskModel::from_json(nlohmann::json::parse(model.to_json().dump()));
    auto ta = model.parameters().tensors();
    auto tb = back.parameters().tensors();
    for (std::size_t i = 0; i < ta.size(); ++i) EXPECT_TRUE(*ta[i] == *tb[i]);
    std::vector<int> prefix = {0, 1, 0};
    auto pa = model.forward(prefix);
    auto pb = back.forward(prefix);
    EXPECT_TRUE(pa.distribution == pb.distribution);
    EXPECT_EQ(pa.kpi, pb.kpi);
    EXPECT_EQ(back.vocabulary(), model.vocabulary());
    EXPECT_EQ(back.normalizer(), model.normalizer());
}

TEST(Checkpoint, RejectsBadContainers) {
    auto j = toy_model(3, 1).to_json();
    auto wrong_version = j;
    wrong_version["version"] = 99;
    EXPECT_THROW(MultiTaskModel::from_json(wrong_version), ArtifactError);
    auto bad_shape = j;
    bad_shape["tensors"][0]["rows"] = 1;
    EXPECT_THROW(MultiTaskModel::from_json(bad_shape), ArtifactError);
}

} // namespace
