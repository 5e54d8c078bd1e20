#include "nba/predictor.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>

#include "nba/errors.hpp"

namespace nba {

namespace {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

constexpr int kCheckpointVersion = 1;

double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Portable uniform draw in [0, 1).
double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

double standard_normal(std::mt19937_64& rng) {
    double u1 = 0.0;
    while (u1 <= 0.0) u1 = uniform01(rng);
    double u2 = uniform01(rng);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
}

MatrixXd glorot_uniform(Index rows, Index cols, Index fan_in, Index fan_out, std::mt19937_64& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    MatrixXd m(rows, cols);
    for (Index j = 0; j < cols; ++j)
        for (Index i = 0; i < rows; ++i) m(i, j) = (2.0 * uniform01(rng) - 1.0) * limit;
    return m;
}

// rows x cols matrix with orthonormal columns (rows >= cols).
MatrixXd orthogonal(Index rows, Index cols, std::mt19937_64& rng) {
    MatrixXd a(rows, cols);
    for (Index j = 0; j < cols; ++j)
        for (Index i = 0; i < rows; ++i) a(i, j) = standard_normal(rng);
    Eigen::HouseholderQR<MatrixXd> qr(a);
    MatrixXd q = qr.householderQ() * MatrixXd::Identity(rows, cols);
    MatrixXd r = qr.matrixQR().topRows(cols).triangularView<Eigen::Upper>();
    for (Index j = 0; j < cols; ++j)
        if (r(j, j) < 0) q.col(j) = -q.col(j);
    return q;
}

LstmCellWeights init_cell(Index features, Index hidden, std::mt19937_64& rng) {
    LstmCellWeights w;
    w.input = glorot_uniform(4 * hidden, features, features, 4 * hidden, rng);
    w.recurrent = orthogonal(4 * hidden, hidden, rng);
    w.bias = MatrixXd::Zero(4 * hidden, 1);
    w.bias_gate(Gate::forget).setOnes();
    return w;
}

// Cached activations of one layer over a sequence. Column t of h/c holds the
// state after t steps (column 0 is the zero initial state).
struct LayerTrace {
    MatrixXd x;      // F x T
    MatrixXd h;      // H x (T+1)
    MatrixXd c;      // H x (T+1)
    MatrixXd gates;  // 4H x T, post-activation
};

void activate_gates(Eigen::Ref<VectorXd> z, Index hidden) {
    for (Index i = 0; i < 4 * hidden; ++i) {
        const bool candidate = i >= 2 * hidden && i < 3 * hidden;
        z(i) = candidate ? std::tanh(z(i)) : logistic(z(i));
    }
}

LayerTrace run_layer(const LstmCellWeights& w, MatrixXd x) {
    const Index hidden = w.hidden();
    const Index steps = x.cols();
    LayerTrace tr;
    tr.h = MatrixXd::Zero(hidden, steps + 1);
    tr.c = MatrixXd::Zero(hidden, steps + 1);
    tr.gates.resize(4 * hidden, steps);
    for (Index t = 0; t < steps; ++t) {
        VectorXd z = w.input * x.col(t) + w.recurrent * tr.h.col(t) + w.bias.col(0);
        activate_gates(z, hidden);
        tr.gates.col(t) = z;
        auto f = z.segment(0, hidden).array();
        auto i = z.segment(hidden, hidden).array();
        auto g = z.segment(2 * hidden, hidden).array();
        auto o = z.segment(3 * hidden, hidden).array();
        tr.c.col(t + 1) = (f * tr.c.col(t).array() + i * g).matrix();
        tr.h.col(t + 1) = (o * tr.c.col(t + 1).array().tanh()).matrix();
    }
    tr.x = std::move(x);
    return tr;
}

// Backpropagation through time for one layer. `dh_out` is dLoss/dh_t for
// t = 1..T (H x T). Accumulates into `grad` and returns dLoss/dx (F x T).
MatrixXd backprop_layer(const LstmCellWeights& w, const LayerTrace& tr, const MatrixXd& dh_out, LstmCellWeights& grad) {
    const Index hidden = w.hidden();
    const Index steps = tr.x.cols();
    MatrixXd dx(w.features(), steps);
    VectorXd dh_next = VectorXd::Zero(hidden);
    VectorXd dc_next = VectorXd::Zero(hidden);
    VectorXd dz(4 * hidden);
    for (Index t = steps - 1; t >= 0; --t) {
        const auto gates = tr.gates.col(t);
        const auto f = gates.segment(0, hidden).array();
        const auto i = gates.segment(hidden, hidden).array();
        const auto g = gates.segment(2 * hidden, hidden).array();
        const auto o = gates.segment(3 * hidden, hidden).array();
        const Eigen::ArrayXd tanh_c = tr.c.col(t + 1).array().tanh();

        const Eigen::ArrayXd dh = (dh_out.col(t) + dh_next).array();
        const Eigen::ArrayXd dc = dc_next.array() + dh * o * (1.0 - tanh_c.square());

        dz.segment(0, hidden) = (dc * tr.c.col(t).array() * f * (1.0 - f)).matrix();
        dz.segment(hidden, hidden) = (dc * g * i * (1.0 - i)).matrix();
        dz.segment(2 * hidden, hidden) = (dc * i * (1.0 - g.square())).matrix();
        dz.segment(3 * hidden, hidden) = (dh * tanh_c * o * (1.0 - o)).matrix();

        grad.input.noalias() += dz * tr.x.col(t).transpose();
        grad.recurrent.noalias() += dz * tr.h.col(t).transpose();
        grad.bias.col(0) += dz;
        dx.col(t).noalias() = w.input.transpose() * dz;
        dh_next.noalias() = w.recurrent.transpose() * dz;
        dc_next = (dc * f).matrix();
    }
    return dx;
}

VectorXd softmax(const VectorXd& logits) {
    VectorXd p = (logits.array() - logits.maxCoeff()).exp().matrix();
    return p / p.sum();
}

MatrixXd encode_input(std::span<const int> prefix, const ActivityVocabulary& vocab) {
    MatrixXd x = MatrixXd::Zero(static_cast<Index>(vocab.size()), static_cast<Index>(prefix.size()));
    for (std::size_t t = 0; t < prefix.size(); ++t) {
        if (prefix[t] < 0 || static_cast<std::size_t>(prefix[t]) >= vocab.size())
            throw VocabularyError("activity index " + std::to_string(prefix[t]) + " out of range");
        x(vocab.onehot_column(prefix[t]), static_cast<Index>(t)) = 1.0;
    }
    return x;
}

double global_norm(const ModelParameters& g) {
    double sq = 0.0;
    for (const auto* t : g.tensors()) sq += t->squaredNorm();
    return std::sqrt(sq);
}

// Nadam as shipped with Keras 2 (momentum schedule with decay 0.004).
class Nadam {
public:
    Nadam(const TrainConfig& cfg, const ModelParameters& like)
        : cfg_(cfg), m_(ModelParameters::zeros_like(like)), v_(ModelParameters::zeros_like(like)) {}

    void step(ModelParameters& params, const ModelParameters& grad) {
        ++iteration_;
        const double t = static_cast<double>(iteration_);
        const double mu_t = cfg_.beta1 * (1.0 - 0.5 * std::pow(0.96, t * cfg_.schedule_decay));
        const double mu_next = cfg_.beta1 * (1.0 - 0.5 * std::pow(0.96, (t + 1.0) * cfg_.schedule_decay));
        const double schedule_new = m_schedule_ * mu_t;
        const double schedule_next = schedule_new * mu_next;
        m_schedule_ = schedule_new;
        const double v_correction = 1.0 - std::pow(cfg_.beta2, t);

        auto p = params.tensors();
        auto g = grad.tensors();
        auto m = m_.tensors();
        auto v = v_.tensors();
        for (std::size_t k = 0; k < p.size(); ++k) {
            auto ga = g[k]->array();
            m[k]->array() = cfg_.beta1 * m[k]->array() + (1.0 - cfg_.beta1) * ga;
            v[k]->array() = cfg_.beta2 * v[k]->array() + (1.0 - cfg_.beta2) * ga.square();
            auto g_prime = ga / (1.0 - schedule_new);
            auto m_prime = m[k]->array() / (1.0 - schedule_next);
            auto v_prime = v[k]->array() / v_correction;
            auto m_bar = (1.0 - mu_t) * g_prime + mu_next * m_prime;
            p[k]->array() -= cfg_.learning_rate * m_bar / (v_prime.sqrt() + cfg_.epsilon);
        }
    }

private:
    TrainConfig cfg_;
    ModelParameters m_, v_;
    double m_schedule_ = 1.0;
    long iteration_ = 0;
};

void shuffle(std::vector<std::size_t>& idx, std::mt19937_64& rng) {
    for (std::size_t i = idx.size(); i > 1; --i) {
        std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % i;
        std::uint64_t r;
        do r = rng(); while (r >= limit);
        std::swap(idx[i - 1], idx[r % i]);
    }
}

nlohmann::json matrix_to_json(const std::string& name, const MatrixXd& m) {
    std::vector<double> data(m.data(), m.data() + m.size());
    return {{"name", name}, {"rows", m.rows()}, {"cols", m.cols()}, {"data", data}};
}

} // namespace

// ---------------------------------------------------------------------------

LstmCellWeights LstmCellWeights::zeros(Index features, Index hidden) {
    return {MatrixXd::Zero(4 * hidden, features), MatrixXd::Zero(4 * hidden, hidden), MatrixXd::Zero(4 * hidden, 1)};
}

LstmState lstm_cell_step(const VectorXd& x, const LstmState& state, const LstmCellWeights& w) {
    const Index hidden = w.hidden();
    if (x.size() != w.features() || state.h.size() != hidden || state.c.size() != hidden)
        throw PreconditionError("LSTM cell input shapes do not match the weights");
    if (!x.allFinite() || !state.h.allFinite() || !state.c.allFinite())
        throw NumericError("non-finite input to LSTM cell");
    VectorXd z = w.input * x + w.recurrent * state.h + w.bias.col(0);
    activate_gates(z, hidden);
    LstmState next;
    next.c = (z.segment(0, hidden).array() * state.c.array() +
              z.segment(hidden, hidden).array() * z.segment(2 * hidden, hidden).array())
                 .matrix();
    next.h = (z.segment(3 * hidden, hidden).array() * next.c.array().tanh()).matrix();
    return next;
}

void TrainConfig::validate() const {
    if (hidden_size < 1) throw ConfigError("hidden_size must be >= 1");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (epochs < 0) throw ConfigError("epochs must be >= 0");
    if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("beta1/beta2 must lie in [0, 1)");
    if (!(validation_fraction >= 0.0 && validation_fraction < 1.0)) throw ConfigError("validation_fraction must lie in [0, 1)");
    if (!(kpi_loss_weight >= 0.0)) throw ConfigError("kpi_loss_weight must be >= 0");
    if (max_suffix_length < 0) throw ConfigError("max_suffix_length must be >= 0 (0 = automatic)");
}

nlohmann::json TrainConfig::to_json() const {
    return {{"hidden_size", hidden_size},       {"batch_size", batch_size},
            {"epochs", epochs},                 {"learning_rate", learning_rate},
            {"beta1", beta1},                   {"beta2", beta2},
            {"epsilon", epsilon},               {"schedule_decay", schedule_decay},
            {"clip_norm", clip_norm},           {"patience", patience},
            {"validation_fraction", validation_fraction}, {"kpi_loss_weight", kpi_loss_weight},
            {"max_suffix_length", max_suffix_length}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
    TrainConfig c;
    auto get = [&](const char* key, auto& field) {
        if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    get("hidden_size", c.hidden_size);
    get("batch_size", c.batch_size);
    get("epochs", c.epochs);
    get("learning_rate", c.learning_rate);
    get("beta1", c.beta1);
    get("beta2", c.beta2);
    get("epsilon", c.epsilon);
    get("schedule_decay", c.schedule_decay);
    get("clip_norm", c.clip_norm);
    get("patience", c.patience);
    get("validation_fraction", c.validation_fraction);
    get("kpi_loss_weight", c.kpi_loss_weight);
    get("max_suffix_length", c.max_suffix_length);
    c.validate();
    return c;
}

const std::array<const char*, ModelParameters::kTensorCount>& ModelParameters::tensor_names() {
    static const std::array<const char*, kTensorCount> names = {
        "shared.input",       "shared.recurrent",       "shared.bias",
        "activity.input",     "activity.recurrent",     "activity.bias",
        "kpi.input",          "kpi.recurrent",          "kpi.bias",
        "activity_head.weight", "activity_head.bias", "kpi_head.weight", "kpi_head.bias"};
    return names;
}

std::array<MatrixXd*, ModelParameters::kTensorCount> ModelParameters::tensors() {
    return {&shared.input,          &shared.recurrent,       &shared.bias,          &activity_branch.input,
            &activity_branch.recurrent, &activity_branch.bias, &kpi_branch.input,     &kpi_branch.recurrent,
            &kpi_branch.bias,       &activity_head_weight,   &activity_head_bias,   &kpi_head_weight,
            &kpi_head_bias};
}

std::array<const MatrixXd*, ModelParameters::kTensorCount> ModelParameters::tensors() const {
    auto t = const_cast<ModelParameters*>(this)->tensors();
    std::array<const MatrixXd*, kTensorCount> out{};
    std::copy(t.begin(), t.end(), out.begin());
    return out;
}

ModelParameters ModelParameters::zeros_like(const ModelParameters& p) {
    ModelParameters z = p;
    for (auto* t : z.tensors()) t->setZero();
    return z;
}

bool ModelParameters::all_finite() const {
    for (const auto* t : tensors())
        if (!t->allFinite()) return false;
    return true;
}

int Prediction::argmax() const {
    Index idx = 0;
    distribution.maxCoeff(&idx);
    return static_cast<int>(idx);
}

double PredictedSuffix::total_kpi() const {
    double total = 0.0;
    for (const auto& s : steps) total += s.kpi;
    return total;
}

std::vector<std::string> PredictedSuffix::activities() const {
    std::vector<std::string> out;
    for (const auto& s : steps) out.push_back(s.activity);
    return out;
}

// ---------------------------------------------------------------------------
// MultiTaskModel

MultiTaskModel::MultiTaskModel(ActivityVocabulary vocab, TrainConfig config, KpiNormalizer normalizer,
                               ModelParameters params, int max_suffix_length)
    : vocab_(std::move(vocab)),
      config_(std::move(config)),
      normalizer_(normalizer),
      params_(std::move(params)),
      max_suffix_length_(max_suffix_length) {
    const Index a = static_cast<Index>(vocab_.size());
    const Index h = params_.shared.hidden();
    if (params_.shared.features() != a || params_.activity_head_weight.rows() != a ||
        params_.activity_branch.features() != h || params_.kpi_branch.features() != h ||
        params_.activity_head_weight.cols() != params_.activity_branch.hidden() ||
        params_.kpi_head_weight.cols() != params_.kpi_branch.hidden() || params_.kpi_head_weight.rows() != 1)
        throw ArtifactError("model tensor shapes are inconsistent with the vocabulary/hidden size");
    if (!params_.all_finite()) throw NumericError("model weights are not finite");
    if (max_suffix_length_ < 1) throw ConfigError("max suffix length must be >= 1");
}

MultiTaskModel MultiTaskModel::initialize(const ActivityVocabulary& vocab, const TrainConfig& config,
                                          const KpiNormalizer& normalizer, std::uint64_t seed) {
    config.validate();
    std::mt19937_64 rng(seed);
    const Index a = static_cast<Index>(vocab.size());
    const Index h = config.hidden_size;
    ModelParameters p;
    p.shared = init_cell(a, h, rng);
    p.activity_branch = init_cell(h, h, rng);
    p.kpi_branch = init_cell(h, h, rng);
    p.activity_head_weight = glorot_uniform(a, h, h, a, rng);
    p.activity_head_bias = MatrixXd::Zero(a, 1);
    p.kpi_head_weight = glorot_uniform(1, h, h, 1, rng);
    p.kpi_head_bias = MatrixXd::Zero(1, 1);
    int max_len = config.max_suffix_length > 0 ? config.max_suffix_length : 1;
    return MultiTaskModel(vocab, config, normalizer, std::move(p), max_len);
}

MultiTaskModel::State MultiTaskModel::begin() const {
    return {LstmState::zeros(params_.shared.hidden()), LstmState::zeros(params_.activity_branch.hidden()),
            LstmState::zeros(params_.kpi_branch.hidden()), 0};
}

void MultiTaskModel::advance(State& state, int activity_index) const {
    if (activity_index < 0 || static_cast<std::size_t>(activity_index) >= vocab_.size())
        throw VocabularyError("activity index " + std::to_string(activity_index) + " out of range");
    VectorXd x = VectorXd::Zero(static_cast<Index>(vocab_.size()));
    x(vocab_.onehot_column(activity_index)) = 1.0;
    state.shared = lstm_cell_step(x, state.shared, params_.shared);
    state.activity = lstm_cell_step(state.shared.h, state.activity, params_.activity_branch);
    state.kpi = lstm_cell_step(state.shared.h, state.kpi, params_.kpi_branch);
    ++state.length;
}

Prediction MultiTaskModel::predict(const State& state) const {
    if (state.length == 0) throw PreconditionError("prediction requires a prefix of length >= 1");
    Prediction p;
    p.distribution = softmax(params_.activity_head_weight * state.activity.h + params_.activity_head_bias.col(0));
    const double z = (params_.kpi_head_weight * state.kpi.h)(0) + params_.kpi_head_bias(0, 0);
    p.kpi = std::max(0.0, normalizer_.denormalize(z));
    return p;
}

Prediction MultiTaskModel::forward(std::span<const int> prefix) const {
    if (prefix.empty()) throw PreconditionError("prediction requires a prefix of length >= 1");
    State s = begin();
    for (int idx : prefix) advance(s, idx);
    return predict(s);
}

nlohmann::json MultiTaskModel::to_json() const {
    nlohmann::json tensors = nlohmann::json::array();
    const auto& names = ModelParameters::tensor_names();
    auto ts = params_.tensors();
    for (std::size_t i = 0; i < ts.size(); ++i) tensors.push_back(matrix_to_json(names[i], *ts[i]));
    return {{"format", "nba-model"},
            {"version", kCheckpointVersion},
            {"config", config_.to_json()},
            {"vocabulary", vocab_.to_json()},
            {"vocabulary_hash", vocab_.hash()},
            {"kpi_normalization", normalizer_.to_json()},
            {"max_suffix_length", max_suffix_length_},
            {"tensors", tensors}};
}

MultiTaskModel MultiTaskModel::from_json(const nlohmann::json& j) {
    try {
        if (j.at("format") != "nba-model") throw ArtifactError("not a model checkpoint");
        if (j.at("version").get<int>() != kCheckpointVersion)
            throw ArtifactError("unsupported checkpoint version " + j.at("version").dump());
        auto vocab = ActivityVocabulary::from_json(j.at("vocabulary"));
        if (j.contains("vocabulary_hash") && j.at("vocabulary_hash").get<std::string>() != vocab.hash())
            throw ArtifactError("checkpoint vocabulary hash mismatch");
        ModelParameters p;
        auto ts = p.tensors();
        const auto& names = ModelParameters::tensor_names();
        const auto& arr = j.at("tensors");
        if (arr.size() != ts.size()) throw ArtifactError("checkpoint holds the wrong number of tensors");
        for (std::size_t i = 0; i < ts.size(); ++i) {
            const auto& t = arr.at(i);
            if (t.at("name").get<std::string>() != names[i]) throw ArtifactError("unexpected tensor " + t.at("name").dump());
            auto rows = t.at("rows").get<Index>();
            auto cols = t.at("cols").get<Index>();
            auto data = t.at("data").get<std::vector<double>>();
            if (static_cast<Index>(data.size()) != rows * cols) throw ArtifactError("tensor size does not match its shape header");
            *ts[i] = Eigen::Map<const MatrixXd>(data.data(), rows, cols);
        }
        return MultiTaskModel(std::move(vocab), TrainConfig::from_json(j.at("config")),
                              KpiNormalizer::from_json(j.at("kpi_normalization")), std::move(p),
                              j.at("max_suffix_length").get<int>());
    } catch (const nlohmann::json::exception& e) {
        throw ArtifactError(std::string("malformed model checkpoint: ") + e.what());
    }
}

void MultiTaskModel::save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write model checkpoint '" + path + "'");
    out << to_json().dump();
    if (!out) throw IoError("failed writing model checkpoint '" + path + "'");
}

MultiTaskModel MultiTaskModel::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ArtifactError("cannot open model checkpoint '" + path + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ArtifactError("malformed model checkpoint '" + path + "': " + e.what());
    }
    return from_json(j);
}

// ---------------------------------------------------------------------------
// Loss and gradients

LossBreakdown batch_loss(const MultiTaskModel& model, std::span<const PrefixSample* const> batch,
                         double kpi_loss_weight, ModelParameters* grad) {
    LossBreakdown loss;
    if (batch.empty()) return loss;
    const auto& p = model.parameters();
    const double scale = 1.0 / static_cast<double>(batch.size());
    for (const PrefixSample* sample : batch) {
        if (sample->prefix.empty()) throw PreconditionError("training sample with empty prefix");
        const Index steps = static_cast<Index>(sample->prefix.size());
        LayerTrace shared = run_layer(p.shared, encode_input(sample->prefix, model.vocabulary()));
        MatrixXd shared_out = shared.h.rightCols(steps);
        LayerTrace act = run_layer(p.activity_branch, shared_out);
        LayerTrace kpi = run_layer(p.kpi_branch, shared_out);

        const VectorXd h_act = act.h.col(steps);
        const VectorXd h_kpi = kpi.h.col(steps);
        const VectorXd probs = softmax(p.activity_head_weight * h_act + p.activity_head_bias.col(0));
        const double y = (p.kpi_head_weight * h_kpi)(0) + p.kpi_head_bias(0, 0);
        const double target = model.normalizer().normalize(sample->label_kpi);
        const double ce = -std::log(std::max(probs(sample->label_activity), std::numeric_limits<double>::min()));
        const double se = (y - target) * (y - target);
        loss.cross_entropy += ce * scale;
        loss.squared_error += se * scale;
        Index arg = 0;
        probs.maxCoeff(&arg);
        if (arg == sample->label_activity) ++loss.correct;

        if (!grad) continue;
        VectorXd dlogits = probs;
        dlogits(sample->label_activity) -= 1.0;
        dlogits *= scale;
        grad->activity_head_weight.noalias() += dlogits * h_act.transpose();
        grad->activity_head_bias.col(0) += dlogits;
        MatrixXd dh_act = MatrixXd::Zero(act.h.rows(), steps);
        dh_act.col(steps - 1) = p.activity_head_weight.transpose() * dlogits;

        const double dy = 2.0 * kpi_loss_weight * (y - target) * scale;
        grad->kpi_head_weight.noalias() += dy * h_kpi.transpose();
        grad->kpi_head_bias(0, 0) += dy;
        MatrixXd dh_kpi = MatrixXd::Zero(kpi.h.rows(), steps);
        dh_kpi.col(steps - 1) = p.kpi_head_weight.transpose() * dy;

        MatrixXd dshared = backprop_layer(p.activity_branch, act, dh_act, grad->activity_branch);
        dshared += backprop_layer(p.kpi_branch, kpi, dh_kpi, grad->kpi_branch);
        backprop_layer(p.shared, shared, dshared, grad->shared);
    }
    loss.total = loss.cross_entropy + kpi_loss_weight * loss.squared_error;
    return loss;
}

// ---------------------------------------------------------------------------
// Training

MultiTaskModel train(std::span<const PrefixSample> samples, std::span<const PrefixSample> validation,
                     const ActivityVocabulary& vocab, const TrainConfig& config, std::uint64_t seed,
                     TrainingSummary* summary) {
    config.validate();
    if (samples.empty()) throw PreconditionError("training requires at least one sample");
    std::size_t longest_prefix = 0;
    std::vector<double> labels;
    labels.reserve(samples.size());
    for (const auto& s : samples) {
        if (s.label_activity < 0 || static_cast<std::size_t>(s.label_activity) >= vocab.size())
            throw VocabularyError("sample label outside the vocabulary");
        for (int idx : s.prefix)
            if (idx < 0 || static_cast<std::size_t>(idx) >= vocab.size()) throw VocabularyError("sample activity outside the vocabulary");
        labels.push_back(s.label_kpi);
        longest_prefix = std::max(longest_prefix, s.prefix.size());
    }
    for (const auto& s : validation) longest_prefix = std::max(longest_prefix, s.prefix.size());

    TrainConfig cfg = config;
    // Longest terminated trace is longest prefix + 1; allow one step more.
    if (cfg.max_suffix_length == 0) cfg.max_suffix_length = static_cast<int>(longest_prefix) + 2;

    MultiTaskModel model = MultiTaskModel::initialize(vocab, cfg, KpiNormalizer::fit(labels), seed);
    std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
    Nadam optimizer(cfg, model.parameters());

    std::vector<std::size_t> order(samples.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::vector<const PrefixSample*> val_ptrs;
    for (const auto& s : validation) val_ptrs.push_back(&s);

    TrainingSummary local;
    local.sample_count = samples.size();
    local.validation_count = validation.size();
    double best = std::numeric_limits<double>::infinity();
    ModelParameters best_params = model.parameters();
    int waited = 0;
    std::vector<const PrefixSample*> batch;

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        shuffle(order, rng);
        double epoch_loss = 0.0;
        std::size_t correct = 0;
        for (std::size_t start = 0, step = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size), ++step) {
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
            batch.clear();
            for (std::size_t i = start; i < end; ++i) batch.push_back(&samples[order[i]]);
            ModelParameters grad = ModelParameters::zeros_like(model.parameters());
            LossBreakdown loss = batch_loss(model, batch, cfg.kpi_loss_weight, &grad);
            if (!std::isfinite(loss.total) || !grad.all_finite())
                throw TrainingError("loss diverged at epoch " + std::to_string(epoch) + ", step " + std::to_string(step));
            if (cfg.clip_norm > 0.0) {
                const double norm = global_norm(grad);
                if (norm > cfg.clip_norm)
                    for (auto* t : grad.tensors()) *t *= cfg.clip_norm / norm;
            }
            optimizer.step(model.mutable_parameters(), grad);
            if (!model.parameters().all_finite())
                throw TrainingError("weights became non-finite at epoch " + std::to_string(epoch) + ", step " + std::to_string(step));
            epoch_loss += loss.total * static_cast<double>(batch.size());
            correct += loss.correct;
        }
        EpochStats stats;
        stats.epoch = epoch;
        stats.train_loss = epoch_loss / static_cast<double>(samples.size());
        stats.train_accuracy = static_cast<double>(correct) / static_cast<double>(samples.size());
        double monitored = stats.train_loss;
        if (!val_ptrs.empty()) {
            stats.validation_loss = batch_loss(model, val_ptrs, cfg.kpi_loss_weight, nullptr).total;
            monitored = stats.validation_loss;
        }
        local.history.push_back(stats);
        if (monitored < best) {
            best = monitored;
            best_params = model.parameters();
            local.best_epoch = epoch;
            waited = 0;
        } else if (cfg.patience > 0 && ++waited >= cfg.patience) {
            break;
        }
    }
    if (cfg.epochs > 0) model.mutable_parameters() = best_params;
    if (summary) *summary = std::move(local);
    return model;
}

MultiTaskModel train(const EventLog& terminated_log, const TrainConfig& config, std::uint64_t seed,
                     TrainingSummary* summary) {
    config.validate();
    const auto& traces = terminated_log.traces();
    std::vector<std::size_t> order(traces.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(seed ^ 0x5851f42d4c957f2dULL);
    shuffle(order, rng);
    auto n_val = static_cast<std::size_t>(std::floor(static_cast<double>(traces.size()) * config.validation_fraction));
    if (n_val >= traces.size()) n_val = 0;
    std::vector<bool> is_val(traces.size(), false);
    for (std::size_t i = 0; i < n_val; ++i) is_val[order[i]] = true;
    std::vector<Trace> fit, val;
    for (std::size_t i = 0; i < traces.size(); ++i) (is_val[i] ? val : fit).push_back(traces[i]);
    const auto& vocab = terminated_log.vocabulary();
    auto fit_samples = build_prediction_samples(EventLog(std::move(fit), vocab));
    auto val_samples = build_prediction_samples(EventLog(std::move(val), vocab));
    return train(fit_samples, val_samples, vocab, config, seed, summary);
}

// ---------------------------------------------------------------------------

PredictedSuffix predict_suffix(const MultiTaskModel& model, std::span<const int> prefix, int max_len) {
    if (prefix.size() <= 1) throw PreconditionError("suffix prediction requires a prefix of at least 2 events");
    if (max_len < 1) throw PreconditionError("maximum suffix length must be >= 1");
    const auto& vocab = model.vocabulary();
    auto state = model.begin();
    for (int idx : prefix) model.advance(state, idx);
    PredictedSuffix out;
    while (true) {
        if (static_cast<int>(out.steps.size()) >= max_len) {
            out.truncated = true;
            break;
        }
        Prediction p = model.predict(state);
        const int next = p.argmax();
        out.steps.push_back({vocab.name_of(next), p.kpi});
        if (next == vocab.end_index()) break;
        model.advance(state, next);
    }
    return out;
}

PredictedSuffix predict_suffix(const MultiTaskModel& model, const Trace& prefix, int max_len) {
    std::vector<int> idx;
    idx.reserve(prefix.size());
    for (const auto& e : prefix.events) idx.push_back(model.vocabulary().index_of(e.activity));
    return predict_suffix(model, idx, max_len);
}

} // namespace nba
