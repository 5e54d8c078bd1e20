#include "nba/candidate_index.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "nba/errors.hpp"

namespace nba {

namespace {

constexpr int kIndexVersion = 1;

bool closer(const Neighbor& a, const Neighbor& b) {
    return a.distance < b.distance || (a.distance == b.distance && a.index < b.index);
}

double point_distance(const Eigen::VectorXd& q, const Eigen::MatrixXd& points, std::size_t col) {
    double sq = 0.0;
    const auto c = static_cast<Eigen::Index>(col);
    for (Eigen::Index i = 0; i < q.size(); ++i) {
        const double d = q(i) - points(i, c);
        sq += d * d;
    }
    return std::sqrt(sq);
}

} // namespace

std::vector<SuffixRecord> build_suffix_records(const EventLog& terminated_log) {
    const auto& vocab = terminated_log.vocabulary();
    std::vector<SuffixRecord> out;
    for (const auto& t : terminated_log.traces()) {
        if (!t.is_terminated()) throw PreconditionError("trace of case '" + t.case_id + "' lacks a termination event");
        const auto ords = ordinal_encode(t, vocab);
        for (std::size_t k = 1; k < t.size(); ++k) {
            SuffixRecord r;
            r.case_id = t.case_id;
            r.activities.assign(ords.begin() + static_cast<std::ptrdiff_t>(k), ords.end());
            for (std::size_t i = k; i < t.size(); ++i) r.kpi_values.push_back(t.events[i].kpi_value);
            r.total_kpi = std::accumulate(r.kpi_values.begin(), r.kpi_values.end(), 0.0);
            out.push_back(std::move(r));
        }
    }
    return out;
}

Eigen::VectorXd vectorize_suffix(std::span<const int> ordinals, std::span<const double> kpis,
                                 const VectorizeParams& params, bool* truncated) {
    if (ordinals.size() != kpis.size()) throw PreconditionError("suffix activity and KPI sequences differ in length");
    const std::size_t L = params.max_length;
    const std::size_t n = std::min(ordinals.size(), L);
    if (truncated) *truncated = ordinals.size() > L;
    Eigen::VectorXd v = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(2 * L));
    for (std::size_t i = 0; i < n; ++i) {
        v(static_cast<Eigen::Index>(i)) = static_cast<double>(ordinals[i]);
        v(static_cast<Eigen::Index>(L + i)) = params.kpi_weight * params.normalizer.normalize(kpis[i]);
    }
    return v;
}

Eigen::VectorXd vectorize_suffix(const SuffixRecord& record, const VectorizeParams& params, bool* truncated) {
    return vectorize_suffix(record.activities, record.kpi_values, params, truncated);
}

Eigen::VectorXd vectorize_suffix(const PredictedSuffix& suffix, const ActivityVocabulary& vocab,
                                 const VectorizeParams& params, bool* truncated) {
    std::vector<int> ords;
    std::vector<double> kpis;
    for (const auto& s : suffix.steps) {
        ords.push_back(vocab.ordinal_of(s.activity));
        kpis.push_back(s.kpi);
    }
    return vectorize_suffix(ords, kpis, params, truncated);
}

double euclidean(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    if (a.size() != b.size()) throw QueryError("vector dimensions differ");
    Eigen::MatrixXd col = b;
    return point_distance(a, col, 0);
}

// ---------------------------------------------------------------------------
// BallTree

BallTree::BallTree(Eigen::MatrixXd points, std::size_t leaf_size)
    : points_(std::move(points)), leaf_size_(std::max<std::size_t>(leaf_size, 1)) {
    order_.resize(size());
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    if (size() > 0) build(0, size());
}

int BallTree::build(std::size_t begin, std::size_t end) {
    const int id = static_cast<int>(nodes_.size());
    nodes_.emplace_back();
    Node node;
    node.begin = begin;
    node.end = end;
    const auto dim = points_.rows();
    node.centroid = Eigen::VectorXd::Zero(dim);
    for (std::size_t i = begin; i < end; ++i) node.centroid += points_.col(static_cast<Eigen::Index>(order_[i]));
    node.centroid /= static_cast<double>(end - begin);
    for (std::size_t i = begin; i < end; ++i) node.radius = std::max(node.radius, point_distance(node.centroid, points_, order_[i]));

    if (end - begin > leaf_size_) {
        Eigen::Index split_dim = 0;
        double best_spread = -1.0;
        for (Eigen::Index d = 0; d < dim; ++d) {
            double lo = points_(d, static_cast<Eigen::Index>(order_[begin]));
            double hi = lo;
            for (std::size_t i = begin + 1; i < end; ++i) {
                const double v = points_(d, static_cast<Eigen::Index>(order_[i]));
                lo = std::min(lo, v);
                hi = std::max(hi, v);
            }
            if (hi - lo > best_spread) {
                best_spread = hi - lo;
                split_dim = d;
            }
        }
        const std::size_t mid = begin + (end - begin) / 2;
        std::nth_element(order_.begin() + static_cast<std::ptrdiff_t>(begin), order_.begin() + static_cast<std::ptrdiff_t>(mid),
                         order_.begin() + static_cast<std::ptrdiff_t>(end), [&](std::size_t a, std::size_t b) {
                             const double va = points_(split_dim, static_cast<Eigen::Index>(a));
                             const double vb = points_(split_dim, static_cast<Eigen::Index>(b));
                             return va < vb || (va == vb && a < b);
                         });
        node.left = build(begin, mid);
        node.right = build(mid, end);
    }
    nodes_[static_cast<std::size_t>(id)] = std::move(node);
    return id;
}

BallTree BallTree::restore(Eigen::MatrixXd points, std::size_t leaf_size, std::vector<Node> nodes,
                           std::vector<std::size_t> order) {
    BallTree t;
    t.points_ = std::move(points);
    t.leaf_size_ = std::max<std::size_t>(leaf_size, 1);
    t.nodes_ = std::move(nodes);
    t.order_ = std::move(order);
    const std::size_t n = t.size();
    if (t.order_.size() != n) throw ArtifactError("ball tree order does not cover all points");
    std::vector<bool> seen(n, false);
    for (auto i : t.order_) {
        if (i >= n || seen[i]) throw ArtifactError("ball tree order is not a permutation");
        seen[i] = true;
    }
    if (n > 0 && t.nodes_.empty()) throw ArtifactError("ball tree has no nodes");
    for (const auto& node : t.nodes_) {
        if (node.begin >= node.end || node.end > n || node.centroid.size() != t.points_.rows())
            throw ArtifactError("ball tree node is malformed");
        for (std::size_t i = node.begin; i < node.end; ++i)
            if (point_distance(node.centroid, t.points_, t.order_[i]) > node.radius * (1 + 1e-12) + 1e-12)
                throw ArtifactError("ball tree node does not contain its points");
        if (!node.is_leaf()) {
            const auto l = static_cast<std::size_t>(node.left), r = static_cast<std::size_t>(node.right);
            if (l >= t.nodes_.size() || r >= t.nodes_.size() || t.nodes_[l].begin != node.begin ||
                t.nodes_[l].end != t.nodes_[r].begin || t.nodes_[r].end != node.end)
                throw ArtifactError("ball tree children do not partition their parent");
        }
    }
    return t;
}

std::size_t BallTree::depth() const {
    if (nodes_.empty()) return 0;
    std::vector<std::pair<int, std::size_t>> stack = {{0, 1}};
    std::size_t deepest = 0;
    while (!stack.empty()) {
        auto [id, d] = stack.back();
        stack.pop_back();
        deepest = std::max(deepest, d);
        const auto& n = nodes_[static_cast<std::size_t>(id)];
        if (!n.is_leaf()) {
            stack.emplace_back(n.left, d + 1);
            stack.emplace_back(n.right, d + 1);
        }
    }
    return deepest;
}

void BallTree::search(int id, const Eigen::VectorXd& q, std::size_t k, std::vector<Neighbor>& heap) const {
    const Node& node = nodes_[static_cast<std::size_t>(id)];
    const double to_centroid = point_distance(q, Eigen::MatrixXd(node.centroid), 0);
    const double lower = std::max(0.0, to_centroid - node.radius);
    // Slack absorbs rounding in the triangle inequality; pruning never drops
    // a point that could tie with the current k-th neighbour.
    const double slack = 1e-9 * (1.0 + to_centroid + node.radius);
    if (heap.size() == k && lower > heap.front().distance + slack) return;

    if (node.is_leaf()) {
        for (std::size_t i = node.begin; i < node.end; ++i) {
            Neighbor cand{order_[i], point_distance(q, points_, order_[i])};
            if (heap.size() < k) {
                heap.push_back(cand);
                std::push_heap(heap.begin(), heap.end(), closer);
            } else if (closer(cand, heap.front())) {
                std::pop_heap(heap.begin(), heap.end(), closer);
                heap.back() = cand;
                std::push_heap(heap.begin(), heap.end(), closer);
            }
        }
        return;
    }
    const Node& l = nodes_[static_cast<std::size_t>(node.left)];
    const Node& r = nodes_[static_cast<std::size_t>(node.right)];
    const double dl = point_distance(q, Eigen::MatrixXd(l.centroid), 0);
    const double dr = point_distance(q, Eigen::MatrixXd(r.centroid), 0);
    if (dl <= dr) {
        search(node.left, q, k, heap);
        search(node.right, q, k, heap);
    } else {
        search(node.right, q, k, heap);
        search(node.left, q, k, heap);
    }
}

std::vector<Neighbor> BallTree::query(const Eigen::VectorXd& q, std::size_t k) const {
    if (size() == 0) throw QueryError("query on an empty index");
    if (k == 0) throw QueryError("k must be >= 1");
    if (static_cast<std::size_t>(q.size()) != dimension())
        throw QueryError("query dimension " + std::to_string(q.size()) + " differs from index dimension " +
                         std::to_string(dimension()));
    std::vector<Neighbor> heap;
    heap.reserve(std::min(k, size()));
    search(0, q, std::min(k, size()), heap);
    std::sort(heap.begin(), heap.end(), closer);
    return heap;
}

// ---------------------------------------------------------------------------
// SuffixIndex

SuffixIndex::SuffixIndex(std::vector<SuffixRecord> records, VectorizeParams params, std::size_t leaf_size,
                         std::string vocabulary_hash)
    : records_(std::move(records)), params_(params), vocabulary_hash_(std::move(vocabulary_hash)) {
    if (records_.empty()) throw PreconditionError("an index needs at least one suffix record");
    if (params_.max_length < 1) throw PreconditionError("maximum suffix length must be >= 1");
    Eigen::MatrixXd points(static_cast<Eigen::Index>(2 * params_.max_length), static_cast<Eigen::Index>(records_.size()));
    for (std::size_t i = 0; i < records_.size(); ++i) {
        const auto& r = records_[i];
        if (r.activities.size() != r.kpi_values.size()) throw PreconditionError("suffix record sequences differ in length");
        points.col(static_cast<Eigen::Index>(i)) = vectorize_suffix(r, params_);
    }
    tree_ = BallTree(std::move(points), leaf_size);
}

SuffixIndex SuffixIndex::build(const EventLog& terminated_log, double kpi_weight, std::size_t leaf_size) {
    auto records = build_suffix_records(terminated_log);
    if (records.empty()) throw PreconditionError("the log yields no suffixes to index");
    VectorizeParams params;
    params.kpi_weight = kpi_weight;
    std::vector<double> kpis;
    for (const auto& r : records) params.max_length = std::max(params.max_length, r.activities.size());
    for (const auto& t : terminated_log.traces())
        for (const auto& e : t.events) kpis.push_back(e.kpi_value);
    params.normalizer = KpiNormalizer::fit(kpis);
    return SuffixIndex(std::move(records), params, leaf_size, terminated_log.vocabulary().hash());
}

std::vector<Candidate> SuffixIndex::query_knn(const Eigen::VectorXd& q, std::size_t k) const {
    std::vector<Candidate> out;
    for (const auto& n : tree_.query(q, k)) out.push_back({&records_[n.index], n.distance});
    return out;
}

std::vector<Candidate> SuffixIndex::query_knn(const PredictedSuffix& suffix, const ActivityVocabulary& vocab,
                                              std::size_t k) const {
    return query_knn(vectorize_suffix(suffix, vocab, params_), k);
}

nlohmann::json SuffixIndex::to_json() const {
    nlohmann::json records = nlohmann::json::array();
    for (const auto& r : records_)
        records.push_back({{"case_id", r.case_id}, {"activities", r.activities}, {"kpi_values", r.kpi_values}});
    nlohmann::json vectors = nlohmann::json::array();
    const auto& pts = tree_.points();
    for (Eigen::Index c = 0; c < pts.cols(); ++c)
        vectors.push_back(std::vector<double>(pts.col(c).data(), pts.col(c).data() + pts.rows()));
    nlohmann::json nodes = nlohmann::json::array();
    for (const auto& n : tree_.nodes())
        nodes.push_back({{"centroid", std::vector<double>(n.centroid.data(), n.centroid.data() + n.centroid.size())},
                         {"radius", n.radius},
                         {"begin", n.begin},
                         {"end", n.end},
                         {"left", n.left},
                         {"right", n.right}});
    return {{"format", "nba-index"},
            {"version", kIndexVersion},
            {"vocabulary_hash", vocabulary_hash_},
            {"params",
             {{"max_length", params_.max_length},
              {"kpi_weight", params_.kpi_weight},
              {"kpi_normalization", params_.normalizer.to_json()},
              {"leaf_size", tree_.leaf_size()}}},
            {"records", records},
            {"vectors", vectors},
            {"order", tree_.order()},
            {"nodes", nodes}};
}

SuffixIndex SuffixIndex::from_json(const nlohmann::json& j) {
    try {
        if (j.at("format") != "nba-index") throw ArtifactError("not a suffix index");
        if (j.at("version").get<int>() != kIndexVersion) throw ArtifactError("unsupported index version " + j.at("version").dump());
        SuffixIndex idx;
        const auto& p = j.at("params");
        idx.params_.max_length = p.at("max_length").get<std::size_t>();
        idx.params_.kpi_weight = p.at("kpi_weight").get<double>();
        idx.params_.normalizer = KpiNormalizer::from_json(p.at("kpi_normalization"));
        idx.vocabulary_hash_ = j.at("vocabulary_hash").get<std::string>();
        for (const auto& r : j.at("records")) {
            SuffixRecord rec;
            rec.case_id = r.at("case_id").get<std::string>();
            rec.activities = r.at("activities").get<std::vector<int>>();
            rec.kpi_values = r.at("kpi_values").get<std::vector<double>>();
            rec.total_kpi = std::accumulate(rec.kpi_values.begin(), rec.kpi_values.end(), 0.0);
            idx.records_.push_back(std::move(rec));
        }
        const auto dim = static_cast<Eigen::Index>(2 * idx.params_.max_length);
        const auto& vecs = j.at("vectors");
        if (vecs.size() != idx.records_.size()) throw ArtifactError("index vector count differs from record count");
        Eigen::MatrixXd points(dim, static_cast<Eigen::Index>(vecs.size()));
        for (std::size_t c = 0; c < vecs.size(); ++c) {
            auto v = vecs[c].get<std::vector<double>>();
            if (static_cast<Eigen::Index>(v.size()) != dim) throw ArtifactError("index vector has the wrong dimension");
            points.col(static_cast<Eigen::Index>(c)) = Eigen::Map<Eigen::VectorXd>(v.data(), dim);
        }
        std::vector<BallTree::Node> nodes;
        for (const auto& n : j.at("nodes")) {
            BallTree::Node node;
            auto c = n.at("centroid").get<std::vector<double>>();
            node.centroid = Eigen::Map<Eigen::VectorXd>(c.data(), static_cast<Eigen::Index>(c.size()));
            node.radius = n.at("radius").get<double>();
            node.begin = n.at("begin").get<std::size_t>();
            node.end = n.at("end").get<std::size_t>();
            node.left = n.at("left").get<int>();
            node.right = n.at("right").get<int>();
            nodes.push_back(std::move(node));
        }
        idx.tree_ = BallTree::restore(std::move(points), p.at("leaf_size").get<std::size_t>(), std::move(nodes),
                                      j.at("order").get<std::vector<std::size_t>>());
        return idx;
    } catch (const nlohmann::json::exception& e) {
        throw ArtifactError(std::string("malformed suffix index: ") + e.what());
    }
}

void SuffixIndex::save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write suffix index '" + path + "'");
    out << to_json().dump();
}

SuffixIndex SuffixIndex::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ArtifactError("cannot open suffix index '" + path + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ArtifactError("malformed suffix index '" + path + "': " + e.what());
    }
    return from_json(j);
}

} // namespace nba
