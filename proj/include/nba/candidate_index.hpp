#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "nba/eventlog.hpp"
#include "nba/kpi.hpp"
#include "nba/predictor.hpp"

namespace nba {

// A historical suffix tl^k of a terminated training trace.
struct SuffixRecord {
    std::vector<int> activities;  // ordinals, last one is END's
    std::vector<double> kpi_values;
    double total_kpi = 0.0;
    std::string case_id;

    bool operator==(const SuffixRecord&) const = default;
};

// Every suffix tl^k, 1 <= k < n, of every terminated trace of the log.
std::vector<SuffixRecord> build_suffix_records(const EventLog& terminated_log);

struct VectorizeParams {
    std::size_t max_length = 1;  // L_max
    double kpi_weight = 1.0;     // w_kpi
    KpiNormalizer normalizer;
};

// [ordinals, 0-padded to L_max | w_kpi * z(kpi), 0-padded to L_max].
// Suffixes longer than L_max are cut and `truncated` is set.
Eigen::VectorXd vectorize_suffix(std::span<const int> ordinals, std::span<const double> kpis,
                                 const VectorizeParams& params, bool* truncated = nullptr);
Eigen::VectorXd vectorize_suffix(const SuffixRecord& record, const VectorizeParams& params, bool* truncated = nullptr);
Eigen::VectorXd vectorize_suffix(const PredictedSuffix& suffix, const ActivityVocabulary& vocab,
                                 const VectorizeParams& params, bool* truncated = nullptr);

// Euclidean distance, accumulated in coordinate order.
double euclidean(const Eigen::VectorXd& a, const Eigen::VectorXd& b);

struct Neighbor {
    std::size_t index = 0;  // insertion index of the point
    double distance = 0.0;

    bool operator==(const Neighbor&) const = default;
};

// Ball tree over fixed-dimension points. Each node splits its points at the
// median of the coordinate with the largest spread.
class BallTree {
public:
    struct Node {
        Eigen::VectorXd centroid;
        double radius = 0.0;
        std::size_t begin = 0, end = 0;  // range into order()
        int left = -1, right = -1;

        bool is_leaf() const { return left < 0; }
        std::size_t count() const { return end - begin; }
    };

    BallTree() = default;
    // Columns of `points` are the indexed vectors.
    BallTree(Eigen::MatrixXd points, std::size_t leaf_size);

    // Rebuilds from persisted parts after validating their consistency.
    static BallTree restore(Eigen::MatrixXd points, std::size_t leaf_size, std::vector<Node> nodes,
                            std::vector<std::size_t> order);

    // The min(k, n) nearest points, ascending by (distance, index).
    std::vector<Neighbor> query(const Eigen::VectorXd& q, std::size_t k) const;

    std::size_t size() const { return static_cast<std::size_t>(points_.cols()); }
    std::size_t dimension() const { return static_cast<std::size_t>(points_.rows()); }
    std::size_t leaf_size() const { return leaf_size_; }
    const Eigen::MatrixXd& points() const { return points_; }
    const std::vector<Node>& nodes() const { return nodes_; }
    const std::vector<std::size_t>& order() const { return order_; }
    std::size_t depth() const;

private:
    int build(std::size_t begin, std::size_t end);
    void search(int node, const Eigen::VectorXd& q, std::size_t k, std::vector<Neighbor>& heap) const;

    Eigen::MatrixXd points_;
    std::size_t leaf_size_ = 16;
    std::vector<Node> nodes_;
    std::vector<std::size_t> order_;
};

struct Candidate {
    const SuffixRecord* record = nullptr;
    double distance = 0.0;
};

// Candidate selection model: the suffix records, their embedding and the tree.
class SuffixIndex {
public:
    SuffixIndex() = default;
    SuffixIndex(std::vector<SuffixRecord> records, VectorizeParams params, std::size_t leaf_size,
                std::string vocabulary_hash = {});

    // L_max = longest record; KPI statistics over every event of the log.
    static SuffixIndex build(const EventLog& terminated_log, double kpi_weight, std::size_t leaf_size);

    std::vector<Candidate> query_knn(const Eigen::VectorXd& q, std::size_t k) const;
    std::vector<Candidate> query_knn(const PredictedSuffix& suffix, const ActivityVocabulary& vocab, std::size_t k) const;

    const std::vector<SuffixRecord>& records() const { return records_; }
    const VectorizeParams& params() const { return params_; }
    const BallTree& tree() const { return tree_; }
    const std::string& vocabulary_hash() const { return vocabulary_hash_; }
    bool empty() const { return records_.empty(); }

    nlohmann::json to_json() const;
    static SuffixIndex from_json(const nlohmann::json& j);
    void save(const std::string& path) const;
    static SuffixIndex load(const std::string& path);

private:
    std::vector<SuffixRecord> records_;
    VectorizeParams params_;
    BallTree tree_;
    std::string vocabulary_hash_;
};

} // namespace nba
