#pragma once

#include <cmath>
#include <span>

#include <nlohmann/json.hpp>

namespace nba {

// z-normalization of KPI values with statistics taken from training data.
struct KpiNormalizer {
    double mean = 0.0;
    double std = 1.0;

    static KpiNormalizer identity() { return {}; }

    static KpiNormalizer fit(std::span<const double> values) {
        KpiNormalizer n;
        if (values.empty()) return n;
        double sum = 0.0;
        for (double v : values) sum += v;
        n.mean = sum / static_cast<double>(values.size());
        double sq = 0.0;
        for (double v : values) sq += (v - n.mean) * (v - n.mean);
        n.std = std::sqrt(sq / static_cast<double>(values.size()));
        if (!(n.std > 0.0)) n.std = 1.0;
        return n;
    }

    double normalize(double v) const { return (v - mean) / std; }
    double denormalize(double z) const { return z * std + mean; }

    nlohmann::json to_json() const { return {{"mean", mean}, {"std", std}}; }
    static KpiNormalizer from_json(const nlohmann::json& j) {
        return {j.at("mean").get<double>(), j.at("std").get<double>()};
    }

    bool operator==(const KpiNormalizer&) const = default;
};

} // namespace nba
