#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "mivae/data/bag.hpp"
#include "mivae/errors.hpp"

namespace mivae::data {

// Per-feature z-score fitted on training instances. Features whose
// population std is below 1e-12 are only centered.
struct FeatureScaler {
    static constexpr double min_std = 1e-12;

    std::vector<double> mean;
    std::vector<double> std;

    std::size_t dim() const noexcept { return mean.size(); }

    static FeatureScaler fit(const MilDataset& train) {
        const std::size_t n = train.instance_count();
        if (n == 0) throw DataError("standardize: empty training set");
        const std::size_t d = train.feature_dim;
        FeatureScaler s;
        s.mean.assign(d, 0.0);
        s.std.assign(d, 0.0);
        for (const Bag& b : train.bags) {
            for (std::size_t j = 0; j < b.size(); ++j) {
                for (std::size_t k = 0; k < d; ++k) s.mean[k] += b.instances(j, k);
            }
        }
        for (double& m : s.mean) m /= static_cast<double>(n);
        for (const Bag& b : train.bags) {
            for (std::size_t j = 0; j < b.size(); ++j) {
                for (std::size_t k = 0; k < d; ++k) {
                    const double c = b.instances(j, k) - s.mean[k];
                    s.std[k] += c * c;
                }
            }
        }
        for (double& v : s.std) v = std::sqrt(v / static_cast<double>(n));
        return s;
    }

    double apply(std::size_t k, double x) const {
        const double c = x - mean[k];
        return std[k] < min_std ? c : c / std[k];
    }

    MilDataset transform(const MilDataset& ds) const {
        if (ds.feature_dim != dim()) {
            throw DimensionError("standardize: scaler has " + std::to_string(dim()) + " features, dataset has " +
                                 std::to_string(ds.feature_dim));
        }
        MilDataset out = ds;
        for (Bag& b : out.bags) {
            for (std::size_t j = 0; j < b.size(); ++j) {
                for (std::size_t k = 0; k < dim(); ++k) b.instances(j, k) = apply(k, b.instances(j, k));
            }
        }
        return out;
    }
};

struct StandardizedSplits {
    FeatureScaler scaler;
    MilDataset train;
    std::vector<MilDataset> others;
};

// Fits on train only and applies the same statistics to every other split.
inline StandardizedSplits standardize(const MilDataset& train, std::span<const MilDataset> others = {}) {
    StandardizedSplits out;
    out.scaler = FeatureScaler::fit(train);
    out.train = out.scaler.transform(train);
    for (const MilDataset& ds : others) out.others.push_back(out.scaler.transform(ds));
    return out;
}

} // namespace mivae::data
