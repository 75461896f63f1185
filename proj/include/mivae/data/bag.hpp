#pragma once

#include <algorithm>
#include <cstddef>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "mivae/diffcore/tensor.hpp"
#include "mivae/errors.hpp"

namespace mivae::data {

// A bag of instances sharing one binary label. Instance order is storage
// order only; nothing downstream may depend on it.
struct Bag {
    std::string id;
    diff::Tensor instances;  // [n x d]
    int label = 0;
    std::optional<std::vector<int>> instance_labels;

    std::size_t size() const noexcept { return instances.rows(); }
    std::size_t feature_dim() const noexcept { return instances.cols(); }

    void validate() const {
        if (label != 0 && label != 1) throw DataError("bag '" + id + "': label must be 0 or 1");
        if (instance_labels) {
            if (instance_labels->size() != size()) {
                throw DataError("bag '" + id + "': " + std::to_string(instance_labels->size()) +
                                " instance labels for " + std::to_string(size()) + " instances");
            }
            for (int l : *instance_labels) {
                if (l != 0 && l != 1) throw DataError("bag '" + id + "': instance labels must be 0 or 1");
                if (label == 0 && l == 1) {
                    throw DataError("bag '" + id + "': negative bag contains a positive instance");
                }
            }
        }
    }
};

struct MilDataset {
    std::string name;
    std::size_t feature_dim = 0;
    std::vector<Bag> bags;

    std::size_t size() const noexcept { return bags.size(); }
    bool empty() const noexcept { return bags.empty(); }

    std::size_t instance_count() const {
        std::size_t n = 0;
        for (const Bag& b : bags) n += b.size();
        return n;
    }

    std::size_t positive_bags() const {
        return static_cast<std::size_t>(std::count_if(bags.begin(), bags.end(), [](const Bag& b) { return b.label == 1; }));
    }

    bool has_instance_labels() const {
        return !bags.empty() && std::all_of(bags.begin(), bags.end(), [](const Bag& b) { return b.instance_labels.has_value(); });
    }

    void validate() const {
        std::unordered_map<std::string, std::size_t> seen;
        for (const Bag& b : bags) {
            if (b.size() == 0) throw DataError("bag '" + b.id + "' is empty");
            if (b.feature_dim() != feature_dim) {
                throw DimensionError("bag '" + b.id + "' has feature dimension " + std::to_string(b.feature_dim()) +
                                     ", dataset expects " + std::to_string(feature_dim));
            }
            if (!seen.emplace(b.id, 0).second) throw DataError("duplicate bag id '" + b.id + "'");
            b.validate();
        }
    }

    const Bag& find(const std::string& id) const {
        auto it = std::find_if(bags.begin(), bags.end(), [&](const Bag& b) { return b.id == id; });
        if (it == bags.end()) throw DataError("unknown bag id '" + id + "'");
        return *it;
    }
};

// Bags with the given ids, in the order given.
inline MilDataset select_bags(const MilDataset& source, const std::vector<std::string>& ids, std::string name = {}) {
    std::unordered_map<std::string, const Bag*> by_id;
    for (const Bag& b : source.bags) by_id.emplace(b.id, &b);
    MilDataset out;
    out.name = name.empty() ? source.name : std::move(name);
    out.feature_dim = source.feature_dim;
    out.bags.reserve(ids.size());
    for (const auto& id : ids) {
        auto it = by_id.find(id);
        if (it == by_id.end()) throw DataError("unknown bag id '" + id + "'");
        out.bags.push_back(*it->second);
    }
    return out;
}

} // namespace mivae::data
