#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "mivae/data/bag.hpp"
#include "mivae/data/bag_csv.hpp"
#include "mivae/diffcore/rng.hpp"
#include "mivae/errors.hpp"

namespace mivae::data {

struct FoldSplit {
    std::vector<std::string> train;
    std::vector<std::string> validation;
    std::vector<std::string> test;
};

// R repeats of stratified K-fold CV; split(r, k) holds the bag ids of one cell.
struct FoldPlan {
    std::size_t repeats = 0;
    std::size_t folds = 0;
    std::vector<FoldSplit> splits;

    const FoldSplit& split(std::size_t repeat, std::size_t fold) const { return splits.at(repeat * folds + fold); }
    FoldSplit& split(std::size_t repeat, std::size_t fold) { return splits.at(repeat * folds + fold); }

    friend bool operator==(const FoldPlan& a, const FoldPlan& b) {
        if (a.repeats != b.repeats || a.folds != b.folds || a.splits.size() != b.splits.size()) return false;
        for (std::size_t i = 0; i < a.splits.size(); ++i) {
            if (a.splits[i].train != b.splits[i].train || a.splits[i].validation != b.splits[i].validation ||
                a.splits[i].test != b.splits[i].test) {
                return false;
            }
        }
        return true;
    }
};

struct LabelledId {
    std::string id;
    int label;
};

struct HoldoutSplit {
    std::vector<std::string> train;
    std::vector<std::string> holdout;
};

// Stratified random holdout of round(fraction * n) bags (at least one, and
// never all of them). Positives and negatives are sampled in proportion.
inline HoldoutSplit stratified_holdout(const std::vector<LabelledId>& bags, double fraction, std::uint64_t seed) {
    if (bags.size() < 2) throw ConfigError("holdout split needs at least 2 bags, got " + std::to_string(bags.size()));
    if (!(fraction > 0.0 && fraction < 1.0)) throw ConfigError("holdout fraction must lie in (0, 1)");
    std::vector<std::size_t> pos, neg;
    for (std::size_t i = 0; i < bags.size(); ++i) (bags[i].label == 1 ? pos : neg).push_back(i);
    Rng rng(seed);
    std::shuffle(pos.begin(), pos.end(), rng.engine());
    std::shuffle(neg.begin(), neg.end(), rng.engine());

    const std::size_t n = bags.size();
    std::size_t n_hold = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
    n_hold = std::clamp<std::size_t>(n_hold, 1, n - 1);
    std::size_t n_pos = static_cast<std::size_t>(
        std::llround(static_cast<double>(n_hold) * static_cast<double>(pos.size()) / static_cast<double>(n)));
    n_pos = std::min(n_pos, pos.size());
    std::size_t n_neg = std::min(n_hold - n_pos, neg.size());
    n_pos = std::min(pos.size(), n_hold - n_neg);

    std::vector<bool> held(n, false);
    for (std::size_t i = 0; i < n_pos; ++i) held[pos[i]] = true;
    for (std::size_t i = 0; i < n_neg; ++i) held[neg[i]] = true;
    HoldoutSplit out;
    for (std::size_t i = 0; i < n; ++i) (held[i] ? out.holdout : out.train).push_back(bags[i].id);
    return out;
}

inline std::vector<LabelledId> labelled_ids(const MilDataset& ds) {
    std::vector<LabelledId> out;
    out.reserve(ds.size());
    for (const Bag& b : ds.bags) out.push_back({b.id, b.label});
    return out;
}

inline std::vector<LabelledId> labelled_ids(const MilDataset& ds, const std::vector<std::string>& ids) {
    std::vector<LabelledId> out;
    out.reserve(ids.size());
    for (const auto& id : ids) out.push_back({id, ds.find(id).label});
    return out;
}

// Positives are shuffled and dealt round-robin over the folds, then the
// shuffled negatives continue the same cursor, so fold sizes differ by at
// most one and each fold holds floor/ceil(P/K) positives. Within every cell
// 10% of the training bags (stratified) are held out for validation.
inline FoldPlan make_fold_plan(const MilDataset& ds, std::size_t folds, std::size_t repeats, std::uint64_t seed,
                               double validation_fraction = 0.1) {
    if (folds < 2) throw ConfigError("fold plan: need at least 2 folds");
    if (repeats < 1) throw ConfigError("fold plan: need at least 1 repeat");
    if (folds > ds.size()) {
        throw ConfigError("fold plan: " + std::to_string(folds) + " folds requested for " + std::to_string(ds.size()) +
                          " bags");
    }
    FoldPlan plan;
    plan.repeats = repeats;
    plan.folds = folds;
    plan.splits.resize(repeats * folds);
    for (std::size_t r = 0; r < repeats; ++r) {
        std::vector<std::size_t> pos, neg;
        for (std::size_t i = 0; i < ds.size(); ++i) (ds.bags[i].label == 1 ? pos : neg).push_back(i);
        Rng rng(derive_seed(seed, "fold-assignment", r));
        std::shuffle(pos.begin(), pos.end(), rng.engine());
        std::shuffle(neg.begin(), neg.end(), rng.engine());
        std::vector<std::size_t> fold_of(ds.size());
        std::size_t cursor = 0;
        for (std::size_t i : pos) fold_of[i] = cursor++ % folds;
        for (std::size_t i : neg) fold_of[i] = cursor++ % folds;

        for (std::size_t k = 0; k < folds; ++k) {
            FoldSplit& split = plan.split(r, k);
            std::vector<LabelledId> train_pool;
            for (std::size_t i = 0; i < ds.size(); ++i) {
                if (fold_of[i] == k) {
                    split.test.push_back(ds.bags[i].id);
                } else {
                    train_pool.push_back({ds.bags[i].id, ds.bags[i].label});
                }
            }
            if (train_pool.size() >= 2) {
                HoldoutSplit hold = stratified_holdout(train_pool, validation_fraction, derive_seed(seed, "validation", r, k));
                split.train = std::move(hold.train);
                split.validation = std::move(hold.holdout);
            } else {
                for (auto& b : train_pool) split.train.push_back(b.id);
            }
        }
    }
    return plan;
}

// Audit format: repeat,fold,split,bag_id with split in {train,validation,test}.
inline void write_fold_plan(const FoldPlan& plan, std::ostream& out) {
    out << "repeat,fold,split,bag_id\n";
    for (std::size_t r = 0; r < plan.repeats; ++r) {
        for (std::size_t k = 0; k < plan.folds; ++k) {
            const FoldSplit& s = plan.split(r, k);
            for (const auto& id : s.train) out << r << ',' << k << ",train," << id << '\n';
            for (const auto& id : s.validation) out << r << ',' << k << ",validation," << id << '\n';
            for (const auto& id : s.test) out << r << ',' << k << ",test," << id << '\n';
        }
    }
}

inline FoldPlan read_fold_plan(std::istream& in, const std::string& source = "<stream>") {
    std::string line;
    std::size_t line_no = 1;
    if (!std::getline(in, line) || detail::trim(line) != "repeat,fold,split,bag_id") {
        throw ParseError(source, 1, "fold plan header must be repeat,fold,split,bag_id");
    }
    struct Row {
        std::size_t repeat, fold;
        std::string split, id;
    };
    std::vector<Row> rows;
    FoldPlan plan;
    while (std::getline(in, line)) {
        ++line_no;
        const auto row = detail::trim(line);
        if (row.empty()) continue;
        auto f = detail::split_commas(row);
        if (f.size() != 4) throw ParseError(source, line_no, "expected 4 fields");
        double r = 0, k = 0;
        if (!detail::parse_double(f[0], r) || !detail::parse_double(f[1], k) || r < 0 || k < 0) {
            throw ParseError(source, line_no, "repeat and fold must be non-negative integers");
        }
        const std::string split(detail::trim(f[2]));
        if (split != "train" && split != "validation" && split != "test") {
            throw ParseError(source, line_no, "unknown split '" + split + "'");
        }
        rows.push_back({static_cast<std::size_t>(r), static_cast<std::size_t>(k), split, std::string(detail::trim(f[3]))});
        plan.repeats = std::max(plan.repeats, rows.back().repeat + 1);
        plan.folds = std::max(plan.folds, rows.back().fold + 1);
    }
    plan.splits.resize(plan.repeats * plan.folds);
    for (auto& row : rows) {
        FoldSplit& s = plan.split(row.repeat, row.fold);
        (row.split == "train" ? s.train : row.split == "validation" ? s.validation : s.test).push_back(std::move(row.id));
    }
    return plan;
}

} // namespace mivae::data
