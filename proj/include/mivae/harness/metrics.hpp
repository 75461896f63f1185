#pragma once

#include <algorithm>
#include <cstddef>
#include <numeric>
#include <vector>

#include "mivae/data/bag.hpp"
#include "mivae/errors.hpp"
#include "mivae/model/mivae.hpp"

namespace mivae::harness {

// Fraction of predictions p with (p >= threshold) == label.
inline double accuracy_from_predictions(const std::vector<double>& probabilities, const std::vector<int>& labels,
                                        double threshold = 0.5) {
    if (probabilities.empty()) throw MetricError("accuracy: no predictions");
    if (probabilities.size() != labels.size()) throw DimensionError("accuracy: predictions and labels differ in length");
    std::size_t correct = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) correct += (probabilities[i] >= threshold ? 1 : 0) == labels[i];
    return static_cast<double>(correct) / static_cast<double>(labels.size());
}

// Step-wise average precision. Equal scores form one group, so the value does
// not depend on the order of tied items: AP = sum_k (R_k - R_{k-1}) P_k over
// the prefixes that end at a distinct score.
inline double average_precision(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size()) throw DimensionError("average_precision: scores and labels differ in length");
    const auto positives = std::count(labels.begin(), labels.end(), 1);
    if (positives == 0) throw MetricError("average_precision: no positive instances, AUC-PR undefined");
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

    const double p = static_cast<double>(positives);
    double ap = 0.0, tp = 0.0, seen = 0.0, prev_tp = 0.0;
    for (std::size_t i = 0; i < order.size();) {
        const double s = scores[order[i]];
        for (; i < order.size() && scores[order[i]] == s; ++i) {
            ++seen;
            tp += labels[order[i]] == 1;
        }
        if (tp > prev_tp) ap += (tp - prev_tp) / p * (tp / seen);
        prev_tp = tp;
    }
    return ap;
}

inline double evaluate_bag_accuracy(const model::MivaeParams& m, const data::MilDataset& ds, double threshold = 0.5) {
    if (ds.empty()) throw MetricError("bag accuracy: empty dataset");
    std::vector<double> p;
    std::vector<int> y;
    for (const auto& b : ds.bags) {
        p.push_back(model::predict_bag(m, b.instances));
        y.push_back(b.label);
    }
    return accuracy_from_predictions(p, y, threshold);
}

// Instance scores pooled over all bags, then average precision.
inline double evaluate_instance_aucpr(const model::MivaeParams& m, const data::MilDataset& ds) {
    if (!ds.has_instance_labels()) throw MetricError("instance AUC-PR: dataset has no instance labels");
    std::vector<double> scores;
    std::vector<int> labels;
    for (const auto& b : ds.bags) {
        const auto s = model::predict_instances(m, b.instances);
        scores.insert(scores.end(), s.begin(), s.end());
        labels.insert(labels.end(), b.instance_labels->begin(), b.instance_labels->end());
    }
    return average_precision(scores, labels);
}

} // namespace mivae::harness
