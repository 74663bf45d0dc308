#pragma once

#include <stdexcept>
#include <vector>

#include "cage/types.hpp"

namespace cage {

// Precision/recall/F1 per class, micro-F1, accuracy and confusion counts.
// Binary F1 is reported on class 1 (positive class by file convention).
inline MetricReport evaluate(const std::vector<LabelPosterior>& posteriors,
                             const std::vector<int>& gold, int num_classes,
                             const std::vector<std::vector<int>>* tau = nullptr) {
    if (posteriors.size() != gold.size())
        throw std::invalid_argument("evaluate: prediction/gold length mismatch");
    const int K = num_classes;
    MetricReport rep;
    rep.confusion.assign(K, std::vector<int>(K, 0));
    size_t labeled = 0;
    for (size_t i = 0; i < gold.size(); ++i) {
        int g = gold[i], p = posteriors[i].prediction;
        if (g == 0) continue;  // unlabeled instance
        if (g < 1 || g > K) throw std::invalid_argument("evaluate: gold label out of range");
        ++rep.confusion[g - 1][p - 1];
        ++labeled;
    }
    rep.precision.assign(K, 0.0);
    rep.recall.assign(K, 0.0);
    rep.f1.assign(K, 0.0);
    long correct = 0, pooled_tp = 0, pooled_fp = 0, pooled_fn = 0;
    for (int c = 0; c < K; ++c) {
        long tp = rep.confusion[c][c];
        long fp = 0, fn = 0;
        for (int o = 0; o < K; ++o) {
            if (o == c) continue;
            fp += rep.confusion[o][c];
            fn += rep.confusion[c][o];
        }
        correct += tp;
        pooled_tp += tp;
        pooled_fp += fp;
        pooled_fn += fn;
        rep.precision[c] = (tp + fp) > 0 ? static_cast<double>(tp) / (tp + fp) : 0.0;
        rep.recall[c] = (tp + fn) > 0 ? static_cast<double>(tp) / (tp + fn) : 0.0;
        rep.f1[c] = (rep.precision[c] + rep.recall[c]) > 0.0
                        ? 2.0 * rep.precision[c] * rep.recall[c] /
                              (rep.precision[c] + rep.recall[c])
                        : 0.0;
    }
    rep.accuracy = labeled == 0 ? 0.0 : static_cast<double>(correct) / labeled;
    rep.micro_f1 = (2 * pooled_tp + pooled_fp + pooled_fn) > 0
                       ? 2.0 * pooled_tp / (2.0 * pooled_tp + pooled_fp + pooled_fn)
                       : 0.0;
    rep.binary_f1 = rep.f1.empty() ? 0.0 : rep.f1[0];
    if (tau) {
        long covered = 0;
        for (const auto& row : *tau) {
            for (int t : row)
                if (t != 0) {
                    ++covered;
                    break;
                }
        }
        rep.coverage = tau->empty() ? 0.0 : static_cast<double>(covered) / tau->size();
    }
    return rep;
}

}  // namespace cage
