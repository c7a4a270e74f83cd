#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dla/pointcloud.hpp"

namespace dla {

// Rows are ground truth, columns are prediction.
struct ConfusionMatrix {
    int n_class = ClassSchema::n_class;
    std::vector<int64_t> counts;  // n_class * n_class

    explicit ConfusionMatrix(int classes = ClassSchema::n_class)
        : n_class(classes), counts(static_cast<size_t>(classes) * classes, 0) {}

    int64_t& at(int truth, int pred) { return counts[static_cast<size_t>(truth * n_class + pred)]; }
    int64_t at(int truth, int pred) const {
        return counts[static_cast<size_t>(truth * n_class + pred)];
    }
    int64_t total() const;
    void merge(const ConfusionMatrix& other);
};

void accumulate(ConfusionMatrix& cm, const std::vector<int32_t>& truth,
                const std::vector<int32_t>& pred);
void accumulate(ConfusionMatrix& cm, const std::vector<uint8_t>& truth,
                const std::vector<int32_t>& pred);

// OA, mAcc, mIoU. Classes absent from both truth and prediction are excluded
// from the means; per-class entries for them are NaN.
struct Metrics {
    double oa = 0.0;
    double macc = 0.0;
    double miou = 0.0;
    std::vector<double> per_class_iou;
    std::vector<double> per_class_acc;
};

Metrics metrics(const ConfusionMatrix& cm);

// Aligned text table: OA, mIoU, mAcc, then one per-class IoU column.
std::string metrics_table(const Metrics& m, const std::string& row_name);

// {"oa": .., "miou": .., "macc": .., "per_class_iou": {..}, ...}
std::string metrics_json(const Metrics& m);

}  // namespace dla
