#pragma once

#include "mfa/dense.hpp"

#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace mfa {

// Rows index ground truth, columns index prediction.
class ConfusionMatrix {
public:
    using Counts = Eigen::Matrix<std::int64_t, Eigen::Dynamic, Eigen::Dynamic>;

    explicit ConfusionMatrix(int num_classes);

    // Ground-truth 255 pixels are skipped and counted as ignored; a 255 prediction is an error.
    void accumulate(const LabelMap& pred, const LabelMap& gt);

    ConfusionMatrix& operator+=(const ConfusionMatrix& other);

    int num_classes() const { return static_cast<int>(counts_.rows()); }
    const Counts& counts() const { return counts_; }
    std::int64_t ignored() const { return ignored_; }
    std::int64_t counted() const { return counts_.sum(); }

    friend bool operator==(const ConfusionMatrix& a, const ConfusionMatrix& b) {
        return a.counts_ == b.counts_ && a.ignored_ == b.ignored_;
    }

private:
    Counts counts_;
    std::int64_t ignored_ = 0;
};

struct IoUReport {
    std::vector<std::optional<double>> per_class;  // nullopt: zero union
    double miou = 0.0;
};

// IoU_c = TP / (TP + FP + FN); zero-union classes are excluded from the mean.
IoUReport iou(const ConfusionMatrix& cm);

// One column per class followed by mIoU; undefined entries are written as "nan".
void write_iou_csv_header(std::ostream& out, const std::vector<std::string>& class_names,
                          const std::vector<std::string>& leading_columns = {});
void write_iou_csv_row(std::ostream& out, const IoUReport& report, const std::vector<std::string>& leading_values = {});

} // namespace mfa
