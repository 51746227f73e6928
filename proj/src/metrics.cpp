#include "mfa/metrics.hpp"

#include <iomanip>
#include <sstream>
#include <stdexcept>

namespace mfa {

ConfusionMatrix::ConfusionMatrix(int num_classes) {
    if (num_classes < 1 || num_classes > kIgnoreLabel)
        throw std::invalid_argument("ConfusionMatrix: class count must lie in [1,255]");
    counts_ = Counts::Zero(num_classes, num_classes);
}

void ConfusionMatrix::accumulate(const LabelMap& pred, const LabelMap& gt) {
    if (pred.rows() != gt.rows() || pred.cols() != gt.cols())
        throw std::invalid_argument("ConfusionMatrix::accumulate: prediction/ground-truth shape mismatch");
    const int classes = num_classes();
    for (Index p = 0; p < pred.size(); ++p) {
        const auto g = gt(p);
        const auto q = pred(p);
        if (q == kIgnoreLabel) throw std::invalid_argument("ConfusionMatrix::accumulate: prediction contains 255");
        if (q >= classes) throw std::invalid_argument("ConfusionMatrix::accumulate: prediction out of range");
        if (g == kIgnoreLabel) {
            ++ignored_;
            continue;
        }
        if (g >= classes) throw std::invalid_argument("ConfusionMatrix::accumulate: ground truth out of range");
        ++counts_(g, q);
    }
}

ConfusionMatrix& ConfusionMatrix::operator+=(const ConfusionMatrix& other) {
    if (other.num_classes() != num_classes()) throw std::invalid_argument("ConfusionMatrix: class count mismatch");
    counts_ += other.counts_;
    ignored_ += other.ignored_;
    return *this;
}

IoUReport iou(const ConfusionMatrix& cm) {
    const auto& counts = cm.counts();
    if (counts.sum() == 0) throw std::invalid_argument("iou: confusion matrix is empty");
    IoUReport report;
    long double sum = 0.0L;
    int defined = 0;
    for (Index c = 0; c < counts.rows(); ++c) {
        const auto tp = counts(c, c);
        const auto fn = counts.row(c).sum() - tp;
        const auto fp = counts.col(c).sum() - tp;
        const auto uni = tp + fp + fn;
        if (uni == 0) {
            report.per_class.emplace_back();
            continue;
        }
        report.per_class.emplace_back(static_cast<double>(tp) / static_cast<double>(uni));
        // Extended precision so the mean rounds once, e.g. (1/2 + 2/3) / 2 == 7.0 / 12.0.
        sum += static_cast<long double>(tp) / static_cast<long double>(uni);
        ++defined;
    }
    report.miou = static_cast<double>(sum / defined);
    return report;
}

void write_iou_csv_header(std::ostream& out, const std::vector<std::string>& class_names,
                          const std::vector<std::string>& leading_columns) {
    for (const auto& col : leading_columns) out << col << ',';
    for (const auto& name : class_names) out << name << ',';
    out << "mIoU\n";
}

void write_iou_csv_row(std::ostream& out, const IoUReport& report, const std::vector<std::string>& leading_values) {
    std::ostringstream row;
    row.imbue(std::locale::classic());
    row << std::setprecision(6) << std::fixed;
    for (const auto& v : leading_values) row << v << ',';
    for (const auto& v : report.per_class) {
        if (v)
            row << *v;
        else
            row << "nan";
        row << ',';
    }
    row << report.miou << '\n';
    out << row.str();
}

} // namespace mfa
