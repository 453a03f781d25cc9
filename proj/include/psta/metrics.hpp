#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <ostream>
#include <vector>

#include "psta/serialize.hpp"

namespace psta {

/// K x K confusion matrix (rows = truth, columns = prediction) with the
/// derived scores: overall accuracy and macro mean IoU. Classes that never
/// appear as truth or prediction have an undefined (0/0) IoU and are
/// excluded from the macro mean.
class ConfusionMatrix {
public:
    explicit ConfusionMatrix(std::size_t classes)
        : classes_(classes), counts_(classes * classes, 0) {}

    void add(std::size_t truth, std::size_t predicted) {
        if (truth >= classes_ || predicted >= classes_)
            throw std::invalid_argument("confusion matrix: class index out of range");
        ++counts_[truth * classes_ + predicted];
    }

    std::uint64_t at(std::size_t truth, std::size_t predicted) const {
        return counts_[truth * classes_ + predicted];
    }
    std::uint64_t& at(std::size_t truth, std::size_t predicted) {
        return counts_[truth * classes_ + predicted];
    }

    std::size_t classes() const { return classes_; }

    std::uint64_t total() const {
        std::uint64_t s = 0;
        for (auto c : counts_) s += c;
        return s;
    }

    double overall_accuracy() const {
        const auto t = total();
        if (t == 0) return 0.0;
        std::uint64_t diag = 0;
        for (std::size_t k = 0; k < classes_; ++k) diag += at(k, k);
        return static_cast<double>(diag) / static_cast<double>(t);
    }

    /// TP / (TP + FP + FN); empty when the denominator is zero
    std::optional<double> iou(std::size_t k) const {
        const std::uint64_t tp = at(k, k);
        std::uint64_t fp = 0, fn = 0;
        for (std::size_t j = 0; j < classes_; ++j) {
            if (j != k) {
                fp += at(j, k);
                fn += at(k, j);
            }
        }
        const std::uint64_t denom = tp + fp + fn;
        if (denom == 0) return std::nullopt;
        return static_cast<double>(tp) / static_cast<double>(denom);
    }

    double mean_iou() const {
        double sum = 0;
        std::size_t defined = 0;
        for (std::size_t k = 0; k < classes_; ++k)
            if (auto v = iou(k)) {
                sum += *v;
                ++defined;
            }
        return defined == 0 ? 0.0 : sum / static_cast<double>(defined);
    }

private:
    std::size_t classes_;
    std::vector<std::uint64_t> counts_;
};

struct Metrics {
    ConfusionMatrix confusion;
    double overall_accuracy = 0;
    double mean_iou = 0;
    std::vector<std::optional<double>> per_class_iou;

    explicit Metrics(ConfusionMatrix cm) : confusion(std::move(cm)) {
        overall_accuracy = confusion.overall_accuracy();
        mean_iou = confusion.mean_iou();
        for (std::size_t k = 0; k < confusion.classes(); ++k)
            per_class_iou.push_back(confusion.iou(k));
    }
};

inline void write_confusion_csv(std::ostream& os, const ConfusionMatrix& cm) {
    os << "truth\\pred";
    for (std::size_t k = 0; k < cm.classes(); ++k) os << "," << k;
    os << "\n";
    for (std::size_t t = 0; t < cm.classes(); ++t) {
        os << t;
        for (std::size_t p = 0; p < cm.classes(); ++p) os << "," << cm.at(t, p);
        os << "\n";
    }
}

inline void write_metrics_json(std::ostream& os, const Metrics& m) {
    os.precision(17);
    os << "{\"parcels\": " << m.confusion.total();
    os << ", \"overall_accuracy\": " << m.overall_accuracy;
    os << ", \"mean_iou\": " << m.mean_iou;
    os << ", \"per_class_iou\": [";
    for (std::size_t k = 0; k < m.per_class_iou.size(); ++k) {
        if (k) os << ", ";
        if (m.per_class_iou[k])
            os << *m.per_class_iou[k];
        else
            os << "null";
    }
    os << "]}";
}

}  // namespace psta
