#include "dla/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <limits>

#include "json.hpp"

namespace dla {

int64_t ConfusionMatrix::total() const {
    int64_t t = 0;
    for (int64_t v : counts) t += v;
    return t;
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
    if (other.n_class != n_class) throw ShapeError("confusion matrix class count mismatch");
    for (size_t i = 0; i < counts.size(); ++i) counts[i] += other.counts[i];
}

namespace {

template <class TruthVec>
void accumulate_impl(ConfusionMatrix& cm, const TruthVec& truth, const std::vector<int32_t>& pred) {
    if (truth.size() != pred.size())
        throw ShapeError("accumulate: " + std::to_string(truth.size()) + " truth vs " +
                         std::to_string(pred.size()) + " predictions");
    for (size_t i = 0; i < truth.size(); ++i) {
        const int t = static_cast<int>(truth[i]);
        const int p = static_cast<int>(pred[i]);
        if (t < 0 || t >= cm.n_class || p < 0 || p >= cm.n_class)
            throw DataError("accumulate: class out of range at index " + std::to_string(i));
        ++cm.at(t, p);
    }
}

}  // namespace

void accumulate(ConfusionMatrix& cm, const std::vector<int32_t>& truth,
                const std::vector<int32_t>& pred) {
    accumulate_impl(cm, truth, pred);
}
void accumulate(ConfusionMatrix& cm, const std::vector<uint8_t>& truth,
                const std::vector<int32_t>& pred) {
    accumulate_impl(cm, truth, pred);
}

Metrics metrics(const ConfusionMatrix& cm) {
    const int64_t total = cm.total();
    if (total == 0) throw DataError("metrics: empty confusion matrix");
    Metrics m;
    m.per_class_iou.assign(static_cast<size_t>(cm.n_class),
                           std::numeric_limits<double>::quiet_NaN());
    m.per_class_acc.assign(static_cast<size_t>(cm.n_class),
                           std::numeric_limits<double>::quiet_NaN());
    int64_t diag = 0;
    double iou_sum = 0.0, acc_sum = 0.0;
    int iou_n = 0, acc_n = 0;
    for (int c = 0; c < cm.n_class; ++c) {
        int64_t row = 0, col = 0;
        for (int j = 0; j < cm.n_class; ++j) {
            row += cm.at(c, j);
            col += cm.at(j, c);
        }
        const int64_t tp = cm.at(c, c);
        diag += tp;
        if (row > 0) {
            m.per_class_acc[static_cast<size_t>(c)] =
                static_cast<double>(tp) / static_cast<double>(row);
            acc_sum += m.per_class_acc[static_cast<size_t>(c)];
            ++acc_n;
        }
        if (row + col > 0) {
            m.per_class_iou[static_cast<size_t>(c)] =
                static_cast<double>(tp) / static_cast<double>(row + col - tp);
            iou_sum += m.per_class_iou[static_cast<size_t>(c)];
            ++iou_n;
        }
    }
    m.oa = static_cast<double>(diag) / static_cast<double>(total);
    m.macc = acc_n ? acc_sum / acc_n : 0.0;
    m.miou = iou_n ? iou_sum / iou_n : 0.0;
    return m;
}

std::string metrics_table(const Metrics& m, const std::string& row_name) {
    std::string out;
    char buf[64];
    auto cell = [&](const std::string& s) {
        std::snprintf(buf, sizeof buf, " %10s", s.c_str());
        out += buf;
    };
    auto num = [&](double v) {
        if (std::isnan(v)) {
            cell("-");
        } else {
            char nb[32];
            std::snprintf(nb, sizeof nb, "%.1f", 100.0 * v);
            cell(nb);
        }
    };
    cell("");
    cell("OA");
    cell("mIoU");
    cell("mAcc");
    for (const auto& name : ClassSchema::names()) cell(name);
    out += "\n";
    cell(row_name);
    num(m.oa);
    num(m.miou);
    num(m.macc);
    for (double v : m.per_class_iou) num(v);
    out += "\n";
    return out;
}

std::string metrics_json(const Metrics& m) {
    nlohmann::json j;
    j["oa"] = m.oa;
    j["miou"] = m.miou;
    j["macc"] = m.macc;
    for (int c = 0; c < ClassSchema::n_class; ++c) {
        const std::string& name = ClassSchema::names()[static_cast<size_t>(c)];
        const double iou = m.per_class_iou[static_cast<size_t>(c)];
        const double acc = m.per_class_acc[static_cast<size_t>(c)];
        j["per_class_iou"][name] = std::isnan(iou) ? nlohmann::json() : nlohmann::json(iou);
        j["per_class_acc"][name] = std::isnan(acc) ? nlohmann::json() : nlohmann::json(acc);
    }
    return j.dump(2);
}

}  // namespace dla
