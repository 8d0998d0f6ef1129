#pragma once

// Segmentation quality metrics over pixel confidences and the continual
// learning metric suite over the accuracy matrix. AP uses the step
// interpolation sum Prec(j) * dRec(j) with stable original-order tie breaks;
// AUPR under that convention equals AP and shares the implementation.

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "clavs/tensor.hpp"

namespace clavs {

inline std::optional<double> average_precision(std::span<const double> conf,
                                               std::span<const std::uint8_t> target) {
    if (conf.size() != target.size())
        throw DimensionError("average_precision: " + std::to_string(conf.size()) +
                             " confidences vs " + std::to_string(target.size()) + " targets");
    std::size_t positives = 0;
    for (auto t : target) positives += t ? 1 : 0;
    if (positives == 0) return std::nullopt;  // undefined; caller skips the sample

    std::vector<std::size_t> order(conf.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return conf[a] > conf[b]; });

    double ap = 0.0, rec_prev = 0.0;
    std::size_t tp = 0;
    for (std::size_t j = 1; j <= order.size(); ++j) {
        if (!target[order[j - 1]]) continue;
        ++tp;
        const double prec = double(tp) / double(j);
        const double rec = double(tp) / double(positives);
        ap += prec * (rec - rec_prev);
        rec_prev = rec;
    }
    return ap;
}

inline double map_over_dataset(std::span<const double> per_sample_ap) {
    if (per_sample_ap.empty()) throw ContractError("map_over_dataset: no samples");
    double acc = 0.0;
    for (double v : per_sample_ap) acc += v;
    return acc / double(per_sample_ap.size());
}

// best F1 over an even threshold grid on [0,1]; predictions use conf >= tau
inline double max_f(std::span<const double> conf, std::span<const std::uint8_t> target,
                    std::size_t thresholds = 201) {
    if (conf.size() != target.size())
        throw DimensionError("max_f: size mismatch");
    if (thresholds < 2) throw ConfigError("max_f: need at least 2 thresholds");
    double best = 0.0;
    for (std::size_t k = 0; k < thresholds; ++k) {
        const double tau = double(k) / double(thresholds - 1);
        std::size_t tp = 0, fp = 0, fn = 0;
        for (std::size_t i = 0; i < conf.size(); ++i) {
            const bool pred = conf[i] >= tau;
            if (pred && target[i]) ++tp;
            else if (pred && !target[i]) ++fp;
            else if (!pred && target[i]) ++fn;
        }
        const double denom = double(2 * tp + fp + fn);
        const double f1 = denom > 0.0 ? 2.0 * double(tp) / denom : 0.0;
        best = std::max(best, f1);
    }
    return best;
}

struct SegScores {
    double ap = 0.0, maxf = 0.0, aupr = 0.0, iou = 0.0, dice = 0.0;
};

// IoU and Dice at a fixed threshold (default 0.5); AUPR shares the AP ranking
inline SegScores score_confidences(std::span<const double> conf,
                                   std::span<const std::uint8_t> target, double tau = 0.5) {
    SegScores s;
    auto ap = average_precision(conf, target);
    if (!ap.has_value()) throw ContractError("score_confidences: target has no positives");
    s.ap = *ap;
    s.aupr = *ap;  // step interpolation makes the PR area equal to AP
    s.maxf = max_f(conf, target);
    std::size_t tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < conf.size(); ++i) {
        const bool pred = conf[i] >= tau;
        if (pred && target[i]) ++tp;
        else if (pred && !target[i]) ++fp;
        else if (!pred && target[i]) ++fn;
    }
    s.iou = (tp + fp + fn) > 0 ? double(tp) / double(tp + fp + fn) : 1.0;
    s.dice = (2 * tp + fp + fn) > 0 ? 2.0 * double(tp) / double(2 * tp + fp + fn) : 1.0;
    return s;
}

// ---------------------------------------------------------------------------
// accuracy matrix and the continual learning metrics derived from it

struct AccuracyMatrix {
    std::string metric;
    std::size_t tasks = 0;
    std::vector<double> values;        // row = after training task t, col = eval task k
    std::vector<std::uint8_t> filled;

    AccuracyMatrix() = default;
    AccuracyMatrix(std::string name, std::size_t t)
        : metric(std::move(name)), tasks(t), values(t * t, 0.0), filled(t * t, 0) {}

    double at(std::size_t t, std::size_t k) const { return values[t * tasks + k]; }
    bool is_filled(std::size_t t, std::size_t k) const { return filled[t * tasks + k] != 0; }
    void set(std::size_t t, std::size_t k, double v) {
        values[t * tasks + k] = v;
        filled[t * tasks + k] = 1;
    }
};

struct ClMetrics {
    double la = 0.0, aa = 0.0;
    std::optional<double> forgetting, bwt, fwt;
};

// Learning accuracy, average accuracy, forgetting, backward and forward
// transfer. Only filled cells contribute, so sparse evaluation cadences and
// the one-ahead column are handled uniformly.
inline ClMetrics cl_metrics(const AccuracyMatrix& a) {
    if (a.tasks == 0) throw ContractError("cl_metrics: empty matrix");
    const std::size_t t_n = a.tasks;

    std::size_t last = 0;
    bool any = false;
    for (std::size_t t = 0; t < t_n; ++t)
        for (std::size_t k = 0; k < t_n; ++k)
            if (a.is_filled(t, k)) { last = std::max(last, t); any = true; }
    if (!any) throw ContractError("cl_metrics: no filled cells");

    ClMetrics m;
    double la = 0.0;
    std::size_t la_n = 0;
    for (std::size_t t = 0; t < t_n; ++t)
        if (a.is_filled(t, t)) { la += a.at(t, t); ++la_n; }
    if (la_n == 0) throw ContractError("cl_metrics: diagonal is unfilled");
    m.la = la / double(la_n);

    double aa = 0.0;
    std::size_t aa_n = 0;
    for (std::size_t k = 0; k < t_n; ++k)
        if (a.is_filled(last, k)) { aa += a.at(last, k); ++aa_n; }
    m.aa = aa / double(aa_n);

    double f = 0.0, bwt = 0.0;
    std::size_t f_n = 0, bwt_n = 0;
    for (std::size_t k = 0; k < last; ++k) {
        if (!a.is_filled(last, k)) continue;
        bool seen = false;
        double best = 0.0;
        for (std::size_t t = k; t <= last; ++t)
            if (a.is_filled(t, k)) {
                best = seen ? std::max(best, a.at(t, k)) : a.at(t, k);
                seen = true;
            }
        if (seen) {
            f += best - a.at(last, k);
            ++f_n;
        }
        if (a.is_filled(k, k)) {
            bwt += a.at(last, k) - a.at(k, k);
            ++bwt_n;
        }
    }
    if (f_n > 0) m.forgetting = f / double(f_n);
    if (bwt_n > 0) m.bwt = bwt / double(bwt_n);

    double fwt = 0.0;
    std::size_t fwt_n = 0;
    for (std::size_t k = 1; k < t_n; ++k)
        if (a.is_filled(k - 1, k)) { fwt += a.at(k - 1, k); ++fwt_n; }
    if (fwt_n > 0) m.fwt = fwt / double(fwt_n);
    return m;
}

// ---------------------------------------------------------------------------
// textual emission

// header row carries the evaluated task ids; one row per training step
inline std::string matrix_to_csv(const AccuracyMatrix& a) {
    std::ostringstream os;
    os << "train_task";
    for (std::size_t k = 0; k < a.tasks; ++k) os << ",task_" << k;
    os << '\n';
    os.precision(17);
    for (std::size_t t = 0; t < a.tasks; ++t) {
        bool row_filled = false;
        for (std::size_t k = 0; k < a.tasks; ++k) row_filled |= a.is_filled(t, k);
        if (!row_filled) continue;
        os << t;
        for (std::size_t k = 0; k < a.tasks; ++k) {
            os << ',';
            if (a.is_filled(t, k)) os << a.at(t, k);
        }
        os << '\n';
    }
    return os.str();
}

inline AccuracyMatrix matrix_from_csv(const std::string& text, const std::string& metric = "") {
    std::istringstream is(text);
    std::string line;
    if (!std::getline(is, line)) throw ContractError("matrix csv: empty input");
    std::size_t cols = 0;
    for (char c : line) cols += (c == ',') ? 1 : 0;
    if (cols == 0) throw ContractError("matrix csv: header has no task columns");

    struct Row {
        std::size_t t;
        std::vector<std::optional<double>> cells;
    };
    std::vector<Row> rows;
    std::size_t max_task = cols - 1;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string cell;
        if (!std::getline(ls, cell, ',')) continue;
        Row row;
        row.t = static_cast<std::size_t>(std::stoull(cell));
        max_task = std::max(max_task, row.t);
        while (std::getline(ls, cell, ','))
            row.cells.push_back(cell.empty() ? std::optional<double>{}
                                             : std::optional<double>{std::stod(cell)});
        rows.push_back(std::move(row));
    }
    AccuracyMatrix a(metric, max_task + 1);
    for (const auto& row : rows)
        for (std::size_t k = 0; k < row.cells.size() && k < a.tasks; ++k)
            if (row.cells[k].has_value()) a.set(row.t, k, *row.cells[k]);
    return a;
}

// heatmap-ready long format: train_step, eval_task, value
inline std::string matrix_to_long_csv(const AccuracyMatrix& a) {
    std::ostringstream os;
    os << "train_step,eval_task,value\n";
    os.precision(17);
    for (std::size_t t = 0; t < a.tasks; ++t)
        for (std::size_t k = 0; k < a.tasks; ++k)
            if (a.is_filled(t, k)) os << t << ',' << k << ',' << a.at(t, k) << '\n';
    return os.str();
}

}  // namespace clavs
