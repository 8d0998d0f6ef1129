#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "clavs/metrics.hpp"
#include "clavs/rng.hpp"

using clavs::AccuracyMatrix;

namespace {

// Brute-force oracle: build the explicit precision/recall table over every
// rank position, ranking by repeated max-search with first-index tie breaks,
// then sum Prec(j) * dRec(j).
double oracle_ap(std::vector<double> conf, const std::vector<std::uint8_t>& target) {
    const std::size_t n = conf.size();
    std::size_t positives = 0;
    for (auto t : target) positives += t ? 1 : 0;
    std::vector<std::size_t> order;
    std::vector<bool> used(n, false);
    for (std::size_t j = 0; j < n; ++j) {
        std::size_t best = n;
        for (std::size_t i = 0; i < n; ++i) {
            if (used[i]) continue;
            if (best == n || conf[i] > conf[best]) best = i;
        }
        used[best] = true;
        order.push_back(best);
    }
    std::vector<double> prec(n), rec(n);
    std::size_t tp = 0;
    for (std::size_t j = 0; j < n; ++j) {
        if (target[order[j]]) ++tp;
        prec[j] = double(tp) / double(j + 1);
        rec[j] = double(tp) / double(positives);
    }
    double ap = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
        const double drec = rec[j] - (j == 0 ? 0.0 : rec[j - 1]);
        ap += prec[j] * drec;
    }
    return ap;
}

}  // namespace

TEST_CASE("AP hand cases") {
    {
        std::vector<double> conf{0.9, 0.8, 0.7};
        std::vector<std::uint8_t> target{1, 0, 1};
        auto ap = clavs::average_precision(conf, target);
        REQUIRE(ap.has_value());
        REQUIRE(std::abs(*ap - (1.0 + 2.0 / 3.0) / 2.0) < 1e-12);
    }
    {
        // perfect ranking puts all positives first
        std::vector<double> conf{0.9, 0.8, 0.2, 0.1};
        std::vector<std::uint8_t> target{1, 1, 0, 0};
        REQUIRE(*clavs::average_precision(conf, target) == 1.0);
    }
    {
        std::vector<std::uint8_t> none{0, 0};
        std::vector<double> conf{0.5, 0.5};
        REQUIRE_FALSE(clavs::average_precision(conf, none).has_value());
    }
}

TEST_CASE("AP equals the exhaustive rank-table oracle") {
    clavs::Rng rng(2024);
    for (int trial = 0; trial < 500; ++trial) {
        const std::size_t n = 1 + rng.below(16);
        std::vector<double> conf(n);
        std::vector<std::uint8_t> target(n);
        bool has_pos = false;
        for (std::size_t i = 0; i < n; ++i) {
            // coarse grid makes ties frequent
            conf[i] = double(rng.below(5)) / 4.0;
            target[i] = rng.uniform() < 0.5 ? 1 : 0;
            has_pos |= target[i] != 0;
        }
        if (!has_pos) target[rng.below(n)] = 1;
        auto ap = clavs::average_precision(conf, target);
        REQUIRE(ap.has_value());
        REQUIRE(*ap == oracle_ap(conf, target));
    }
}

TEST_CASE("mAP is the arithmetic mean of per-sample APs") {
    std::vector<double> aps{1.0, 0.0};
    REQUIRE(clavs::map_over_dataset(aps) == 0.5);
    std::vector<double> one{0.73};
    REQUIRE(clavs::map_over_dataset(one) == 0.73);
}

TEST_CASE("Max-F basics") {
    {
        std::vector<double> conf{1.0, 1.0, 0.0, 0.0};
        std::vector<std::uint8_t> target{1, 1, 0, 0};
        REQUIRE(clavs::max_f(conf, target) == 1.0);
    }
    {
        // all-zero confidences: at tau=0 everything is predicted positive
        std::vector<double> conf{0.0, 0.0, 0.0, 0.0};
        std::vector<std::uint8_t> target{1, 1, 0, 0};
        const double p = 2.0, n = 2.0;
        REQUIRE(std::abs(clavs::max_f(conf, target) - 2.0 * p / (2.0 * p + n)) < 1e-12);
    }
}

TEST_CASE("Max-F never decreases under grid refinement") {
    clavs::Rng rng(7);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t n = 4 + rng.below(20);
        std::vector<double> conf(n);
        std::vector<std::uint8_t> target(n);
        for (std::size_t i = 0; i < n; ++i) {
            conf[i] = rng.uniform();
            target[i] = rng.uniform() < 0.4 ? 1 : 0;
        }
        REQUIRE(clavs::max_f(conf, target, 201) >= clavs::max_f(conf, target, 21));
    }
}

TEST_CASE("IoU, Dice, AUPR") {
    {
        std::vector<double> conf{1.0, 1.0, 0.0, 0.0};
        std::vector<std::uint8_t> target{1, 1, 0, 0};
        auto s = clavs::score_confidences(conf, target);
        REQUIRE(s.iou == 1.0);
        REQUIRE(s.dice == 1.0);
        REQUIRE(s.aupr == 1.0);
    }
    {
        std::vector<double> conf{1.0, 0.0};
        std::vector<std::uint8_t> target{0, 1};
        auto s = clavs::score_confidences(conf, target);
        REQUIRE(s.iou == 0.0);
        REQUIRE(s.dice == 0.0);
    }
    {
        // IoU = 1/3 implies Dice = 2 IoU / (1 + IoU) = 0.5
        std::vector<double> conf{1.0, 1.0, 0.0};
        std::vector<std::uint8_t> target{1, 0, 1};
        auto s = clavs::score_confidences(conf, target);
        REQUIRE(std::abs(s.iou - 1.0 / 3.0) < 1e-12);
        REQUIRE(std::abs(s.dice - 0.5) < 1e-12);
        REQUIRE(std::abs(s.dice - 2.0 * s.iou / (1.0 + s.iou)) < 1e-12);
    }
}

TEST_CASE("AUPR equals AP on random draws") {
    clavs::Rng rng(11);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t n = 2 + rng.below(15);
        std::vector<double> conf(n);
        std::vector<std::uint8_t> target(n);
        for (std::size_t i = 0; i < n; ++i) {
            conf[i] = double(rng.below(4)) / 3.0;
            target[i] = rng.uniform() < 0.5 ? 1 : 0;
        }
        target[rng.below(n)] = 1;
        auto s = clavs::score_confidences(conf, target);
        REQUIRE(s.aupr == *clavs::average_precision(conf, target));
        REQUIRE(s.ap >= 0.0);
        REQUIRE(s.ap <= 1.0);
        REQUIRE(s.maxf >= 0.0);
        REQUIRE(s.maxf <= 1.0);
        REQUIRE(s.iou >= 0.0);
        REQUIRE(s.iou <= 1.0);
        REQUIRE(s.dice >= 0.0);
        REQUIRE(s.dice <= 1.0);
    }
}

TEST_CASE("cl metrics on the hand fixture matrix") {
    AccuracyMatrix a("map", 2);
    a.set(0, 0, 0.8);
    a.set(0, 1, 0.1);
    a.set(1, 0, 0.6);
    a.set(1, 1, 0.9);
    auto m = clavs::cl_metrics(a);
    // the decimal fixtures are hit to within one ulp of the defining formulas
    REQUIRE(std::abs(m.la - 0.85) < 1e-15);
    REQUIRE(m.aa == 0.75);
    REQUIRE(m.forgetting.has_value());
    REQUIRE(std::abs(*m.forgetting - 0.2) < 1e-15);
    REQUIRE(std::abs(*m.bwt - (-0.2)) < 1e-15);
    REQUIRE(*m.fwt == 0.1);
}

TEST_CASE("cl metrics on a constant matrix") {
    AccuracyMatrix a("map", 3);
    for (std::size_t t = 0; t < 3; ++t)
        for (std::size_t k = 0; k < 3; ++k) a.set(t, k, 0.7);
    auto m = clavs::cl_metrics(a);
    REQUIRE(std::abs(m.la - 0.7) < 1e-15);
    REQUIRE(std::abs(m.aa - 0.7) < 1e-15);
    REQUIRE(*m.forgetting == 0.0);
    REQUIRE(*m.bwt == 0.0);
}

TEST_CASE("monotone improvement gives zero forgetting and non-negative BWT") {
    AccuracyMatrix a("map", 3);
    // every task improves on earlier ones over time
    a.set(0, 0, 0.5);
    a.set(1, 0, 0.6); a.set(1, 1, 0.5);
    a.set(2, 0, 0.7); a.set(2, 1, 0.6); a.set(2, 2, 0.5);
    auto m = clavs::cl_metrics(a);
    REQUIRE(*m.forgetting == 0.0);
    REQUIRE(*m.bwt >= 0.0);
}

TEST_CASE("when later rows never exceed the diagonal, F equals -BWT") {
    clavs::Rng rng(13);
    AccuracyMatrix a("map", 4);
    for (std::size_t k = 0; k < 4; ++k) {
        double diag = 0.5 + 0.4 * rng.uniform();
        a.set(k, k, diag);
        for (std::size_t t = k + 1; t < 4; ++t)
            a.set(t, k, diag - 0.3 * rng.uniform());  // never above A[k][k]
    }
    auto m = clavs::cl_metrics(a);
    REQUIRE(std::abs(*m.forgetting - (-*m.bwt)) < 1e-12);
}

TEST_CASE("single-task matrix reports LA/AA only") {
    AccuracyMatrix a("map", 1);
    a.set(0, 0, 0.42);
    auto m = clavs::cl_metrics(a);
    REQUIRE(m.la == 0.42);
    REQUIRE(m.aa == 0.42);
    REQUIRE_FALSE(m.forgetting.has_value());
    REQUIRE_FALSE(m.bwt.has_value());
    REQUIRE_FALSE(m.fwt.has_value());
}

TEST_CASE("cl metrics ignore unfilled cells") {
    AccuracyMatrix a("map", 2);
    a.set(0, 0, 0.8);
    a.set(0, 1, 0.1);
    a.set(1, 0, 0.6);
    a.set(1, 1, 0.9);
    AccuracyMatrix b = a;
    b.values[0 * 2 + 1] = 123.0;  // junk in a cell that stays unfilled
    b.filled[0 * 2 + 1] = 0;
    auto ma = clavs::cl_metrics(a);
    auto mb = clavs::cl_metrics(b);
    REQUIRE(ma.la == mb.la);
    REQUIRE(ma.aa == mb.aa);
    REQUIRE(*ma.forgetting == *mb.forgetting);
    REQUIRE_FALSE(mb.fwt.has_value());  // the one-ahead cell was invalidated
}

TEST_CASE("matrix csv round-trip preserves values and fill pattern") {
    AccuracyMatrix a("map", 3);
    a.set(0, 0, 0.8);
    a.set(0, 1, 0.125);
    a.set(1, 0, 0.6);
    a.set(1, 1, 0.9);
    a.set(1, 2, 0.25);
    a.set(2, 0, 0.55);
    a.set(2, 1, 0.85);
    a.set(2, 2, 0.95);
    std::string csv = clavs::matrix_to_csv(a);
    AccuracyMatrix b = clavs::matrix_from_csv(csv, "map");
    REQUIRE(b.tasks == a.tasks);
    for (std::size_t t = 0; t < 3; ++t)
        for (std::size_t k = 0; k < 3; ++k) {
            REQUIRE(b.is_filled(t, k) == a.is_filled(t, k));
            if (a.is_filled(t, k)) REQUIRE(b.at(t, k) == a.at(t, k));
        }

    auto longcsv = clavs::matrix_to_long_csv(a);
    std::size_t lines = std::count(longcsv.begin(), longcsv.end(), '\n');
    REQUIRE(lines == 1 + 8);  // header + filled cells
}
