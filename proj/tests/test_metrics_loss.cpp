#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "emmpd/gradcheck.hpp"
#include "emmpd/metrics.hpp"
#include "emmpd/rng.hpp"
#include "emmpd/tape.hpp"

using namespace emmpd;

namespace {

// Pair-counting Mann-Whitney: fraction of (positive, negative) pairs ranked
// correctly, ties worth one half.
double roc_oracle(const std::vector<double>& s, const std::vector<int>& y) {
    double num = 0.0;
    long pairs = 0;
    for (size_t i = 0; i < s.size(); ++i) {
        if (!y[i]) continue;
        for (size_t j = 0; j < s.size(); ++j) {
            if (y[j]) continue;
            ++pairs;
            if (s[i] > s[j]) num += 1.0;
            else if (s[i] == s[j]) num += 0.5;
        }
    }
    return num / pairs;
}

// Average precision via a walk down the descending-score ranking (ties broken
// toward the lower index).
double pr_oracle(const std::vector<double>& s, const std::vector<int>& y) {
    std::vector<size_t> order(s.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](size_t a, size_t b) { return s[a] > s[b]; });
    const int total_pos = std::accumulate(y.begin(), y.end(), 0);
    double ap = 0.0;
    int tp = 0;
    for (size_t rank = 0; rank < order.size(); ++rank) {
        if (y[order[rank]]) {
            ++tp;
            ap += static_cast<double>(tp) / static_cast<double>(rank + 1);
        }
    }
    return ap / total_pos;
}

}  // namespace

TEST_CASE("roc_auc matches the pair-counting oracle on random cases") {
    Rng rng(51);
    for (int trial = 0; trial < 1000; ++trial) {
        const int n = rng.uniform_int(2, 20);
        std::vector<double> s(n);
        std::vector<int> y(n);
        int pos = 0;
        for (int i = 0; i < n; ++i) {
            // Coarse grid scores so ties actually occur.
            s[i] = rng.uniform_int(0, 5) / 5.0;
            y[i] = rng.uniform() < 0.5;
            pos += y[i];
        }
        if (pos == 0 || pos == n) {
            y[0] = 1 - y[0];
        }
        CHECK(roc_auc_binary(s, y) == doctest::Approx(roc_oracle(s, y)).epsilon(1e-9));
    }
}

TEST_CASE("pr_auc matches the rank-walk oracle on random cases") {
    Rng rng(52);
    for (int trial = 0; trial < 1000; ++trial) {
        const int n = rng.uniform_int(2, 20);
        std::vector<double> s(n);
        std::vector<int> y(n);
        int pos = 0;
        for (int i = 0; i < n; ++i) {
            s[i] = rng.uniform();
            y[i] = rng.uniform() < 0.4;
            pos += y[i];
        }
        if (pos == 0) y[rng.uniform_int(0, n - 1)] = 1;
        CHECK(pr_auc_binary(s, y) == doctest::Approx(pr_oracle(s, y)).epsilon(1e-9));
    }
}

TEST_CASE("roc_auc is invariant under strictly monotone score transforms") {
    Rng rng(53);
    std::vector<double> s(40);
    std::vector<int> y(40);
    for (size_t i = 0; i < s.size(); ++i) {
        s[i] = rng.uniform(-3.0, 3.0);
        y[i] = i % 3 == 0;
    }
    const double base = roc_auc_binary(s, y);
    std::vector<double> affine = s, expd = s;
    for (size_t i = 0; i < s.size(); ++i) {
        affine[i] = 2.0 * s[i] + 5.0;
        expd[i] = std::exp(s[i]);
    }
    CHECK(roc_auc_binary(affine, y) == doctest::Approx(base).epsilon(1e-12));
    CHECK(roc_auc_binary(expd, y) == doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("degenerate inputs throw") {
    CHECK_THROWS_AS(roc_auc_binary({0.2, 0.8}, {1, 1}), NumericError);
    CHECK_THROWS_AS(roc_auc_binary({0.2, 0.8}, {0, 0}), NumericError);
    CHECK_THROWS_AS(pr_auc_binary({0.2, 0.8}, {0, 0}), NumericError);
}

TEST_CASE("perfect and inverted rankings hit the endpoints") {
    std::vector<double> s = {0.9, 0.8, 0.2, 0.1};
    CHECK(roc_auc_binary(s, {1, 1, 0, 0}) == doctest::Approx(1.0));
    CHECK(roc_auc_binary(s, {0, 0, 1, 1}) == doctest::Approx(0.0));
    CHECK(pr_auc_binary(s, {1, 1, 0, 0}) == doctest::Approx(1.0));
}

TEST_CASE("multilabel report on a hand-checked case") {
    // Two classes, four samples; threshold 0.5 on the scores.
    std::vector<std::vector<double>> scores = {
        {0.9, 0.2}, {0.8, 0.7}, {0.3, 0.6}, {0.1, 0.4}};
    std::vector<std::vector<int>> labels = {{1, 0}, {1, 1}, {0, 1}, {0, 0}};
    MetricsReport r = compute_metrics(scores, labels, TaskMode::Multilabel);
    REQUIRE(r.per_class.size() == 2);
    CHECK(r.samples == 4);
    // Class 0: predictions 1,1,0,0 vs labels 1,1,0,0 -> perfect.
    CHECK(r.per_class[0].f1 == doctest::Approx(1.0));
    CHECK(r.per_class[0].roc_auc == doctest::Approx(1.0));
    // Class 1: predictions 0,1,1,0 vs labels 0,1,1,0 -> perfect.
    CHECK(r.per_class[1].f1 == doctest::Approx(1.0));
    CHECK(r.acc == doctest::Approx(1.0));  // subset accuracy
    CHECK(r.f1 == doctest::Approx(1.0));
    CHECK(r.to_kv().find("roc_auc") != std::string::npos);
}

TEST_CASE("classes without positives are excluded from macro averages") {
    std::vector<std::vector<double>> scores = {{0.9, 0.1}, {0.2, 0.3}};
    std::vector<std::vector<int>> labels = {{1, 0}, {0, 0}};
    MetricsReport r = compute_metrics(scores, labels, TaskMode::Multilabel);
    CHECK(r.per_class[1].degenerate);
    CHECK_FALSE(r.per_class[0].degenerate);
    // Macro ROC skips the degenerate class; macro F1 still averages over C.
    CHECK(r.roc_auc == doctest::Approx(r.per_class[0].roc_auc));
    CHECK(r.f1 == doctest::Approx((r.per_class[0].f1 + r.per_class[1].f1) / 2.0));
}

TEST_CASE("multiclass accuracy uses the argmax") {
    std::vector<std::vector<double>> scores = {{0.7, 0.2, 0.1}, {0.1, 0.3, 0.6}, {0.2, 0.5, 0.3}};
    std::vector<std::vector<int>> labels = {{1, 0, 0}, {0, 0, 1}, {1, 0, 0}};
    MetricsReport r = compute_metrics(scores, labels, TaskMode::Multiclass);
    CHECK(r.acc == doctest::Approx(2.0 / 3.0));
}

TEST_CASE("focal loss with gamma 0, alpha 0.5 is half the BCE") {
    Rng rng(54);
    for (int trial = 0; trial < 100; ++trial) {
        const double logit = rng.uniform(-4.0, 4.0);
        const int y = rng.uniform() < 0.5;
        const double p = 1.0 / (1.0 + std::exp(-logit));
        const double bce = y ? -std::log(p) : -std::log(1.0 - p);
        const double focal = focal_bce_value({logit}, {y}, 0.5, 0.0);
        CHECK(focal == doctest::Approx(0.5 * bce).epsilon(1e-12));
    }
}

TEST_CASE("focal loss single-term anchor 0.25 * 0.1^2 * (-ln 0.9)") {
    // p = 0.9 for the positive class at the default alpha/gamma.
    const double logit = std::log(0.9 / 0.1);
    const double expect = 0.25 * 0.01 * (-std::log(0.9));
    CHECK(focal_bce_value({logit}, {1}, 0.25, 2.0) == doctest::Approx(expect).epsilon(1e-9));
}

TEST_CASE("focal loss sums per-class terms and validates its knobs") {
    const double logit = std::log(0.9 / 0.1);
    const double one = focal_bce_value({logit}, {1}, 0.25, 2.0);
    const double two = focal_bce_value({logit, logit}, {1, 1}, 0.25, 2.0);
    CHECK(two == doctest::Approx(2.0 * one).epsilon(1e-12));

    Tape tape;
    auto logits = tape.constant(Matrix(2, 1, {0.0, 0.0}));
    CHECK_THROWS_AS(tape.focal_bce(logits, {1, 0}, 1.5, 2.0), NumericError);
    CHECK_THROWS_AS(tape.focal_bce(logits, {1, 0}, 0.25, -1.0), NumericError);
    CHECK_THROWS_AS(tape.focal_bce(logits, {1}, 0.25, 2.0), ShapeError);
}

TEST_CASE("focal loss gradient passes finite differences at the defaults") {
    Param logits("logits", Matrix(3, 1, {0.4, -1.2, 2.0}));
    auto f = [&](bool) {
        Tape tape;
        auto loss = tape.focal_bce(tape.leaf(logits), {1, 0, 1}, 0.25, 2.0);
        tape.backward(loss);
        return tape.value(loss).data[0];
    };
    CHECK(gradcheck(f, {&logits}, 1e-6) < 1e-8);
}
