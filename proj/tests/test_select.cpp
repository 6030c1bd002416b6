#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include "emmpd/rng.hpp"
#include "emmpd/select.hpp"

using namespace emmpd;

namespace {

// Independent reference for the window rule: theta = mean cosine similarity
// over unordered member pairs, then a raster scan that drops the later patch
// of any still-live pair whose similarity exceeds theta.
std::vector<int> brute_force_window(const std::vector<int>& members, const Matrix& nrm) {
    const int m = static_cast<int>(members.size());
    if (m <= 1) return members;
    auto cos = [&](int a, int b) {
        double s = 0.0;
        for (int j = 0; j < nrm.cols; ++j) s += nrm.at(a, j) * nrm.at(b, j);
        return s;
    };
    double theta = 0.0;
    int pairs = 0;
    for (int i = 0; i < m; ++i)
        for (int j = i + 1; j < m; ++j) {
            theta += cos(members[i], members[j]);
            ++pairs;
        }
    theta /= pairs;
    std::vector<bool> alive(m, true);
    for (int i = 0; i < m; ++i) {
        if (!alive[i]) continue;
        for (int j = i + 1; j < m; ++j) {
            if (!alive[j]) continue;
            if (cos(members[i], members[j]) > theta) alive[j] = false;
        }
    }
    std::vector<int> kept;
    for (int i = 0; i < m; ++i)
        if (alive[i]) kept.push_back(members[i]);
    return kept;
}

PatchBag grid_bag(Rng& rng, int side, int d, int num_slides = 1) {
    PatchBag bag;
    bag.patient_id = "p";
    bag.d = d;
    bag.num_slides = num_slides;
    for (int s = 0; s < num_slides; ++s)
        for (int y = 0; y < side; ++y)
            for (int x = 0; x < side; ++x)
                bag.coords.push_back({static_cast<std::uint16_t>(s), x, y});
    bag.embeddings = Matrix(bag.n(), d);
    bag.embeddings.fill_uniform(rng, -1.0, 1.0);
    return bag;
}

}  // namespace

TEST_CASE("row normalization produces unit rows and flags zero rows") {
    Matrix x(3, 3, {3, 4, 0, 0, 0, 0, 1, 1, 1});
    std::vector<int> degenerate;
    Matrix n = normalize_embeddings(x, &degenerate);
    CHECK(n.at(0, 0) == doctest::Approx(0.6));
    CHECK(n.at(0, 1) == doctest::Approx(0.8));
    CHECK(degenerate == std::vector<int>{1});
    for (int j = 0; j < 3; ++j) CHECK(n.at(1, j) == 0.0);
    double norm = 0.0;
    for (int j = 0; j < 3; ++j) norm += n.at(2, j) * n.at(2, j);
    CHECK(norm == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("window partition groups by floor division and never spans slides") {
    Rng rng(31);
    PatchBag bag = grid_bag(rng, 10, 4, 2);
    auto windows = window_partition(bag, 4);
    std::set<int> seen;
    for (const auto& w : windows) {
        CHECK(!w.members.empty());
        CHECK(std::is_sorted(w.members.begin(), w.members.end()));
        for (int idx : w.members) {
            const auto& c = bag.coords[idx];
            CHECK(c.slide == w.slide);
            CHECK(c.gx / 4 == w.wcol);
            CHECK(c.gy / 4 == w.wrow);
            CHECK(seen.insert(idx).second);  // each patch in exactly one window
        }
    }
    CHECK(static_cast<int>(seen.size()) == bag.n());
}

TEST_CASE("three-member example keeps {0, 2}") {
    // Patches 0 and 1 nearly identical, patch 2 orthogonal: theta sits between
    // the duplicate similarity and the cross similarities, so only 1 drops.
    Matrix emb(3, 2, {1.0, 0.0, 0.999, 0.04471, 0.0, 1.0});
    Matrix nrm = normalize_embeddings(emb);
    auto kept = compress_window({0, 1, 2}, nrm);
    CHECK(kept == std::vector<int>{0, 2});
    CHECK(kept == brute_force_window({0, 1, 2}, nrm));
}

TEST_CASE("compress_window equals the brute-force oracle on random windows") {
    Rng rng(32);
    const int d = 6;
    for (int trial = 0; trial < 500; ++trial) {
        const int m = rng.uniform_int(1, 12);
        Matrix emb(m, d);
        for (int i = 0; i < m; ++i) {
            if (i > 0 && rng.uniform() < 0.4) {
                // Near-duplicate of an earlier row to exercise removals.
                const int src = rng.uniform_int(0, i - 1);
                for (int j = 0; j < d; ++j)
                    emb.at(i, j) = emb.at(src, j) + rng.uniform(-0.01, 0.01);
            } else {
                for (int j = 0; j < d; ++j) emb.at(i, j) = rng.uniform(-1.0, 1.0);
            }
        }
        Matrix nrm = normalize_embeddings(emb);
        std::vector<int> members(m);
        for (int i = 0; i < m; ++i) members[i] = i;
        CHECK(compress_window(members, nrm) == brute_force_window(members, nrm));
    }
}

TEST_CASE("two_dim_compress keeps every singleton window and reports stats") {
    Rng rng(33);
    PatchBag bag = grid_bag(rng, 8, 5);
    auto result = two_dim_compress(bag, 8);  // one window per slide here
    CHECK(std::is_sorted(result.kept.begin(), result.kept.end()));
    CHECK(result.windows.size() == 1);
    CHECK(result.windows[0].members == bag.n());
    CHECK(result.windows[0].removed ==
          bag.n() - static_cast<int>(result.kept.size()));

    // Window size 1: every window is a singleton, nothing can be removed.
    auto lossless = two_dim_compress(bag, 1);
    CHECK(static_cast<int>(lossless.kept.size()) == bag.n());
}

TEST_CASE("one_dim_compress works over raster runs and differs from 2D layout") {
    Rng rng(34);
    PatchBag bag = grid_bag(rng, 6, 4);
    auto result = one_dim_compress(bag, 2);  // runs of 4 consecutive patches
    CHECK(std::is_sorted(result.kept.begin(), result.kept.end()));
    CHECK(!result.kept.empty());
    CHECK(static_cast<int>(result.windows.size()) == (bag.n() + 3) / 4);
}

TEST_CASE("top_k_select breaks ties toward the lower index, output ascending") {
    std::vector<double> scores = {0.5, 0.9, 0.5, 0.1, 0.9};
    CHECK(top_k_select(scores, 2) == std::vector<int>{1, 4});
    CHECK(top_k_select(scores, 3) == std::vector<int>{0, 1, 4});  // tie 0 vs 2 -> 0
    CHECK(top_k_select(scores, 99) == std::vector<int>{0, 1, 2, 3, 4});
}

TEST_CASE("gated attention weights are a softmax over patches") {
    Rng rng(35);
    SelectorParams params(6, 4, 2, 77);
    Matrix feats(9, 6);
    feats.fill_uniform(rng, -1.0, 1.0);
    auto w = gated_attention_weights(feats, params);
    REQUIRE(w.size() == 9);
    double sum = 0.0;
    for (double v : w) {
        CHECK(v > 0.0);
        sum += v;
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));

    // The tape version agrees with the forward-only scorer.
    Tape tape;
    auto scores = gated_attention_scores(tape, tape.constant(feats), params);
    const Matrix& sv = tape.value(scores);
    REQUIRE(sv.cols == 9);
    for (int i = 0; i < 9; ++i) CHECK(sv.at(0, i) == doctest::Approx(w[i]).epsilon(1e-12));
}

TEST_CASE("selector pretraining reduces the loss on a separable problem") {
    Rng rng(36);
    const int d = 8, c = 2;
    std::vector<SelectorBag> bags;
    for (int b = 0; b < 24; ++b) {
        SelectorBag bag;
        const int cls = b % 2;
        bag.label = {cls == 0, cls == 1};
        bag.features = Matrix(12, d);
        bag.features.fill_uniform(rng, -0.3, 0.3);
        for (int i = 0; i < 3; ++i)  // three informative patches per bag
            bag.features.at(rng.uniform_int(0, 11), cls) += 2.0;
        bags.push_back(std::move(bag));
    }
    SelectorTrainConfig cfg;
    cfg.epochs = 20;
    cfg.hidden = 8;
    std::vector<double> history;
    SelectorParams trained = pretrain_selector(bags, c, cfg, &history);
    REQUIRE(history.size() == 20);
    CHECK(history.back() < 0.5 * history.front());
    CHECK(trained.d == d);

    // Same seed, same data: bit-identical training curve.
    std::vector<double> history2;
    pretrain_selector(bags, c, cfg, &history2);
    CHECK(history == history2);
}

TEST_CASE("selection report removal rate and text rendering") {
    SelectionReport r;
    r.patient_id = "p01";
    r.n = 100;
    r.n_prime = 60;
    r.k = 32;
    CHECK(r.removal_rate() == doctest::Approx(0.4));
    CHECK(r.to_text().find("p01") != std::string::npos);
}
