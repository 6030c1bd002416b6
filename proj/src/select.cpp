#include "emmpd/select.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <sstream>

namespace emmpd {

Matrix normalize_embeddings(const Matrix& embeddings, std::vector<int>* degenerate) {
    Matrix out = embeddings;
    for (int r = 0; r < out.rows; ++r) {
        double norm = 0.0;
        const double* row = out.row_ptr(r);
        for (int c = 0; c < out.cols; ++c) norm += row[c] * row[c];
        norm = std::sqrt(norm);
        if (norm < 1e-12) {
            for (int c = 0; c < out.cols; ++c) out.at(r, c) = 0.0;
            if (degenerate) degenerate->push_back(r);
            continue;
        }
        for (int c = 0; c < out.cols; ++c) out.at(r, c) /= norm;
    }
    return out;
}

std::vector<WindowIndex> window_partition(const PatchBag& bag, int w) {
    if (w < 1) throw ConfigError("window_partition: w must be >= 1");
    std::map<std::tuple<int, int, int>, std::vector<int>> grouped;
    for (int i = 0; i < bag.n(); ++i) {
        const PatchBag::Coord& c = bag.coords[i];
        // floor division, robust for negative grid coordinates
        auto fdiv = [w](int v) { return v >= 0 ? v / w : -((-v + w - 1) / w); };
        grouped[{c.slide, fdiv(c.gy), fdiv(c.gx)}].push_back(i);
    }
    std::vector<WindowIndex> windows;
    windows.reserve(grouped.size());
    for (auto& [key, members] : grouped) {
        std::sort(members.begin(), members.end());
        windows.push_back(WindowIndex{std::get<0>(key), std::get<1>(key), std::get<2>(key),
                                      std::move(members)});
    }
    return windows;
}

std::vector<int> compress_window(const std::vector<int>& members, const Matrix& normalized) {
    if (members.empty()) throw ConfigError("compress_window: empty window");
    const int m = static_cast<int>(members.size());
    if (m == 1) return members;

    // Pairwise cosine similarities among all members at window entry.
    std::vector<double> sim(static_cast<size_t>(m) * m, 0.0);
    const int d = normalized.cols;
    for (int i = 0; i < m; ++i) {
        const double* a = normalized.row_ptr(members[i]);
        for (int j = i + 1; j < m; ++j) {
            const double* b = normalized.row_ptr(members[j]);
            double s = 0.0;
            for (int c = 0; c < d; ++c) s += a[c] * b[c];
            sim[static_cast<size_t>(i) * m + j] = s;
        }
    }
    double theta = 0.0;
    const int pairs = m * (m - 1) / 2;
    for (int i = 0; i < m; ++i)
        for (int j = i + 1; j < m; ++j) theta += sim[static_cast<size_t>(i) * m + j];
    theta /= pairs;

    // Raster scan over unordered pairs; only still-live members can trigger a
    // removal, and the later patch of the pair is dropped.
    std::vector<char> live(m, 1);
    for (int i = 0; i < m; ++i) {
        if (!live[i]) continue;
        for (int j = i + 1; j < m; ++j) {
            if (!live[j]) continue;
            if (sim[static_cast<size_t>(i) * m + j] > theta) live[j] = 0;
        }
    }
    std::vector<int> kept;
    for (int i = 0; i < m; ++i)
        if (live[i]) kept.push_back(members[i]);
    return kept;
}

namespace {

CompressResult compress_groups(const std::vector<std::vector<int>>& groups,
                               const Matrix& normalized) {
    CompressResult result;
    for (const auto& members : groups) {
        std::vector<int> kept = compress_window(members, normalized);
        WindowStats ws;
        ws.members = static_cast<int>(members.size());
        ws.removed = static_cast<int>(members.size() - kept.size());
        if (members.size() > 1) {
            // recompute theta for the report
            double theta = 0.0;
            int pairs = 0;
            const int d = normalized.cols;
            for (size_t i = 0; i < members.size(); ++i)
                for (size_t j = i + 1; j < members.size(); ++j) {
                    const double* a = normalized.row_ptr(members[i]);
                    const double* b = normalized.row_ptr(members[j]);
                    double s = 0.0;
                    for (int c = 0; c < d; ++c) s += a[c] * b[c];
                    theta += s;
                    ++pairs;
                }
            ws.theta = theta / pairs;
        }
        result.windows.push_back(ws);
        result.kept.insert(result.kept.end(), kept.begin(), kept.end());
    }
    std::sort(result.kept.begin(), result.kept.end());
    return result;
}

}  // namespace

CompressResult two_dim_compress(const PatchBag& bag, int w) {
    const Matrix normalized = normalize_embeddings(bag.embeddings);
    std::vector<std::vector<int>> groups;
    for (auto& win : window_partition(bag, w)) groups.push_back(std::move(win.members));
    return compress_groups(groups, normalized);
}

CompressResult one_dim_compress(const PatchBag& bag, int w) {
    const Matrix normalized = normalize_embeddings(bag.embeddings);
    const int run = w * w;
    std::vector<std::vector<int>> groups;
    for (int start = 0; start < bag.n(); start += run) {
        std::vector<int> members;
        for (int i = start; i < std::min(bag.n(), start + run); ++i) members.push_back(i);
        groups.push_back(std::move(members));
    }
    return compress_groups(groups, normalized);
}

std::string SelectionReport::to_text() const {
    std::ostringstream os;
    os << "bag " << patient_id << "\n";
    os << "  N  = " << n << "\n";
    os << "  N' = " << n_prime << "  (removal " << removal_rate() * 100.0 << "%)\n";
    os << "  K  = " << k << "\n";
    // coarse theta histogram over [-1, 1]
    constexpr int kBins = 10;
    int hist[kBins] = {0};
    for (const WindowStats& ws : windows) {
        if (ws.members < 2) continue;
        int b = static_cast<int>((ws.theta + 1.0) / 2.0 * kBins);
        b = std::clamp(b, 0, kBins - 1);
        ++hist[b];
    }
    os << "  theta histogram [-1,1]:";
    for (int b = 0; b < kBins; ++b) os << " " << hist[b];
    os << "\n";
    return os.str();
}

SelectorParams::SelectorParams(int d_, int h_, int c_, std::uint64_t seed) {
    d = d_;
    h = h_;
    c = c_;
    Rng rng(seed);
    const double r = std::sqrt(1.0 / d);
    v_attn = Param("selector.v_attn", Matrix(d, h));
    u_attn = Param("selector.u_attn", Matrix(d, h));
    w_attn = Param("selector.w_attn", Matrix(h, 1));
    head = Param("selector.head", Matrix(d, c));
    v_attn.value.fill_uniform(rng, -r, r);
    u_attn.value.fill_uniform(rng, -r, r);
    w_attn.value.fill_uniform(rng, -std::sqrt(1.0 / h), std::sqrt(1.0 / h));
    head.value.fill_uniform(rng, -r, r);
}

std::vector<Param*> SelectorParams::trainable() {
    return {&v_attn, &u_attn, &w_attn, &head};
}

Tape::Var gated_attention_scores(Tape& tape, Tape::Var features, SelectorParams& params) {
    const auto v = tape.leaf(params.v_attn);
    const auto u = tape.leaf(params.u_attn);
    const auto w = tape.leaf(params.w_attn);
    // a_i = w^T (tanh(V^T f_i) . sigmoid(U^T f_i)), softmaxed over patches
    const auto gate = tape.hadamard(tape.tanh_(tape.matmul(features, v)),
                                    tape.sigmoid_(tape.matmul(features, u)));
    const auto raw = tape.matmul(gate, w);  // K' x 1
    return tape.softmax_rows(tape.transpose(raw));  // 1 x K'
}

std::vector<double> gated_attention_weights(const Matrix& features, SelectorParams& params) {
    Tape tape;
    const auto f = tape.constant(features);
    const auto weights = gated_attention_scores(tape, f, params);
    return tape.value(weights).data;
}

std::vector<int> top_k_select(const std::vector<double>& scores, int k) {
    if (k < 1) throw ConfigError("top_k_select: K must be >= 1");
    const int n = static_cast<int>(scores.size());
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        if (scores[a] != scores[b]) return scores[a] > scores[b];
        return a < b;
    });
    order.resize(std::min(k, n));
    std::sort(order.begin(), order.end());
    return order;
}

SelectorParams pretrain_selector(const std::vector<SelectorBag>& bags, int c,
                                 const SelectorTrainConfig& config,
                                 std::vector<double>* history) {
    if (bags.empty()) throw ConfigError("pretrain_selector: empty training set");
    const int d = bags[0].features.cols;
    SelectorParams params(d, config.hidden, c, config.seed);
    Adam opt;
    auto trainable = params.trainable();
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        double epoch_loss = 0.0;
        for (const SelectorBag& bag : bags) {
            Tape tape;
            const auto f = tape.constant(bag.features);
            const auto weights = gated_attention_scores(tape, f, params);
            const auto pooled = tape.matmul(weights, f);  // 1 x d
            const auto logits = tape.transpose(tape.matmul(pooled, tape.leaf(params.head)));
            const auto loss = tape.focal_bce(logits, bag.label, config.alpha, config.gamma);
            epoch_loss += tape.value(loss).data[0];
            tape.backward(loss);
            opt.step(trainable, config.lr);
        }
        if (history) history->push_back(epoch_loss / bags.size());
    }
    return params;
}

}  // namespace emmpd
