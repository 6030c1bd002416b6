#include "emmpd/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace emmpd {

PatchGraph knn_graph(const std::vector<PatchBag::Coord>& coords, int k) {
    if (k < 1) throw ConfigError("knn_graph: k must be >= 1");
    const int n = static_cast<int>(coords.size());
    PatchGraph g;
    g.n = n;
    g.directed.assign(static_cast<size_t>(n) * n, 0);
    g.adjacency.assign(static_cast<size_t>(n) * n, 0);

    // Group nodes by slide; edges never cross slides.
    std::vector<std::vector<int>> slides;
    {
        std::vector<int> order(n);
        std::iota(order.begin(), order.end(), 0);
        for (int i : order) {
            const int s = coords[i].slide;
            if (static_cast<int>(slides.size()) <= s) slides.resize(s + 1);
            slides[s].push_back(i);
        }
    }

    for (const auto& nodes : slides) {
        for (int i : nodes) {
            std::vector<std::pair<double, int>> dist;
            dist.reserve(nodes.size());
            for (int j : nodes) {
                if (j == i) continue;
                const double dx = coords[i].gx - coords[j].gx;
                const double dy = coords[i].gy - coords[j].gy;
                dist.push_back({dx * dx + dy * dy, j});
            }
            std::sort(dist.begin(), dist.end());
            const int take = std::min<int>(k, static_cast<int>(dist.size()));
            for (int q = 0; q < take; ++q)
                g.directed[static_cast<size_t>(i) * n + dist[q].second] = 1;
        }
    }

    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            if (g.directed[static_cast<size_t>(i) * n + j] ||
                g.directed[static_cast<size_t>(j) * n + i]) {
                g.adjacency[static_cast<size_t>(i) * n + j] = 1;
                g.adjacency[static_cast<size_t>(j) * n + i] = 1;
            }

    // Symmetric normalization with self-loops.
    std::vector<double> degree(n, 0.0);
    for (int i = 0; i < n; ++i) {
        double deg = 1.0;  // self-loop
        for (int j = 0; j < n; ++j) deg += g.adjacency[static_cast<size_t>(i) * n + j];
        degree[i] = 1.0 / std::sqrt(deg);
    }
    g.norm_adjacency = Matrix(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            const double a = (i == j) ? 1.0 : g.adjacency[static_cast<size_t>(i) * n + j];
            if (a != 0.0) g.norm_adjacency.at(i, j) = degree[i] * a * degree[j];
        }
    return g;
}

AttentionBlockParams::AttentionBlockParams(const std::string& name, int d_, int heads_,
                                           Rng& rng) {
    d = d_;
    heads = heads_;
    if (heads < 1 || d % heads != 0)
        throw ShapeError("attention block: d=" + std::to_string(d) +
                         " not divisible by heads=" + std::to_string(heads));
    const int dh = d / heads;
    const double r = std::sqrt(1.0 / d);
    for (int h = 0; h < heads; ++h) {
        const std::string suffix = ".h" + std::to_string(h);
        w_q.emplace_back(name + ".w_q" + suffix, Matrix(d, dh));
        w_k.emplace_back(name + ".w_k" + suffix, Matrix(d, dh));
        w_v.emplace_back(name + ".w_v" + suffix, Matrix(d, dh));
        // Identity-slice start: head h initially projects its own block of
        // dimensions, so query/key similarity begins as plain feature
        // similarity instead of a random bilinear form.
        for (Param* p : {&w_q.back(), &w_k.back(), &w_v.back()}) {
            p->value.fill_uniform(rng, -0.1 * r, 0.1 * r);
            for (int j = 0; j < dh; ++j) p->value.at(h * dh + j, j) += 1.0;
        }
    }
    ln_gain = Param(name + ".ln_gain", Matrix(1, d));
    ln_gain.value.fill(1.0);
    ln_bias = Param(name + ".ln_bias", Matrix(1, d));
}

void AttentionBlockParams::collect(std::vector<Param*>& out) {
    for (auto& p : w_q) out.push_back(&p);
    for (auto& p : w_k) out.push_back(&p);
    for (auto& p : w_v) out.push_back(&p);
    out.push_back(&ln_gain);
    out.push_back(&ln_bias);
}

Tape::Var cross_attention(Tape& tape, Tape::Var query, Tape::Var context,
                          AttentionBlockParams& params, double ln_eps) {
    const int dh = params.d / params.heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    std::vector<Tape::Var> heads;
    heads.reserve(params.heads);
    for (int h = 0; h < params.heads; ++h) {
        const auto q = tape.matmul(query, tape.leaf(params.w_q[h]));
        const auto k = tape.matmul(context, tape.leaf(params.w_k[h]));
        const auto v = tape.matmul(context, tape.leaf(params.w_v[h]));
        const auto weights =
            tape.softmax_rows(tape.scale(tape.matmul(q, tape.transpose(k)), scale));
        heads.push_back(tape.matmul(weights, v));
    }
    const auto concat = tape.concat_cols(heads);
    return tape.layernorm_rows(concat, tape.leaf(params.ln_gain), tape.leaf(params.ln_bias),
                               ln_eps);
}

Tape::Var self_attention(Tape& tape, Tape::Var x, AttentionBlockParams& params,
                         double ln_eps) {
    return cross_attention(tape, x, x, params, ln_eps);
}

Tape::Var gcn_forward(Tape& tape, Tape::Var node_features, const PatchGraph& graph,
                      FusionParams& params) {
    const auto ahat = tape.constant(graph.norm_adjacency);
    const auto h1 = tape.relu(
        tape.matmul(tape.matmul(ahat, node_features), tape.leaf(params.gcn_w1)));
    return tape.matmul(tape.matmul(ahat, h1), tape.leaf(params.gcn_w2));
}

FusionParams::FusionParams(const ModelConfig& cfg, const Matrix& prompt_init,
                           std::uint64_t seed) {
    config = cfg;
    Rng rng(seed);
    self_block = AttentionBlockParams("fusion.self", cfg.d, cfg.heads, rng);
    graph_block = AttentionBlockParams("fusion.graph", cfg.d, cfg.heads, rng);
    text_block = AttentionBlockParams("fusion.text", cfg.d, cfg.heads, rng);
    const double r = std::sqrt(1.0 / cfg.d);
    gcn_w1 = Param("fusion.gcn_w1", Matrix(cfg.d, cfg.d));
    gcn_w2 = Param("fusion.gcn_w2", Matrix(cfg.d, cfg.d));
    fusion_w = Param("fusion.w", Matrix(cfg.d, cfg.d));
    head = Param("fusion.head", Matrix(cfg.d, 1));
    pooled_head = Param("fusion.pooled_head", Matrix(cfg.d, cfg.c));
    gcn_w1.value.fill_uniform(rng, -r, r);
    gcn_w2.value.fill_uniform(rng, -r, r);
    // Near-identity start: the fused representation begins as the raw
    // concatenation and learns its mixing from there.
    fusion_w.value.fill_uniform(rng, -0.1 * r, 0.1 * r);
    for (int i = 0; i < cfg.d; ++i) fusion_w.value.at(i, i) += 1.0;
    head.value.fill_uniform(rng, -r, r);
    pooled_head.value.fill_uniform(rng, -r, r);
    if (prompt_init.rows != cfg.t || prompt_init.cols != cfg.d)
        throw ShapeError("prompt init must be " + std::to_string(cfg.t) + "x" +
                         std::to_string(cfg.d) + ", got " + prompt_init.shape_str());
    prompts = Param("fusion.prompts", prompt_init);
}

std::vector<Param*> FusionParams::trainable() {
    std::vector<Param*> out;
    self_block.collect(out);
    if (config.use_gcn) {
        out.push_back(&gcn_w1);
        out.push_back(&gcn_w2);
        if (config.fusion_mode == FusionMode::Ours) graph_block.collect(out);
    }
    if (config.use_gcn && config.fusion_mode == FusionMode::Ours)
        out.push_back(&fusion_w);
    if (config.use_text) {
        text_block.collect(out);
        out.push_back(&head);
        if (config.t > 0) out.push_back(&prompts);
    } else {
        out.push_back(&pooled_head);
    }
    return out;
}

std::vector<Param*> FusionParams::all_params() {
    std::vector<Param*> out;
    self_block.collect(out);
    graph_block.collect(out);
    text_block.collect(out);
    out.push_back(&gcn_w1);
    out.push_back(&gcn_w2);
    out.push_back(&fusion_w);
    out.push_back(&head);
    out.push_back(&prompts);
    out.push_back(&pooled_head);
    return out;
}

FusionTrace forward_full(Tape& tape, const Matrix& selected_features,
                         const PatchGraph& graph, const Matrix& frozen_text,
                         FusionParams& params) {
    const ModelConfig& cfg = params.config;
    if (selected_features.cols != cfg.d)
        throw ShapeError("forward_full: features " + selected_features.shape_str() +
                         " do not match d=" + std::to_string(cfg.d));
    const auto features = tape.constant(selected_features);
    Tape::Var v_g = -1;
    if (cfg.use_gcn) {
        if (graph.n != selected_features.rows)
            throw ShapeError("forward_full: graph has " + std::to_string(graph.n) +
                             " nodes for " + std::to_string(selected_features.rows) +
                             " patches");
        v_g = gcn_forward(tape, features, graph, params);
    }
    return forward_from_vars(tape, features, v_g, frozen_text, params);
}

FusionTrace forward_from_vars(Tape& tape, Tape::Var selected, Tape::Var v_g,
                              const Matrix& frozen_text, FusionParams& params) {
    const ModelConfig& cfg = params.config;
    FusionTrace trace;
    trace.v_att = self_attention(tape, selected, params.self_block, cfg.ln_eps);

    if (v_g >= 0) {
        trace.v_g = v_g;
        switch (cfg.fusion_mode) {
            case FusionMode::Ours: {
                trace.f_vg = cross_attention(tape, trace.v_att, trace.v_g,
                                             params.graph_block, cfg.ln_eps);
                const auto cat = tape.concat_rows(trace.v_att, trace.f_vg);
                trace.f_vg_prime = tape.matmul(cat, tape.leaf(params.fusion_w));
                break;
            }
            case FusionMode::Cat:
                trace.f_vg_prime = tape.concat_rows(trace.v_att, trace.v_g);
                break;
            case FusionMode::Add:
                trace.f_vg_prime = tape.add(trace.v_att, trace.v_g);
                break;
        }
    } else {
        trace.f_vg_prime = trace.v_att;
    }

    if (cfg.use_text) {
        Tape::Var text;
        const auto frozen = tape.constant(frozen_text);
        if (cfg.t > 0)
            text = tape.concat_rows(frozen, tape.leaf(params.prompts));
        else
            text = frozen;
        trace.f_vgt = cross_attention(tape, text, trace.f_vg_prime, params.text_block,
                                      cfg.ln_eps);
        auto class_rows = tape.slice_rows(trace.f_vgt, 0, cfg.c);
        if (cfg.t > 0) {
            // Attention rows are independent, so prompt rows can only reach
            // the logits through an explicit context term.
            const auto prompt_ctx =
                tape.mean_rows(tape.slice_rows(trace.f_vgt, cfg.c, cfg.c + cfg.t));
            Matrix ones(cfg.c, 1);
            ones.fill(1.0);
            class_rows =
                tape.add(class_rows, tape.matmul(tape.constant(ones), prompt_ctx));
        }
        trace.logits = tape.matmul(class_rows, tape.leaf(params.head));  // C x 1
    } else {
        const auto pooled = tape.mean_rows(trace.f_vg_prime);  // 1 x d
        trace.logits = tape.transpose(tape.matmul(pooled, tape.leaf(params.pooled_head)));
    }
    return trace;
}

std::string FusionTrace::to_text(const Tape& tape) const {
    std::ostringstream os;
    auto shape = [&](const char* name, Tape::Var v) {
        if (v >= 0) os << "  " << name << ": " << tape.value(v).shape_str() << "\n";
    };
    os << "fusion trace\n";
    shape("v_att", v_att);
    shape("v_g", v_g);
    shape("f_vg", f_vg);
    shape("f_vg_prime", f_vg_prime);
    shape("f_vgt", f_vgt);
    shape("logits", logits);
    return os.str();
}

}  // namespace emmpd
