#include "emmpd/gradsuite.hpp"

#include "emmpd/fusion.hpp"
#include "emmpd/select.hpp"

namespace emmpd {

std::vector<GradSuiteEntry> run_gradient_suite(double tolerance, bool corrupt) {
    const int k = 6, d = 8, heads = 2, c = 2, t = 1, hidden = 3;
    Rng rng(0x677261647375ULL);

    Matrix features(k, d);
    features.fill_uniform(rng, -1.0, 1.0);
    std::vector<PatchBag::Coord> coords;
    for (int i = 0; i < k; ++i)
        coords.push_back({0, static_cast<std::int32_t>(i % 3),
                          static_cast<std::int32_t>(i / 3)});
    const PatchGraph graph = knn_graph(coords, 2);
    Matrix frozen(c, d);
    frozen.fill_uniform(rng, -1.0, 1.0);
    Matrix prompt_init(t, d);
    prompt_init.fill_uniform(rng, -0.1, 0.1);
    const std::vector<int> label = {1, 0};

    ModelConfig cfg;
    cfg.d = d;
    cfg.c = c;
    cfg.t = t;
    cfg.heads = heads;
    FusionParams fusion(cfg, prompt_init, 0x66757372ULL);
    SelectorParams selector(d, hidden, c, 0x73656cULL);

    auto fusion_loss = [&](bool backward_pass) {
        Tape tape;
        const FusionTrace trace = forward_full(tape, features, graph, frozen, fusion);
        const auto loss = tape.focal_bce(trace.logits, label, 0.25, 2.0);
        const double v = tape.value(loss).data[0];
        if (backward_pass) {
            tape.backward(loss);
            if (corrupt) fusion.head.grad.data[0] += 1.0;
        }
        return v;
    };
    auto selector_loss = [&](bool backward_pass) {
        Tape tape;
        const auto x = tape.constant(features);
        const auto weights = gated_attention_scores(tape, x, selector);
        const auto pooled = tape.matmul(weights, x);  // 1 x d
        const auto logits = tape.transpose(tape.matmul(pooled, tape.leaf(selector.head)));
        const auto loss = tape.focal_bce(logits, label, 0.25, 2.0);
        const double v = tape.value(loss).data[0];
        if (backward_pass) tape.backward(loss);
        return v;
    };

    const double step = 1e-5;
    std::vector<GradSuiteEntry> report;
    auto check = [&](const std::string& group, const std::function<double(bool)>& f,
                     std::vector<Param*> params) {
        GradSuiteEntry e;
        e.group = group;
        e.rel_err = gradcheck(f, params, step);
        e.pass = e.rel_err < tolerance;
        report.push_back(std::move(e));
    };

    check("selector.gated_attention", selector_loss,
          {&selector.v_attn, &selector.u_attn, &selector.w_attn});
    check("selector.head", selector_loss, {&selector.head});

    std::vector<Param*> block;
    auto block_params = [&](AttentionBlockParams& b) {
        block.clear();
        b.collect(block);
        return block;
    };
    check("fusion.self_attention", fusion_loss, block_params(fusion.self_block));
    check("fusion.graph_attention", fusion_loss, block_params(fusion.graph_block));
    check("fusion.text_attention", fusion_loss, block_params(fusion.text_block));
    check("fusion.gcn", fusion_loss, {&fusion.gcn_w1, &fusion.gcn_w2});
    check("fusion.w", fusion_loss, {&fusion.fusion_w});
    check("fusion.prompts", fusion_loss, {&fusion.prompts});
    check("fusion.head", fusion_loss, {&fusion.head});
    return report;
}

}  // namespace emmpd
