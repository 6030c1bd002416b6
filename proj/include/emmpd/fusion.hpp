#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "emmpd/bag.hpp"
#include "emmpd/tape.hpp"

namespace emmpd {

// KNN graph over selected patches: directed k-nearest by grid distance per
// slide, symmetrized, self-loops added, symmetric-normalized.
struct PatchGraph {
    int n = 0;
    std::vector<std::uint8_t> directed;  // n*n, row i = neighbors of i
    std::vector<std::uint8_t> adjacency; // symmetrized, zero diagonal
    Matrix norm_adjacency;               // D^{-1/2} (A + I) D^{-1/2}

    bool edge(int i, int j) const { return adjacency[static_cast<size_t>(i) * n + j] != 0; }
};

PatchGraph knn_graph(const std::vector<PatchBag::Coord>& coords, int k);

// How V_att and the graph branch are combined before the text stage.
enum class FusionMode { Ours, Cat, Add };

struct ModelConfig {
    int d = 0;
    int c = 0;
    int t = 0;
    int heads = 4;
    int k_nn = 8;
    double ln_eps = 1e-5;
    bool use_gcn = true;
    bool use_text = true;
    FusionMode fusion_mode = FusionMode::Ours;
};

// One multi-head attention block: per-head W_q/W_k/W_v of shape d x (d/h),
// concatenated heads followed by row layernorm. No residual path.
struct AttentionBlockParams {
    int d = 0, heads = 0;
    std::vector<Param> w_q, w_k, w_v;  // one per head
    Param ln_gain, ln_bias;

    AttentionBlockParams() = default;
    AttentionBlockParams(const std::string& name, int d, int heads, Rng& rng);
    void collect(std::vector<Param*>& out);
};

struct FusionParams {
    ModelConfig config;
    AttentionBlockParams self_block;   // Eq over B''
    AttentionBlockParams graph_block;  // V_att queries V_g
    AttentionBlockParams text_block;   // T queries F'_vg
    Param gcn_w1, gcn_w2;  // d x d
    Param fusion_w;        // d x d, applied per row of the 2K x d concat
    Param head;            // d x 1, shared over class-aligned text rows
    Param prompts;         // t x d learnable text rows
    Param pooled_head;     // d x C, only used by text-disabled ablations

    FusionParams() = default;
    FusionParams(const ModelConfig& config, const Matrix& prompt_init, std::uint64_t seed);
    // Parameters that receive gradients for the given configuration.
    std::vector<Param*> trainable();
    std::vector<Param*> all_params();
};

struct FusionTrace {
    Tape::Var v_att = -1;       // K x d
    Tape::Var v_g = -1;         // K x d
    Tape::Var f_vg = -1;        // K x d
    Tape::Var f_vg_prime = -1;  // 2K x d (mode-dependent row count)
    Tape::Var f_vgt = -1;       // (C+t) x d
    Tape::Var logits = -1;      // C x 1
    std::string to_text(const Tape& tape) const;
};

Tape::Var gcn_forward(Tape& tape, Tape::Var node_features, const PatchGraph& graph,
                      FusionParams& params);

Tape::Var self_attention(Tape& tape, Tape::Var x, AttentionBlockParams& params,
                         double ln_eps = 1e-5);
Tape::Var cross_attention(Tape& tape, Tape::Var query, Tape::Var context,
                          AttentionBlockParams& params, double ln_eps = 1e-5);

// Full hybrid stack: self-attention, GCN branch, graph fusion, text fusion,
// class-row head. `frozen_text` is the C x d frozen prompt block; learnable
// rows come from params.prompts.
FusionTrace forward_full(Tape& tape, const Matrix& selected_features,
                         const PatchGraph& graph, const Matrix& frozen_text,
                         FusionParams& params);

// Same stack but starting from tape variables, with the graph branch already
// evaluated (v_g < 0 skips it). Used by the GCN-placement ablation, where the
// graph is built over B' and rows are gathered after selection.
FusionTrace forward_from_vars(Tape& tape, Tape::Var selected, Tape::Var v_g,
                              const Matrix& frozen_text, FusionParams& params);

}  // namespace emmpd
