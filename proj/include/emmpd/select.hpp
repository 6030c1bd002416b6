#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "emmpd/bag.hpp"
#include "emmpd/gradcheck.hpp"
#include "emmpd/optimizer.hpp"
#include "emmpd/tape.hpp"

namespace emmpd {

// One spatial window: member patch indices into the bag, grouped by
// floor-division of the grid coordinates. Windows never span slides.
struct WindowIndex {
    int slide = 0;
    int wrow = 0;
    int wcol = 0;
    std::vector<int> members;  // ascending bag indices
};

struct WindowStats {
    double theta = 0.0;
    int members = 0;
    int removed = 0;
};

// Per-bag record of both selection stages.
struct SelectionReport {
    std::string patient_id;
    int n = 0;        // |B|
    int n_prime = 0;  // |B'| after 2D compression
    int k = 0;        // |B''| after top-K
    std::vector<int> kept_compress;  // ascending original indices
    std::vector<int> kept_topk;      // ascending original indices
    std::vector<WindowStats> windows;
    std::vector<double> attention;   // softmax weights over B'

    double removal_rate() const {
        return n == 0 ? 0.0 : 1.0 - static_cast<double>(n_prime) / n;
    }
    std::string to_text() const;
};

// Row-wise L2 normalization; rows with norm < 1e-12 stay zero and are flagged.
Matrix normalize_embeddings(const Matrix& embeddings, std::vector<int>* degenerate = nullptr);

std::vector<WindowIndex> window_partition(const PatchBag& bag, int w);

// The theta rule: mean cosine similarity over unordered member pairs, then a
// raster scan removing the later patch of any still-live pair above theta.
std::vector<int> compress_window(const std::vector<int>& members, const Matrix& normalized);

struct CompressResult {
    std::vector<int> kept;  // ascending bag indices
    std::vector<WindowStats> windows;
};

CompressResult two_dim_compress(const PatchBag& bag, int w);

// 1D baseline: the same similarity rule over raster-order runs of w*w
// consecutive patches, ignoring the 2D layout.
CompressResult one_dim_compress(const PatchBag& bag, int w);

// Gated-attention scorer pretrained as a standalone MIL classifier, then
// frozen for top-K selection.
struct SelectorParams {
    int d = 0, h = 0, c = 0;
    Param v_attn;  // d x h (tanh branch)
    Param u_attn;  // d x h (sigmoid gate)
    Param w_attn;  // h x 1
    Param head;    // d x C, pretraining head

    SelectorParams() = default;
    SelectorParams(int d, int h, int c, std::uint64_t seed);
    std::vector<Param*> trainable();
};

// Softmax attention weights over the rows of features (built on the tape so
// pretraining can differentiate through it). Returns the 1 x K' weights node.
Tape::Var gated_attention_scores(Tape& tape, Tape::Var features, SelectorParams& params);

// Forward-only scoring for frozen selectors.
std::vector<double> gated_attention_weights(const Matrix& features, SelectorParams& params);

// K highest-scoring indices, ties toward the lower index, output ascending.
std::vector<int> top_k_select(const std::vector<double>& scores, int k);

struct SelectorTrainConfig {
    int epochs = 15;
    double lr = 1e-3;
    double alpha = 0.25;
    double gamma = 2.0;
    int hidden = 64;
    std::uint64_t seed = 1;
};

struct SelectorBag {
    Matrix features;  // compressed bag B'
    std::vector<int> label;
};

// Attention-weighted mean -> linear head -> FocalBCE, Adam, batch size 1.
// Returns per-epoch mean training loss in history.
SelectorParams pretrain_selector(const std::vector<SelectorBag>& bags, int c,
                                 const SelectorTrainConfig& config,
                                 std::vector<double>* history = nullptr);

}  // namespace emmpd
