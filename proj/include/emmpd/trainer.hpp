#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "emmpd/bag.hpp"
#include "emmpd/fusion.hpp"
#include "emmpd/metrics.hpp"
#include "emmpd/select.hpp"

namespace emmpd {

// How the K patches of B'' are chosen from the raw bag.
enum class SamplingMode { Tsps, Random, PosK, OneDimCom };

struct TrainConfig {
    double lr = 1e-4;
    int epochs = 50;
    int patience = 10;
    double alpha = 0.25;
    double gamma = 2.0;
    int w = 8;
    int top_k = 64;   // desk-scale default; the full-scale setting is 4000
    int k_nn = 8;
    int heads = 4;
    int t = 4;
    std::uint64_t seed = 1;
    TaskMode task_mode = TaskMode::Multilabel;
    int threads = 1;  // evaluation fan-out only; training is sequential

    // Selector pretraining (phase 1).
    int selector_epochs = 15;
    double selector_lr = 1e-3;
    int selector_hidden = 64;

    // Ablation switches; defaults are the full pipeline.
    SamplingMode sampling = SamplingMode::Tsps;
    bool use_2dcom = true;
    bool use_attsel = true;
    bool use_gcn = true;
    bool use_text = true;
    FusionMode fusion_mode = FusionMode::Ours;
    bool gcn_before = false;      // build the graph on B' instead of B''
    bool shuffle_labels = false;  // control experiment

    void validate() const;
};

struct EpochStats {
    int epoch = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
    double val_f1 = 0.0;
    double lr = 0.0;
};

// Model selection and early stopping monitor validation macro F1, with
// validation loss as the tiebreak.
struct TrainResult {
    SelectorParams selector;
    FusionParams fusion;
    std::vector<EpochStats> history;
    int best_epoch = -1;
    double best_val_loss = 0.0;
    double best_val_f1 = 0.0;
    bool selector_trained = false;
};

// Loads the dataset behind a manifest, runs selection once per bag, then the
// two training phases. Deterministic given config.seed; batch size 1.
class Pipeline {
public:
    Pipeline(const DatasetManifest& manifest, const TrainConfig& config);

    TrainResult train();
    MetricsReport evaluate(TrainResult& result, const std::string& split) const;

    // Per-bag scores for the given split (sigmoid for multilabel, softmax for
    // multiclass), in manifest order.
    std::vector<std::vector<double>> scores(TrainResult& result,
                                            const std::string& split) const;

    const DatasetManifest& manifest() const { return manifest_; }
    const TrainConfig& config() const { return config_; }

    // Selection reports for every bag across all splits (the compress stage
    // reporting path also runs through here).
    std::vector<SelectionReport> selection_reports() const;

private:
    struct LoadedBag {
        PatchBag bag;
        std::vector<int> label;
    };
    struct PreparedBag {
        Matrix features;                      // B'' rows
        std::vector<PatchBag::Coord> coords;  // matching rows
        PatchGraph graph;                     // over B'' (standard placement)
        // gcn_before: graph over B' plus a K x N' gather matrix
        Matrix stage1_features;  // B' (only kept when gcn_before)
        PatchGraph stage1_graph;
        Matrix gather;
        std::vector<int> label;
    };

    std::vector<LoadedBag>& split_bags(const std::string& name);
    const std::vector<LoadedBag>& split_bags(const std::string& name) const;

    std::vector<int> stage1_indices(const LoadedBag& lb, SelectionReport* report) const;
    std::vector<int> stage2_indices(const LoadedBag& lb, const std::vector<int>& stage1,
                                    TrainResult& result, std::uint64_t bag_stream,
                                    SelectionReport* report) const;
    PreparedBag prepare(const LoadedBag& lb, TrainResult& result,
                        std::uint64_t bag_stream) const;
    double bag_loss(PreparedBag& pb, TrainResult& result, bool backward_pass,
                    std::vector<double>* out_scores = nullptr) const;

    DatasetManifest manifest_;
    TrainConfig config_;
    Matrix frozen_text_;
    Matrix prompt_init_;
    std::vector<LoadedBag> train_, val_, test_;
};

void write_history_csv(const std::vector<EpochStats>& history,
                       const std::filesystem::path& path);

}  // namespace emmpd
