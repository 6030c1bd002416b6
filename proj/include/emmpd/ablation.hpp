#pragma once

#include <string>
#include <vector>

#include "emmpd/trainer.hpp"

namespace emmpd {

enum class AblationMode {
    Modules,       // progressive compression/graph/text toggles
    Sampling,      // random / pos-k / 1DCom / TSPS
    Window,        // window-size grid
    GcnPlacement,  // graph built before vs. after top-K selection
    Fusion,        // cat / add / ours
    KSweep,        // top-K grid
    AlphaSweep,    // focal alpha grid
    GammaSweep,    // focal gamma grid
};

AblationMode ablation_mode_from_name(const std::string& s);
const char* ablation_mode_name(AblationMode m);

struct AblationPlan {
    AblationMode mode = AblationMode::Sampling;
    std::vector<double> grid;  // window/k/alpha/gamma sweeps; empty = defaults
    std::uint64_t seed = 1;
};

struct AblationRow {
    std::string name;
    TrainConfig config;
    MetricsReport val;
    MetricsReport test;
    int best_epoch = -1;
    double best_val_loss = 0.0;
};

struct AblationReport {
    AblationMode mode = AblationMode::Sampling;
    std::vector<AblationRow> rows;  // ranked by validation macro F1, descending

    std::string to_text() const;  // aligned table
    std::string to_kv() const;    // machine-readable key/value lines
};

// Builds one TrainConfig per study variant from the base config.
std::vector<std::pair<std::string, TrainConfig>> ablation_variants(
    const AblationPlan& plan, const TrainConfig& base);

// Trains and evaluates every variant on the shared seed and ranks the rows.
AblationReport run_ablation(const AblationPlan& plan, const DatasetManifest& manifest,
                            const TrainConfig& base);

}  // namespace emmpd
