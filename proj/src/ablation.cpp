#include "emmpd/ablation.hpp"

#include <algorithm>
#include <iomanip>
#include <sstream>

namespace emmpd {

AblationMode ablation_mode_from_name(const std::string& s) {
    if (s == "modules") return AblationMode::Modules;
    if (s == "sampling") return AblationMode::Sampling;
    if (s == "window") return AblationMode::Window;
    if (s == "gcn_placement") return AblationMode::GcnPlacement;
    if (s == "fusion") return AblationMode::Fusion;
    if (s == "k_sweep") return AblationMode::KSweep;
    if (s == "alpha_sweep") return AblationMode::AlphaSweep;
    if (s == "gamma_sweep") return AblationMode::GammaSweep;
    throw ConfigError("unknown ablation mode \"" + s + "\"");
}

const char* ablation_mode_name(AblationMode m) {
    switch (m) {
        case AblationMode::Modules: return "modules";
        case AblationMode::Sampling: return "sampling";
        case AblationMode::Window: return "window";
        case AblationMode::GcnPlacement: return "gcn_placement";
        case AblationMode::Fusion: return "fusion";
        case AblationMode::KSweep: return "k_sweep";
        case AblationMode::AlphaSweep: return "alpha_sweep";
        case AblationMode::GammaSweep: return "gamma_sweep";
    }
    throw ConfigError("unknown ablation mode");
}

std::vector<std::pair<std::string, TrainConfig>> ablation_variants(
    const AblationPlan& plan, const TrainConfig& base) {
    std::vector<std::pair<std::string, TrainConfig>> out;
    TrainConfig cfg = base;
    cfg.seed = plan.seed;

    auto push = [&](std::string name, TrainConfig c) {
        out.emplace_back(std::move(name), std::move(c));
    };

    switch (plan.mode) {
        case AblationMode::Modules: {
            // Progressive rows: each partial keeps a self-attention layer and
            // a classification head; graph and text branches off by default.
            auto row = [&](const char* name, bool com2d, bool attsel, bool gcn, bool text) {
                TrainConfig c = cfg;
                c.sampling = SamplingMode::Tsps;
                c.use_2dcom = com2d;
                c.use_attsel = attsel;
                c.use_gcn = gcn;
                c.use_text = text;
                push(name, c);
            };
            row("2dcom", true, false, false, false);
            row("attsel", false, true, false, false);
            row("2dcom+attsel", true, true, false, false);
            row("2dcom+attsel+gcn", true, true, true, false);
            row("2dcom+attsel+text", true, true, false, true);
            row("full", true, true, true, true);
            break;
        }
        case AblationMode::Sampling: {
            auto row = [&](const char* name, SamplingMode m) {
                TrainConfig c = cfg;
                c.sampling = m;
                push(name, c);
            };
            row("random", SamplingMode::Random);
            row("pos-k", SamplingMode::PosK);
            row("1dcom", SamplingMode::OneDimCom);
            row("tsps", SamplingMode::Tsps);
            break;
        }
        case AblationMode::Window: {
            std::vector<double> grid = plan.grid;
            if (grid.empty()) grid = {6, 8, 10};
            for (double w : grid) {
                TrainConfig c = cfg;
                c.w = static_cast<int>(w);
                push("w=" + std::to_string(c.w), c);
            }
            break;
        }
        case AblationMode::GcnPlacement: {
            TrainConfig before = cfg, after = cfg;
            before.gcn_before = true;
            after.gcn_before = false;
            push("before", before);
            push("after", after);
            break;
        }
        case AblationMode::Fusion: {
            auto row = [&](const char* name, FusionMode m) {
                TrainConfig c = cfg;
                c.fusion_mode = m;
                push(name, c);
            };
            row("cat", FusionMode::Cat);
            row("add", FusionMode::Add);
            row("ours", FusionMode::Ours);
            break;
        }
        case AblationMode::KSweep: {
            std::vector<double> grid = plan.grid;
            if (grid.empty()) grid = {16, 32, 64, 96};
            for (double k : grid) {
                TrainConfig c = cfg;
                c.top_k = static_cast<int>(k);
                push("k=" + std::to_string(c.top_k), c);
            }
            break;
        }
        case AblationMode::AlphaSweep: {
            std::vector<double> grid = plan.grid;
            if (grid.empty()) grid = {0.1, 0.25, 0.5, 0.75};
            for (double a : grid) {
                TrainConfig c = cfg;
                c.alpha = a;
                std::ostringstream name;
                name << "alpha=" << a;
                push(name.str(), c);
            }
            break;
        }
        case AblationMode::GammaSweep: {
            std::vector<double> grid = plan.grid;
            if (grid.empty()) grid = {0.5, 1.0, 2.0, 5.0};
            for (double g : grid) {
                TrainConfig c = cfg;
                c.gamma = g;
                std::ostringstream name;
                name << "gamma=" << g;
                push(name.str(), c);
            }
            break;
        }
    }
    return out;
}

AblationReport run_ablation(const AblationPlan& plan, const DatasetManifest& manifest,
                            const TrainConfig& base) {
    AblationReport report;
    report.mode = plan.mode;
    for (auto& [name, cfg] : ablation_variants(plan, base)) {
        Pipeline pipeline(manifest, cfg);
        TrainResult result = pipeline.train();
        AblationRow row;
        row.name = name;
        row.config = cfg;
        row.val = pipeline.evaluate(result, "val");
        if (!manifest.test.empty()) row.test = pipeline.evaluate(result, "test");
        row.best_epoch = result.best_epoch;
        row.best_val_loss = result.best_val_loss;
        report.rows.push_back(std::move(row));
    }
    std::stable_sort(report.rows.begin(), report.rows.end(),
                     [](const AblationRow& a, const AblationRow& b) {
                         return a.val.f1 > b.val.f1;
                     });
    return report;
}

std::string AblationReport::to_text() const {
    std::ostringstream os;
    os << "ablation mode: " << ablation_mode_name(mode) << "\n";
    os << std::left << std::setw(22) << "variant" << std::right << std::setw(10) << "val_f1"
       << std::setw(10) << "val_acc" << std::setw(10) << "val_roc" << std::setw(10)
       << "val_pr" << std::setw(10) << "test_f1" << std::setw(8) << "epoch" << "\n";
    os << std::fixed << std::setprecision(4);
    for (const AblationRow& r : rows) {
        os << std::left << std::setw(22) << r.name << std::right << std::setw(10) << r.val.f1
           << std::setw(10) << r.val.acc << std::setw(10) << r.val.roc_auc << std::setw(10)
           << r.val.pr_auc << std::setw(10) << r.test.f1 << std::setw(8) << r.best_epoch
           << "\n";
    }
    return os.str();
}

std::string AblationReport::to_kv() const {
    std::ostringstream os;
    os << "mode " << ablation_mode_name(mode) << "\n";
    for (size_t i = 0; i < rows.size(); ++i) {
        const AblationRow& r = rows[i];
        const std::string p = "row" + std::to_string(i) + ".";
        os << p << "name " << r.name << "\n"
           << p << "val.f1 " << r.val.f1 << "\n"
           << p << "val.acc " << r.val.acc << "\n"
           << p << "val.roc_auc " << r.val.roc_auc << "\n"
           << p << "val.pr_auc " << r.val.pr_auc << "\n"
           << p << "test.f1 " << r.test.f1 << "\n"
           << p << "best_epoch " << r.best_epoch << "\n";
    }
    return os.str();
}

}  // namespace emmpd
