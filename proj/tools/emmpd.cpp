// emmpd: synthetic data generation, patch compression, training, evaluation,
// ablation studies and the gradient-check suite behind one binary.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "emmpd/ablation.hpp"
#include "emmpd/checkpoint.hpp"
#include "emmpd/gradsuite.hpp"
#include "emmpd/synthetic.hpp"
#include "emmpd/trainer.hpp"

namespace fs = std::filesystem;
using namespace emmpd;

namespace {

// Exit codes: 0 success, 1 usage, 2 data/validation, 3 numerical.
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

std::uint64_t default_seed() {
    if (const char* env = std::getenv("EMMPD_SEED")) return std::strtoull(env, nullptr, 10);
    return 1;
}

void add_train_flags(CLI::App* cmd, TrainConfig& cfg) {
    cmd->add_option("--lr", cfg.lr, "initial learning rate (linear decay to 0)")
        ->capture_default_str();
    cmd->add_option("--epochs", cfg.epochs, "epoch budget")->capture_default_str();
    cmd->add_option("--patience", cfg.patience, "early-stopping patience")
        ->capture_default_str();
    cmd->add_option("--alpha", cfg.alpha, "focal loss alpha")->capture_default_str();
    cmd->add_option("--gamma", cfg.gamma, "focal loss gamma")->capture_default_str();
    cmd->add_option("--w", cfg.w, "compression window size")->capture_default_str();
    cmd->add_option("--top-k", cfg.top_k, "patches kept by attention selection")
        ->capture_default_str();
    cmd->add_option("--k-nn", cfg.k_nn, "graph neighbors per patch")->capture_default_str();
    cmd->add_option("--heads", cfg.heads, "attention heads")->capture_default_str();
    cmd->add_option("--t", cfg.t, "learnable prompt rows")->capture_default_str();
    cmd->add_option("--seed", cfg.seed, "run seed (EMMPD_SEED fallback)")
        ->capture_default_str();
    cmd->add_option("--threads", cfg.threads, "evaluation fan-out threads")
        ->capture_default_str();
    cmd->add_option("--selector-epochs", cfg.selector_epochs, "selector pretraining epochs")
        ->capture_default_str();
    cmd->add_option("--selector-lr", cfg.selector_lr, "selector pretraining lr")
        ->capture_default_str();
    cmd->add_option("--selector-hidden", cfg.selector_hidden, "selector hidden width")
        ->capture_default_str();
    cmd->add_option("--sampling", [&cfg](const std::vector<std::string>& v) {
            const std::string& s = v.back();
            if (s == "random") cfg.sampling = SamplingMode::Random;
            else if (s == "pos-k") cfg.sampling = SamplingMode::PosK;
            else if (s == "1dcom") cfg.sampling = SamplingMode::OneDimCom;
            else if (s == "tsps") cfg.sampling = SamplingMode::Tsps;
            else return false;
            return true;
        }, "sampling mode: tsps|random|pos-k|1dcom");
    cmd->add_option("--fusion", [&cfg](const std::vector<std::string>& v) {
            const std::string& s = v.back();
            if (s == "ours") cfg.fusion_mode = FusionMode::Ours;
            else if (s == "cat") cfg.fusion_mode = FusionMode::Cat;
            else if (s == "add") cfg.fusion_mode = FusionMode::Add;
            else return false;
            return true;
        }, "fusion mode: ours|cat|add");
    cmd->add_flag_function("--no-2dcom", [&cfg](std::int64_t) { cfg.use_2dcom = false; },
                           "skip window compression");
    cmd->add_flag_function("--no-attsel", [&cfg](std::int64_t) { cfg.use_attsel = false; },
                           "skip attention selection (keep first K)");
    cmd->add_flag_function("--no-gcn", [&cfg](std::int64_t) { cfg.use_gcn = false; },
                           "disable the graph branch");
    cmd->add_flag_function("--no-text", [&cfg](std::int64_t) { cfg.use_text = false; },
                           "disable the text branch (mean-pool head)");
    cmd->add_flag("--gcn-before", cfg.gcn_before,
                  "build the graph before top-K selection");
    cmd->add_flag("--shuffle-labels", cfg.shuffle_labels,
                  "control run with permuted train/val labels");
}

int cmd_synth(const SyntheticSpec& spec, const fs::path& out, bool force) {
    if (fs::exists(out) && !fs::is_empty(out) && !force)
        throw ConfigError("output directory " + out.string() +
                          " is not empty; pass --force to overwrite");
    fs::create_directories(out);
    const SyntheticSummary s = generate_synthetic(spec, out);
    std::cout << "manifest " << s.manifest_path.string() << "\n"
              << "text_bank " << s.bank_path.string() << "\n"
              << "bags " << s.num_bags << "\n"
              << "patches " << s.total_patches << "\n"
              << "duplicates " << s.total_duplicates << "\n"
              << "signature_patches " << s.total_signature << "\n";
    return 0;
}

int cmd_compress(const fs::path& manifest_path, int w, const fs::path& out) {
    const DatasetManifest manifest = read_manifest(manifest_path);
    std::ofstream report_file;
    if (!out.empty()) {
        report_file.open(out, std::ios::trunc);
        if (!report_file)
            throw IoError(IoError::Code::WriteFailed, "cannot write " + out.string());
    }
    long long total = 0, kept = 0;
    auto run_split = [&](const std::vector<ManifestEntry>& entries) {
        for (const ManifestEntry& e : entries) {
            const PatchBag bag = read_bag(manifest.resolve(e.path), manifest.d);
            const CompressResult r = two_dim_compress(bag, w);
            SelectionReport rep;
            rep.patient_id = e.patient_id;
            rep.n = bag.n();
            rep.n_prime = static_cast<int>(r.kept.size());
            rep.kept_compress = r.kept;
            rep.windows = r.windows;
            total += rep.n;
            kept += rep.n_prime;
            std::cout << e.patient_id << " n=" << rep.n << " n'=" << rep.n_prime
                      << " removal=" << rep.removal_rate() << "\n";
            if (report_file) report_file << rep.to_text() << "\n";
        }
    };
    run_split(manifest.train);
    run_split(manifest.val);
    run_split(manifest.test);
    std::cout << "aggregate_removal " << (1.0 - static_cast<double>(kept) / total) << "\n";
    return 0;
}

int cmd_train(const fs::path& manifest_path, const TrainConfig& cfg, const fs::path& out) {
    const DatasetManifest manifest = read_manifest(manifest_path);
    fs::create_directories(out);
    Pipeline pipeline(manifest, cfg);
    TrainResult result = pipeline.train();
    save_checkpoint(result, cfg, manifest.d, manifest.c, out / "checkpoint.empc");
    write_history_csv(result.history, out / "history.csv");
    std::cout << "best_epoch " << result.best_epoch << "\n"
              << "best_val_loss " << result.best_val_loss << "\n";
    const MetricsReport val = pipeline.evaluate(result, "val");
    std::cout << "validation metrics\n" << val.to_text(manifest.class_names);
    std::ofstream(out / "val_metrics.txt") << val.to_kv();
    return 0;
}

int cmd_eval(const fs::path& manifest_path, const fs::path& ckpt_path,
             const std::string& split, int threads) {
    const DatasetManifest manifest = read_manifest(manifest_path);
    LoadedCheckpoint ck = load_checkpoint(ckpt_path);
    if (ck.d != manifest.d)
        throw IoError(IoError::Code::DimMismatch,
                      "checkpoint d=" + std::to_string(ck.d) + " does not match manifest d=" +
                          std::to_string(manifest.d));
    if (ck.c != manifest.c)
        throw IoError(IoError::Code::ClassMismatch,
                      "checkpoint C=" + std::to_string(ck.c) + " does not match manifest C=" +
                          std::to_string(manifest.c));
    ck.config.task_mode = manifest.task_mode;
    ck.config.threads = threads;
    Pipeline pipeline(manifest, ck.config);
    const MetricsReport report = pipeline.evaluate(ck.result, split);
    std::cout << report.to_text(manifest.class_names);
    return 0;
}

int cmd_ablate(const fs::path& manifest_path, const std::string& mode_name,
               const std::vector<double>& grid, const TrainConfig& base,
               const fs::path& out) {
    const DatasetManifest manifest = read_manifest(manifest_path);
    AblationPlan plan;
    plan.mode = ablation_mode_from_name(mode_name);
    plan.grid = grid;
    plan.seed = base.seed;
    const AblationReport report = run_ablation(plan, manifest, base);
    std::cout << report.to_text();
    if (!out.empty()) {
        std::ofstream os(out, std::ios::trunc);
        if (!os) throw IoError(IoError::Code::WriteFailed, "cannot write " + out.string());
        os << report.to_kv();
    }
    return 0;
}

int cmd_gradcheck(double tolerance, bool corrupt) {
    const auto report = run_gradient_suite(tolerance, corrupt);
    bool all_pass = true;
    for (const GradSuiteEntry& e : report) {
        std::cout << e.group << " rel_err=" << e.rel_err
                  << (e.pass ? " pass" : " FAIL") << "\n";
        all_pass = all_pass && e.pass;
    }
    std::cout << (all_pass ? "all checks passed" : "gradient check FAILED") << "\n";
    return all_pass ? 0 : kExitNumeric;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"emmpd: multi-slide patch selection, hybrid fusion and training"};
    app.require_subcommand(1);
    app.set_config("--config", "", "read flags from a config file (flags win)");

    // synth
    SyntheticSpec spec;
    spec.seed = default_seed();
    fs::path synth_out = "dataset";
    bool force = false;
    CLI::App* synth = app.add_subcommand("synth", "generate a seeded synthetic dataset");
    synth->add_option("--out", synth_out, "output directory")->capture_default_str();
    synth->add_option("--patients", spec.num_patients)->capture_default_str();
    synth->add_option("--classes", spec.c)->capture_default_str();
    synth->add_option("--d", spec.d)->capture_default_str();
    synth->add_option("--t", spec.t)->capture_default_str();
    synth->add_option("--dup-ratio", spec.duplicate_ratio, "fraction of near-duplicate patches")
        ->capture_default_str();
    synth->add_option("--signature-strength", spec.signature_strength)->capture_default_str();
    synth->add_option("--signature-prob", spec.signature_prob,
                      "chance a positive class marks a given slide")
        ->capture_default_str();
    synth->add_option("--confuser-prob", spec.confuser_prob,
                      "chance a negative class plants a weak decoy cluster")
        ->capture_default_str();
    synth->add_option("--class-leak", spec.class_leak,
                      "anchor contamination on class dimensions")
        ->capture_default_str();
    synth->add_option("--noise", spec.noise_scale)->capture_default_str();
    synth->add_option("--prevalence", spec.class_prevalence)->capture_default_str();
    synth->add_option("--window", spec.window)->capture_default_str();
    synth->add_option("--slides-min", spec.slides_per_patient_min)->capture_default_str();
    synth->add_option("--slides-max", spec.slides_per_patient_max)->capture_default_str();
    synth->add_option("--patches-min", spec.patches_per_slide_min)->capture_default_str();
    synth->add_option("--patches-max", spec.patches_per_slide_max)->capture_default_str();
    synth->add_option("--seed", spec.seed)->capture_default_str();
    synth->add_flag("--force", force, "allow writing into a non-empty directory");

    // compress
    fs::path manifest_path, compress_out;
    int w = 8;
    CLI::App* compress = app.add_subcommand("compress", "report window-compression statistics");
    compress->add_option("--manifest", manifest_path, "dataset manifest")->required();
    compress->add_option("--w", w, "window size")->capture_default_str();
    compress->add_option("--out", compress_out, "write per-bag reports to this file");

    // train
    TrainConfig train_cfg;
    train_cfg.seed = default_seed();
    fs::path train_manifest, train_out = "run";
    CLI::App* train = app.add_subcommand("train", "train and write checkpoint + history");
    train->add_option("--manifest", train_manifest, "dataset manifest")->required();
    train->add_option("--out", train_out, "output directory")->capture_default_str();
    add_train_flags(train, train_cfg);

    // eval
    fs::path eval_manifest, eval_ckpt;
    std::string split = "test";
    int eval_threads = 1;
    CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint on a split");
    eval->add_option("--manifest", eval_manifest, "dataset manifest")->required();
    eval->add_option("--checkpoint", eval_ckpt, "checkpoint file")->required();
    eval->add_option("--split", split, "train|val|test")->capture_default_str();
    eval->add_option("--threads", eval_threads, "evaluation fan-out threads")
        ->capture_default_str();

    // ablate
    TrainConfig ablate_cfg;
    ablate_cfg.seed = default_seed();
    fs::path ablate_manifest, ablate_out;
    std::string mode_name;
    std::vector<double> grid;
    CLI::App* ablate = app.add_subcommand("ablate", "run one ablation study");
    ablate->add_option("--manifest", ablate_manifest, "dataset manifest")->required();
    ablate
        ->add_option("--mode", mode_name,
                     "modules|sampling|window|gcn_placement|fusion|k_sweep|alpha_sweep|"
                     "gamma_sweep")
        ->required();
    ablate->add_option("--grid", grid, "values for window/k/alpha/gamma sweeps")
        ->delimiter(',');
    ablate->add_option("--out", ablate_out, "write key/value report to this file");
    add_train_flags(ablate, ablate_cfg);

    // gradcheck
    double tolerance = 1e-4;
    bool corrupt = false;
    CLI::App* gc = app.add_subcommand("gradcheck", "finite-difference gradient suite");
    gc->add_option("--tolerance", tolerance)->capture_default_str();
    gc->add_flag("--corrupt", corrupt,
                 "inject a deliberate gradient error (detector self-test)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : kExitUsage;
    }

    try {
        if (*synth) return cmd_synth(spec, synth_out, force);
        if (*compress) return cmd_compress(manifest_path, w, compress_out);
        if (*train) return cmd_train(train_manifest, train_cfg, train_out);
        if (*eval) return cmd_eval(eval_manifest, eval_ckpt, split, eval_threads);
        if (*ablate) return cmd_ablate(ablate_manifest, mode_name, grid, ablate_cfg, ablate_out);
        if (*gc) return cmd_gradcheck(tolerance, corrupt);
    } catch (const NumericError& e) {
        std::cerr << "numerical error: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitData;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitData;
    }
    return kExitUsage;
}
