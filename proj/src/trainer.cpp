#include "emmpd/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <thread>

#include "emmpd/optimizer.hpp"

namespace emmpd {

void TrainConfig::validate() const {
    if (alpha < 0.0 || alpha > 1.0) throw ConfigError("alpha must lie in [0, 1]");
    if (gamma < 0.0) throw ConfigError("gamma must be >= 0");
    if (lr < 0.0) throw ConfigError("lr must be >= 0");
    if (epochs < 1 || patience < 1 || w < 1 || top_k < 1 || k_nn < 1 || heads < 1 ||
        threads < 1)
        throw ConfigError("all counts must be >= 1");
    if (t < 0) throw ConfigError("t must be >= 0");
}

Pipeline::Pipeline(const DatasetManifest& manifest, const TrainConfig& config)
    : manifest_(manifest), config_(config) {
    config_.validate();
    manifest_.validate();
    if (manifest_.train.empty() || manifest_.val.empty())
        throw ConfigError("train and validation splits must be nonempty");

    TextBank bank = load_text_bank(manifest_.resolve(manifest_.text_bank_path), config_.t,
                                   config_.seed ^ 0x7465787462616e6bULL, manifest_.c);
    if (bank.d != manifest_.d)
        throw IoError(IoError::Code::DimMismatch,
                      "text bank d=" + std::to_string(bank.d) + " != manifest d=" +
                          std::to_string(manifest_.d));
    frozen_text_ = bank.frozen;
    prompt_init_ = bank.learnable_init;

    auto load_split = [&](const std::vector<ManifestEntry>& entries,
                          std::vector<LoadedBag>& out) {
        out.reserve(entries.size());
        for (const ManifestEntry& e : entries) {
            LoadedBag lb;
            lb.bag = read_bag(manifest_.resolve(e.path), manifest_.d);
            lb.bag.patient_id = e.patient_id;
            lb.label = e.label;
            out.push_back(std::move(lb));
        }
    };
    load_split(manifest_.train, train_);
    load_split(manifest_.val, val_);
    load_split(manifest_.test, test_);

    if (config_.shuffle_labels) {
        Rng rng(config_.seed ^ 0x73687566666c65ULL);
        auto shuffle_split = [&](std::vector<LoadedBag>& split) {
            for (int i = static_cast<int>(split.size()) - 1; i > 0; --i)
                std::swap(split[i].label, split[rng.uniform_int(0, i)].label);
        };
        shuffle_split(train_);
        shuffle_split(val_);
    }
}

std::vector<Pipeline::LoadedBag>& Pipeline::split_bags(const std::string& name) {
    if (name == "train") return train_;
    if (name == "val") return val_;
    if (name == "test") return test_;
    throw ConfigError("unknown split \"" + name + "\"");
}

const std::vector<Pipeline::LoadedBag>& Pipeline::split_bags(const std::string& name) const {
    return const_cast<Pipeline*>(this)->split_bags(name);
}

std::vector<int> Pipeline::stage1_indices(const LoadedBag& lb, SelectionReport* report) const {
    std::vector<int> indices;
    std::vector<WindowStats> windows;
    switch (config_.sampling) {
        case SamplingMode::Random:
        case SamplingMode::PosK:
            // no parameter-free stage
            indices.resize(lb.bag.n());
            std::iota(indices.begin(), indices.end(), 0);
            break;
        case SamplingMode::OneDimCom: {
            CompressResult r = one_dim_compress(lb.bag, config_.w);
            indices = std::move(r.kept);
            windows = std::move(r.windows);
            break;
        }
        case SamplingMode::Tsps:
            if (config_.use_2dcom) {
                CompressResult r = two_dim_compress(lb.bag, config_.w);
                indices = std::move(r.kept);
                windows = std::move(r.windows);
            } else {
                indices.resize(lb.bag.n());
                std::iota(indices.begin(), indices.end(), 0);
            }
            break;
    }
    if (report) {
        report->patient_id = lb.bag.patient_id;
        report->n = lb.bag.n();
        report->n_prime = static_cast<int>(indices.size());
        report->kept_compress = indices;
        report->windows = std::move(windows);
    }
    return indices;
}

namespace {

Matrix gather_rows(const Matrix& src, const std::vector<int>& rows) {
    Matrix out(static_cast<int>(rows.size()), src.cols);
    for (size_t i = 0; i < rows.size(); ++i)
        std::copy(src.row_ptr(rows[i]), src.row_ptr(rows[i]) + src.cols,
                  out.row_ptr(static_cast<int>(i)));
    return out;
}

}  // namespace

std::vector<int> Pipeline::stage2_indices(const LoadedBag& lb, const std::vector<int>& stage1,
                                          TrainResult& result, std::uint64_t bag_stream,
                                          SelectionReport* report) const {
    const int k = config_.top_k;
    std::vector<int> local;
    switch (config_.sampling) {
        case SamplingMode::Random: {
            Rng rng(config_.seed ^ (0x72616e646f6dULL + bag_stream * 0x9e3779b9ULL));
            std::vector<int> pool(stage1.size());
            std::iota(pool.begin(), pool.end(), 0);
            for (int i = static_cast<int>(pool.size()) - 1; i > 0; --i)
                std::swap(pool[i], pool[rng.uniform_int(0, i)]);
            pool.resize(std::min<size_t>(k, pool.size()));
            std::sort(pool.begin(), pool.end());
            local = std::move(pool);
            break;
        }
        case SamplingMode::PosK: {
            for (int i = 0; i < std::min<int>(k, static_cast<int>(stage1.size())); ++i)
                local.push_back(i);
            break;
        }
        case SamplingMode::OneDimCom:
        case SamplingMode::Tsps: {
            const bool attsel =
                config_.sampling == SamplingMode::OneDimCom || config_.use_attsel;
            if (attsel && result.selector_trained) {
                const Matrix features = gather_rows(lb.bag.embeddings, stage1);
                const std::vector<double> weights =
                    gated_attention_weights(features, result.selector);
                local = top_k_select(weights, k);
                if (report) report->attention = weights;
            } else {
                for (int i = 0; i < std::min<int>(k, static_cast<int>(stage1.size())); ++i)
                    local.push_back(i);
            }
            break;
        }
    }
    std::vector<int> original;
    original.reserve(local.size());
    for (int i : local) original.push_back(stage1[i]);
    if (report) {
        report->kept_topk = original;
        report->k = static_cast<int>(original.size());
    }
    return original;
}

Pipeline::PreparedBag Pipeline::prepare(const LoadedBag& lb, TrainResult& result,
                                        std::uint64_t bag_stream) const {
    const std::vector<int> stage1 = stage1_indices(lb, nullptr);
    const std::vector<int> selected = stage2_indices(lb, stage1, result, bag_stream, nullptr);

    PreparedBag pb;
    pb.label = lb.label;
    pb.features = gather_rows(lb.bag.embeddings, selected);
    for (int i : selected) pb.coords.push_back(lb.bag.coords[i]);

    if (config_.use_gcn) {
        if (config_.gcn_before) {
            // "Before" places the graph ahead of the whole selection stage, so
            // it spans the raw bag including its redundant patches.
            pb.stage1_features = lb.bag.embeddings;
            pb.stage1_graph = knn_graph(lb.bag.coords, config_.k_nn);
            pb.gather = Matrix(static_cast<int>(selected.size()), lb.bag.n());
            for (size_t i = 0; i < selected.size(); ++i)
                pb.gather.at(static_cast<int>(i), selected[i]) = 1.0;
        } else {
            pb.graph = knn_graph(pb.coords, config_.k_nn);
        }
    }
    return pb;
}

double Pipeline::bag_loss(PreparedBag& pb, TrainResult& result, bool backward_pass,
                          std::vector<double>* out_scores) const {
    Tape tape;
    FusionTrace trace;
    if (config_.use_gcn && config_.gcn_before) {
        const auto full = tape.constant(pb.stage1_features);
        const auto gather = tape.constant(pb.gather);
        const auto selected = tape.matmul(gather, full);
        const auto v_g =
            tape.matmul(gather, gcn_forward(tape, full, pb.stage1_graph, result.fusion));
        trace = forward_from_vars(tape, selected, v_g, frozen_text_, result.fusion);
    } else {
        trace = forward_full(tape, pb.features, pb.graph, frozen_text_, result.fusion);
    }
    const auto loss = tape.focal_bce(trace.logits, pb.label, config_.alpha, config_.gamma);
    const double loss_value = tape.value(loss).data[0];
    if (!std::isfinite(loss_value))
        throw NumericError("non-finite loss for a bag with K=" +
                           std::to_string(pb.features.rows));
    if (out_scores) {
        const Matrix& logits = tape.value(trace.logits);
        out_scores->resize(logits.rows);
        if (config_.task_mode == TaskMode::Multilabel) {
            for (int i = 0; i < logits.rows; ++i)
                (*out_scores)[i] = 1.0 / (1.0 + std::exp(-logits.data[i]));
        } else {
            double mx = logits.data[0];
            for (int i = 1; i < logits.rows; ++i) mx = std::max(mx, logits.data[i]);
            double sum = 0.0;
            for (int i = 0; i < logits.rows; ++i) {
                (*out_scores)[i] = std::exp(logits.data[i] - mx);
                sum += (*out_scores)[i];
            }
            for (auto& s : *out_scores) s /= sum;
        }
    }
    if (backward_pass) tape.backward(loss);
    return loss_value;
}

TrainResult Pipeline::train() {
    TrainResult result;

    // Phase 1: pretrain the gated-attention selector on stage-1 bags, unless
    // the sampling mode has no learnable stage.
    const bool needs_selector =
        (config_.sampling == SamplingMode::Tsps && config_.use_attsel) ||
        config_.sampling == SamplingMode::OneDimCom;
    if (needs_selector) {
        std::vector<SelectorBag> selector_bags;
        selector_bags.reserve(train_.size());
        for (const LoadedBag& lb : train_) {
            const std::vector<int> stage1 = stage1_indices(lb, nullptr);
            selector_bags.push_back(
                SelectorBag{gather_rows(lb.bag.embeddings, stage1), lb.label});
        }
        SelectorTrainConfig scfg;
        scfg.epochs = config_.selector_epochs;
        scfg.lr = config_.selector_lr;
        scfg.alpha = config_.alpha;
        scfg.gamma = config_.gamma;
        scfg.hidden = config_.selector_hidden;
        scfg.seed = config_.seed ^ 0x73656c6563746f72ULL;
        result.selector = pretrain_selector(selector_bags, manifest_.c, scfg);
        result.selector_trained = true;
    } else {
        result.selector =
            SelectorParams(manifest_.d, config_.selector_hidden, manifest_.c,
                           config_.seed ^ 0x73656c6563746f72ULL);
    }

    // Selection is frozen from here on; prepare every bag once.
    ModelConfig mcfg;
    mcfg.d = manifest_.d;
    mcfg.c = manifest_.c;
    mcfg.t = config_.t;
    mcfg.heads = config_.heads;
    mcfg.k_nn = config_.k_nn;
    mcfg.use_gcn = config_.use_gcn;
    mcfg.use_text = config_.use_text;
    mcfg.fusion_mode = config_.fusion_mode;
    result.fusion = FusionParams(mcfg, prompt_init_, config_.seed ^ 0x667573696f6eULL);

    std::vector<PreparedBag> train_bags, val_bags;
    for (size_t i = 0; i < train_.size(); ++i)
        train_bags.push_back(prepare(train_[i], result, i));
    for (size_t i = 0; i < val_.size(); ++i)
        val_bags.push_back(prepare(val_[i], result, 0x100000 + i));

    // Phase 2: fusion training, batch size 1, linear lr decay, early stopping.
    Adam opt;
    auto trainable = result.fusion.trainable();
    double best_val = std::numeric_limits<double>::infinity();
    std::vector<Matrix> best_values;
    auto snapshot = [&]() {
        best_values.clear();
        for (Param* p : trainable) best_values.push_back(p->value);
    };
    snapshot();

    std::vector<std::vector<int>> val_labels;
    for (const PreparedBag& pb : val_bags) val_labels.push_back(pb.label);

    double best_f1 = -1.0;
    int since_best = 0;
    for (int epoch = 0; epoch < config_.epochs; ++epoch) {
        const double lr_e =
            config_.lr * (1.0 - static_cast<double>(epoch) / config_.epochs);
        double train_loss = 0.0;
        for (PreparedBag& pb : train_bags) {
            train_loss += bag_loss(pb, result, true);
            opt.step(trainable, lr_e);
        }
        train_loss /= train_bags.size();

        double val_loss = 0.0;
        std::vector<std::vector<double>> val_scores(val_bags.size());
        for (size_t i = 0; i < val_bags.size(); ++i)
            val_loss += bag_loss(val_bags[i], result, false, &val_scores[i]);
        val_loss /= val_bags.size();
        const double val_f1 =
            compute_metrics(val_scores, val_labels, config_.task_mode).f1;

        result.history.push_back(EpochStats{epoch, train_loss, val_loss, val_f1, lr_e});

        if (val_f1 > best_f1 || (val_f1 == best_f1 && val_loss < best_val)) {
            if (val_f1 > best_f1) since_best = 0;
            best_f1 = val_f1;
            best_val = val_loss;
            result.best_epoch = epoch;
            snapshot();
        } else if (++since_best >= config_.patience) {
            break;
        }
    }
    for (size_t i = 0; i < trainable.size(); ++i) trainable[i]->value = best_values[i];
    result.best_val_loss = best_val;
    result.best_val_f1 = best_f1;
    return result;
}

std::vector<std::vector<double>> Pipeline::scores(TrainResult& result,
                                                  const std::string& split) const {
    const auto& bags = split_bags(split);
    std::vector<std::vector<double>> out(bags.size());
    auto score_range = [&](size_t begin, size_t end) {
        for (size_t i = begin; i < end; ++i) {
            PreparedBag pb = prepare(bags[i], result, 0x200000 + i);
            bag_loss(pb, result, false, &out[i]);
        }
    };
    const int threads = std::min<int>(config_.threads, static_cast<int>(bags.size()));
    if (threads <= 1) {
        score_range(0, bags.size());
    } else {
        // Read-only fan-out over bags; each bag builds its own tape.
        std::vector<std::thread> pool;
        const size_t chunk = (bags.size() + threads - 1) / threads;
        for (int tdx = 0; tdx < threads; ++tdx) {
            const size_t begin = tdx * chunk;
            const size_t end = std::min(bags.size(), begin + chunk);
            if (begin < end) pool.emplace_back(score_range, begin, end);
        }
        for (auto& th : pool) th.join();
    }
    return out;
}

MetricsReport Pipeline::evaluate(TrainResult& result, const std::string& split) const {
    const auto& bags = split_bags(split);
    if (bags.empty()) throw ConfigError("split \"" + split + "\" is empty");
    std::vector<std::vector<int>> labels;
    for (const LoadedBag& lb : bags) labels.push_back(lb.label);
    return compute_metrics(scores(result, split), labels, config_.task_mode);
}

std::vector<SelectionReport> Pipeline::selection_reports() const {
    std::vector<SelectionReport> reports;
    for (const auto* split : {&train_, &val_, &test_}) {
        for (const LoadedBag& lb : *split) {
            SelectionReport r;
            stage1_indices(lb, &r);
            r.k = std::min(config_.top_k, r.n_prime);
            reports.push_back(std::move(r));
        }
    }
    return reports;
}

void write_history_csv(const std::vector<EpochStats>& history,
                       const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError(IoError::Code::WriteFailed, "cannot write " + path.string());
    os << "epoch,train_loss,val_loss,val_f1,lr\n";
    for (const EpochStats& e : history)
        os << e.epoch << "," << e.train_loss << "," << e.val_loss << "," << e.val_f1 << ","
           << e.lr << "\n";
}

}  // namespace emmpd
