#include "emmpd/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace emmpd {

namespace {

// Shared base component of every patch; keeps anchor-anchor cosines near a
// common value well below the threshold a duplicate pair induces.
constexpr double kBaseEnergy = 0.2;

struct Cell {
    int gx, gy;
};

// Random unit vector supported on dims [lo, hi).
void add_random_unit(std::vector<double>& v, Rng& rng, int lo, int hi, double scale) {
    std::vector<double> u(hi - lo);
    double norm = 0.0;
    for (auto& x : u) {
        x = rng.normal();
        norm += x * x;
    }
    norm = std::sqrt(norm);
    if (norm < 1e-12) {
        u[0] = 1.0;
        norm = 1.0;
    }
    for (int i = lo; i < hi; ++i) v[i] += scale * u[i - lo] / norm;
}

double to_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

}  // namespace

void SyntheticSpec::validate() const {
    if (duplicate_ratio < 0.0 || duplicate_ratio > 1.0)
        throw ConfigError("duplicate_ratio must lie in [0, 1]");
    if (num_patients < 1 || slides_per_patient_min < 1 || patches_per_slide_min < 1)
        throw ConfigError("all synthetic counts must be >= 1");
    if (slides_per_patient_max < slides_per_patient_min ||
        patches_per_slide_max < patches_per_slide_min)
        throw ConfigError("synthetic ranges must satisfy min <= max");
    if (c < 2) throw ConfigError("synthetic C must be >= 2");
    if (d < c + 2) throw ConfigError("synthetic d must exceed C + 1");
    if (signature_strength <= 0.0 || kBaseEnergy + signature_strength >= 1.0)
        throw ConfigError("signature_strength must lie in (0, 0.8)");
    if (window < 2) throw ConfigError("window must be >= 2");
    if (class_prevalence <= 0.0 || class_prevalence >= 1.0)
        throw ConfigError("class_prevalence must lie in (0, 1)");
    if (signature_prob <= 0.0 || signature_prob > 1.0)
        throw ConfigError("signature_prob must lie in (0, 1]");
    if (confuser_prob < 0.0 || confuser_prob > 1.0)
        throw ConfigError("confuser_prob must lie in [0, 1]");
}

SyntheticSummary generate_synthetic(const SyntheticSpec& spec,
                                    const std::filesystem::path& out_dir) {
    spec.validate();
    std::filesystem::create_directories(out_dir / "bags");

    Rng root(spec.seed);
    SyntheticSummary summary;

    const int W = spec.window;
    const int free_lo = 1 + spec.c;
    const int free_hi = spec.d;

    DatasetManifest manifest;
    manifest.d = spec.d;
    manifest.c = spec.c;
    manifest.t = spec.t;
    manifest.task_mode = TaskMode::Multilabel;
    for (int k = 0; k < spec.c; ++k)
        manifest.class_names.push_back("class_" + std::to_string(k));
    manifest.text_bank_path = "bank.empt";
    manifest.base_dir = out_dir;

    // Frozen class rows: class direction plus a little context, narrowed to f32.
    Rng bank_rng = root.fork(0xbadcafe);
    Matrix frozen(spec.c, spec.d);
    for (int k = 0; k < spec.c; ++k) {
        std::vector<double> row(spec.d, 0.0);
        row[1 + k] = 1.0;
        add_random_unit(row, bank_rng, 0, spec.d, 0.1);
        for (int j = 0; j < spec.d; ++j) frozen.at(k, j) = to_f32(row[j]);
    }
    write_text_bank(frozen, out_dir / "bank.empt");
    summary.bank_path = out_dir / "bank.empt";

    for (int pi = 0; pi < spec.num_patients; ++pi) {
        Rng rng = root.fork(static_cast<std::uint64_t>(pi) + 1);

        std::vector<int> label(spec.c, 0);
        for (int k = 0; k < spec.c; ++k)
            if (rng.uniform() < spec.class_prevalence) label[k] = 1;

        const int num_slides =
            rng.uniform_int(spec.slides_per_patient_min, spec.slides_per_patient_max);

        PatchBag bag;
        bag.d = spec.d;
        bag.num_slides = num_slides;
        char pid[16];
        std::snprintf(pid, sizeof pid, "p%04d", pi);
        bag.patient_id = pid;

        struct Patch {
            PatchBag::Coord coord;
            std::vector<double> emb;
        };
        std::vector<Patch> patches;

        // Which slides carry each positive class's cluster; at least one slide
        // per positive class so the label stays learnable. Negative classes
        // may plant weak decoy clusters.
        std::vector<std::vector<std::pair<int, double>>> slide_clusters(num_slides);
        for (int k = 0; k < spec.c; ++k) {
            if (label[k]) {
                bool any = false;
                for (int si = 0; si < num_slides; ++si)
                    if (rng.uniform() < spec.signature_prob) {
                        slide_clusters[si].push_back({k, spec.signature_strength});
                        any = true;
                    }
                if (!any)
                    slide_clusters[rng.uniform_int(0, num_slides - 1)].push_back(
                        {k, spec.signature_strength});
            } else {
                for (int si = 0; si < num_slides; ++si)
                    if (rng.uniform() < spec.confuser_prob)
                        slide_clusters[si].push_back({k, 0.5 * spec.signature_strength});
            }
        }

        for (int si = 0; si < num_slides; ++si) {
            const int target =
                rng.uniform_int(spec.patches_per_slide_min, spec.patches_per_slide_max);

            const std::vector<std::pair<int, double>>& clusters = slide_clusters[si];
            const int num_pos = static_cast<int>(clusters.size());
            const int sig_count = 4 * num_pos;
            int dup_count = static_cast<int>(std::lround(spec.duplicate_ratio * target));
            int anchor_count = target - sig_count - dup_count;
            if (anchor_count < 2) anchor_count = 2;
            if (anchor_count % 2 != 0) {
                --anchor_count;
                ++dup_count;
            }
            const int anchor_windows = anchor_count / 2;
            // Each cluster also claims the window to its right for a clump of
            // redundant patches, so redundancy sits spatially next to the
            // informative patches while staying in its own window.
            const int total_windows = anchor_windows + 2 * num_pos;
            const int wg = std::max(2, static_cast<int>(std::ceil(std::sqrt(
                                           static_cast<double>(total_windows)))));

            // Window order shuffled so signature clusters land anywhere on the
            // slide (pos-k sampling must not trivially find them).
            std::vector<int> windows(wg * wg);
            for (size_t i = 0; i < windows.size(); ++i) windows[i] = static_cast<int>(i);
            for (int i = static_cast<int>(windows.size()) - 1; i > 0; --i)
                std::swap(windows[i], windows[rng.uniform_int(0, i)]);

            // Claim horizontally adjacent id pairs for cluster + clump windows.
            std::vector<char> used(windows.size(), 0);
            std::vector<std::pair<int, int>> cluster_window_ids;
            for (int ci = 0; ci < num_pos; ++ci) {
                for (int idx : windows) {
                    if (idx % wg == wg - 1 || used[idx] || used[idx + 1]) continue;
                    used[idx] = used[idx + 1] = 1;
                    cluster_window_ids.push_back({idx, idx + 1});
                    break;
                }
            }
            if (static_cast<int>(cluster_window_ids.size()) != num_pos)
                throw NumericError("synthetic: could not place cluster windows");
            std::vector<int> anchor_window_ids;
            for (int idx : windows) {
                if (static_cast<int>(anchor_window_ids.size()) == anchor_windows) break;
                if (!used[idx]) {
                    used[idx] = 1;
                    anchor_window_ids.push_back(idx);
                }
            }

            struct WindowState {
                int wr, wc;
                std::set<std::pair<int, int>> used;  // local cells
                std::vector<int> anchor_idx;         // indices into patches
            };
            std::vector<WindowState> anchor_states;

            auto place_cell = [&](WindowState& ws) -> Cell {
                while (true) {
                    const int cx = rng.uniform_int(0, W - 1);
                    const int cy = rng.uniform_int(0, W - 1);
                    if (ws.used.insert({cx, cy}).second)
                        return Cell{ws.wc * W + cx, ws.wr * W + cy};
                }
            };

            auto make_anchor = [&]() {
                std::vector<double> e(spec.d, 0.0);
                e[0] = std::sqrt(kBaseEnergy);
                add_random_unit(e, rng, free_lo, free_hi, std::sqrt(1.0 - kBaseEnergy));
                // Contamination on the class dimensions: washes out naive
                // mean-pooling without creating coherent class evidence.
                for (int k = 0; k < spec.c; ++k)
                    e[1 + k] += rng.uniform(-spec.class_leak, spec.class_leak);
                add_random_unit(e, rng, 0, spec.d, spec.noise_scale);
                return e;
            };

            auto make_dup = [&](const std::vector<double>& src) {
                std::vector<double> e = src;
                double norm = 0.0;
                for (double v : e) norm += v * v;
                add_random_unit(e, rng, 0, spec.d, 0.005 * std::sqrt(norm));
                return e;
            };

            // Anchor windows: exactly two distinct patches each.
            for (int aw = 0; aw < anchor_windows; ++aw) {
                WindowState ws;
                ws.wr = anchor_window_ids[aw] / wg;
                ws.wc = anchor_window_ids[aw] % wg;
                for (int a = 0; a < 2; ++a) {
                    Cell cell = place_cell(ws);
                    Patch p;
                    p.coord = {static_cast<std::uint16_t>(si), cell.gx, cell.gy};
                    p.emb = make_anchor();
                    ws.anchor_idx.push_back(static_cast<int>(patches.size()));
                    patches.push_back(std::move(p));
                }
                anchor_states.push_back(std::move(ws));
            }

            // Signature clusters: one contiguous 2x2 block per marked class,
            // pushed against the right edge so the neighboring clump window's
            // redundant patches are its closest spatial neighbors.
            int placed_sig = 0;
            for (int ci = 0; ci < num_pos; ++ci) {
                const auto& [k, strength] = clusters[ci];
                WindowState ws;
                ws.wr = cluster_window_ids[ci].first / wg;
                ws.wc = cluster_window_ids[ci].first % wg;
                const int bx = W - 2;
                const int by = rng.uniform_int(0, W - 2);
                for (int dy = 0; dy < 2; ++dy)
                    for (int dx = 0; dx < 2; ++dx) {
                        Patch p;
                        p.coord = {static_cast<std::uint16_t>(si), ws.wc * W + bx + dx,
                                   ws.wr * W + by + dy};
                        std::vector<double> e(spec.d, 0.0);
                        e[0] = std::sqrt(kBaseEnergy);
                        e[1 + k] = std::sqrt(strength);
                        add_random_unit(e, rng, free_lo, free_hi,
                                        std::sqrt(1.0 - kBaseEnergy - strength));
                        add_random_unit(e, rng, 0, spec.d, spec.noise_scale);
                        p.emb = std::move(e);
                        patches.push_back(std::move(p));
                        ++placed_sig;
                    }

                // Redundancy clump: one anchor plus its near-duplicates in the
                // window just right of the cluster, hugging the shared border.
                const int clump_wc = cluster_window_ids[ci].second % wg;
                const int clump_wr = cluster_window_ids[ci].second / wg;
                const int h = std::min(dup_count, 6);
                dup_count -= h;
                std::vector<Cell> clump_cells;
                for (int r = 0; r <= W && static_cast<int>(clump_cells.size()) < h + 1; ++r)
                    for (int cy = by - r; cy <= by + 1 + r; ++cy) {
                        if (cy < 0 || cy >= W) continue;
                        for (int cx = 0; cx < 2; ++cx) {
                            const Cell cell{clump_wc * W + cx, clump_wr * W + cy};
                            bool seen = false;
                            for (const Cell& c : clump_cells)
                                seen = seen || (c.gx == cell.gx && c.gy == cell.gy);
                            if (!seen) clump_cells.push_back(cell);
                        }
                    }
                std::vector<double> clump_src = make_anchor();
                for (int q = 0; q <= h && q < static_cast<int>(clump_cells.size()); ++q) {
                    Patch p;
                    p.coord = {static_cast<std::uint16_t>(si), clump_cells[q].gx,
                               clump_cells[q].gy};
                    p.emb = q == 0 ? clump_src : make_dup(clump_src);
                    patches.push_back(std::move(p));
                    if (q > 0) ++summary.total_duplicates;
                }
            }
            summary.total_signature += placed_sig;

            // Near-duplicates: copy of an anchor, placed in the same window so
            // the pair falls under one threshold.
            for (int di = 0; di < dup_count && !anchor_states.empty(); ++di) {
                WindowState& ws =
                    anchor_states[rng.uniform_int(0, static_cast<int>(anchor_states.size()) - 1)];
                const int src =
                    ws.anchor_idx[rng.uniform_int(0, static_cast<int>(ws.anchor_idx.size()) - 1)];
                Cell cell = place_cell(ws);
                Patch p;
                p.coord = {static_cast<std::uint16_t>(si), cell.gx, cell.gy};
                p.emb = patches[src].emb;
                double norm = 0.0;
                for (double v : p.emb) norm += v * v;
                norm = std::sqrt(norm);
                add_random_unit(p.emb, rng, 0, spec.d, 0.005 * norm);
                patches.push_back(std::move(p));
                ++summary.total_duplicates;
            }
        }

        // Raster order within each slide.
        std::stable_sort(patches.begin(), patches.end(), [](const Patch& a, const Patch& b) {
            return std::tie(a.coord.slide, a.coord.gy, a.coord.gx) <
                   std::tie(b.coord.slide, b.coord.gy, b.coord.gx);
        });

        bag.coords.reserve(patches.size());
        bag.embeddings = Matrix(static_cast<int>(patches.size()), spec.d);
        for (size_t i = 0; i < patches.size(); ++i) {
            bag.coords.push_back(patches[i].coord);
            for (int j = 0; j < spec.d; ++j)
                bag.embeddings.at(static_cast<int>(i), j) = to_f32(patches[i].emb[j]);
        }

        const std::string rel = "bags/" + bag.patient_id + ".empd";
        write_bag(bag, out_dir / rel);

        ManifestEntry entry{rel, bag.patient_id, label};
        const double frac = static_cast<double>(pi) / spec.num_patients;
        if (frac < 0.7)
            manifest.train.push_back(entry);
        else if (frac < 0.85)
            manifest.val.push_back(entry);
        else
            manifest.test.push_back(entry);

        summary.total_patches += bag.n();
        ++summary.num_bags;
    }

    write_manifest(manifest, out_dir / "manifest.txt");
    summary.manifest_path = out_dir / "manifest.txt";
    return summary;
}

}  // namespace emmpd
