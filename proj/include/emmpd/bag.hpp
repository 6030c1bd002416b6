#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "emmpd/matrix.hpp"

namespace emmpd {

// One patient's bag of patch embeddings with per-patch grid coordinates.
// Embeddings are float32 on disk and widened to double in memory; writers
// narrow back, so values held here are expected to be float-representable.
struct PatchBag {
    struct Coord {
        std::uint16_t slide = 0;
        std::int32_t gx = 0;
        std::int32_t gy = 0;
    };

    std::string patient_id;
    int d = 0;
    int num_slides = 0;
    std::vector<Coord> coords;
    Matrix embeddings;       // n x d
    std::vector<int> label;  // length C, filled from the manifest

    int n() const { return static_cast<int>(coords.size()); }

    // Throws IoError on duplicate (slide, gx, gy) or inconsistent sizes.
    void validate() const;
};

// Frozen per-class text embeddings plus seeded learnable prompt rows.
struct TextBank {
    int c = 0;
    int t = 0;
    int d = 0;
    Matrix frozen;          // c x d
    Matrix learnable_init;  // t x d
};

struct ManifestEntry {
    std::string path;  // relative to the manifest file
    std::string patient_id;
    std::vector<int> label;
};

enum class TaskMode { Multilabel, Multiclass };

struct DatasetManifest {
    int d = 0;
    int c = 0;
    int t = 0;
    TaskMode task_mode = TaskMode::Multilabel;
    std::vector<std::string> class_names;
    std::string text_bank_path;
    std::vector<ManifestEntry> train, val, test;
    std::filesystem::path base_dir;  // directory the manifest was loaded from

    void validate() const;
    std::filesystem::path resolve(const std::string& rel) const { return base_dir / rel; }
};

void write_bag(const PatchBag& bag, const std::filesystem::path& path);
// expected_d < 0 skips the manifest dimension check.
PatchBag read_bag(const std::filesystem::path& path, int expected_d = -1);

void write_text_bank(const Matrix& frozen, const std::filesystem::path& path);
// Learnable rows are initialized uniform in [-0.02, 0.02] from the seed.
TextBank load_text_bank(const std::filesystem::path& path, int t, std::uint64_t seed,
                        int expected_c = -1);

void write_manifest(const DatasetManifest& m, const std::filesystem::path& path);
DatasetManifest read_manifest(const std::filesystem::path& path);

const char* task_mode_name(TaskMode m);
TaskMode task_mode_from_name(const std::string& s);

}  // namespace emmpd
