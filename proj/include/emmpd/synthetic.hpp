#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "emmpd/bag.hpp"

namespace emmpd {

// Seeded generator for desk-scale datasets. Positive classes plant a
// contiguous grid cluster of signature-bearing patches on every slide;
// a duplicate_ratio fraction of patches are near-copies of a spatial
// neighbor inside the same compression window; the rest are anchors with
// a shared base component, so window-mean thresholding separates planted
// redundancy from genuinely distinct patches.
struct SyntheticSpec {
    int num_patients = 200;
    int slides_per_patient_min = 2;
    int slides_per_patient_max = 3;
    int patches_per_slide_min = 60;
    int patches_per_slide_max = 100;
    int d = 24;
    int c = 3;
    int t = 4;
    double duplicate_ratio = 0.0;       // rho in [0, 1]
    double signature_strength = 0.5;    // energy fraction on the class direction
    double signature_prob = 1.0;        // chance a positive class marks a given slide
    double confuser_prob = 0.0;         // chance a negative class plants a weak decoy
    double class_leak = 0.0;            // anchor contamination on class dimensions
    double noise_scale = 0.02;
    double class_prevalence = 0.3;
    int window = 8;                     // grid layout matches this window size
    std::uint64_t seed = 1;

    void validate() const;
};

struct SyntheticSummary {
    std::filesystem::path manifest_path;
    std::filesystem::path bank_path;
    int num_bags = 0;
    int total_patches = 0;
    int total_duplicates = 0;
    int total_signature = 0;
};

// Writes bags/, text bank and manifest under out_dir. Pure function of the
// spec including the seed: identical specs produce byte-identical files.
SyntheticSummary generate_synthetic(const SyntheticSpec& spec,
                                    const std::filesystem::path& out_dir);

}  // namespace emmpd
