#pragma once

#include <filesystem>

#include "emmpd/trainer.hpp"

namespace emmpd {

// Binary checkpoint holding the frozen selector, the fusion parameters and
// enough configuration to rebuild both at load time. Little-endian; doubles
// stored raw.
void save_checkpoint(const TrainResult& result, const TrainConfig& config, int d, int c,
                     const std::filesystem::path& path);

struct LoadedCheckpoint {
    TrainResult result;
    TrainConfig config;
    int d = 0;
    int c = 0;
};

// Throws IoError (BadMagic/VersionMismatch/Truncated/DimMismatch) on anything
// that does not match the format.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace emmpd
