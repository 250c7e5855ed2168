#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "pcsa/tensor.hpp"

namespace pcsa {

/// Clear image J [3,H,W], transmission t [1,H,W], airlight A and the hazy
/// observation I = J*t + A*(1-t).
struct HazePair {
    TensorF clear;
    TensorF transmission;
    double airlight = 1.0;
    TensorF hazy;
};

struct DatasetSpec {
    std::size_t count = 100;
    std::int64_t height = 32;
    std::int64_t width = 32;
    std::uint64_t seed = 0;
    double t_min = 0.2;
    double t_max = 0.9;
    double airlight_min = 0.7;
    double airlight_max = 1.0;
    /// Upper bound on the difference between 4-neighbors of a transmission map.
    double t_max_step = 0.2;
};

/// Applies I = J*t + A*(1-t); t broadcasts over the color channels.
/// Throws std::invalid_argument when A is outside [0,1].
TensorF synth_haze(const TensorF& clear, const TensorF& transmission, double airlight);

/// Procedural scene: a color gradient plus, per image, an optional checker
/// pattern and a few soft blobs. Values in [0,1].
TensorF gen_scene(const DatasetSpec& spec, std::size_t index);

/// Bilinear upsampling of a seeded coarse grid (4x4 when the image is large
/// enough to keep neighbor steps within t_max_step) in [t_min, t_max].
TensorF gen_transmission(const DatasetSpec& spec, std::size_t index);

double gen_airlight(const DatasetSpec& spec, std::size_t index);

HazePair make_pair(const DatasetSpec& spec, std::size_t index);
std::vector<HazePair> generate_dataset(const DatasetSpec& spec);

// ---------------------------------------------------------------------------
// On-disk datasets: PPM pairs plus a manifest with one "hazy.ppm clear.ppm"
// line per pair, paths relative to the manifest's directory.

struct ImagePair {
    TensorF hazy;
    TensorF clear;
    std::string name;
};

struct ManifestEntry {
    std::string hazy;
    std::string clear;
};

/// Writes hazy_NNNN.ppm / clear_NNNN.ppm and manifest.txt into dir.
void write_dataset(const std::vector<HazePair>& pairs, const std::filesystem::path& dir);

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& manifest);
/// Loads every pair listed in the manifest.
std::vector<ImagePair> load_dataset(const std::filesystem::path& manifest);

}  // namespace pcsa
