#pragma once

// Reconstruction metrics, the deterministic synthetic sprite dataset that
// stands in for real video corpora at desk scale, and manifest persistence.

#include "fourplane/rng.hpp"
#include "fourplane/tensor.hpp"

#include <array>
#include <string>
#include <vector>

namespace fourplane::evaldata {

struct VideoClip {
    Tensor<float> data; // [T,H,W,3], values in [-1,1]
    double fps = 8.0;   // informational
};

// Peak signal-to-noise ratio in dB after mapping [-1,1] -> [0,1]; capped at
// 100 dB once the MSE drops below 1e-10.
double psnr(const Tensor<float>& a, const Tensor<float>& b);

// Mean SSIM over frames: 11x11 Gaussian window (sigma 1.5), K1=0.01,
// K2=0.03, unit dynamic range on the [0,1] mapping, channel-averaged.
double ssim(const Tensor<float>& a, const Tensor<float>& b);

struct SyntheticSpec {
    i64 clips = 100;
    i64 frames = 9;
    i64 height = 32;
    i64 width = 32;
    i64 sprites = 2;
    bool translate = true;
    bool rotate = true;
    bool scale_motion = true;
    std::array<float, 3> background{-0.85f, -0.85f, -0.8f};
    std::vector<std::array<float, 3>> palette{
        {0.9f, 0.2f, 0.1f},  {0.1f, 0.8f, 0.3f},  {0.2f, 0.3f, 0.95f},
        {0.95f, 0.85f, 0.1f}, {0.7f, 0.1f, 0.8f}, {0.05f, 0.85f, 0.9f}};
    uint64_t seed = 0;

    std::string to_json() const;
    static SyntheticSpec from_json(const std::string& text);
    // FNV-1a over the canonical JSON form
    std::string hash() const;
};

// deterministic: identical (spec, clip_index) always renders the same clip
Tensor<float> synth_clip(const SyntheticSpec& spec, i64 clip_index);

struct ManifestEntry {
    std::string path; // relative to the manifest directory
    i64 frames = 0, height = 0, width = 0;
    std::string split; // "train" | "val"
};

struct DatasetManifest {
    SyntheticSpec spec;
    std::string spec_hash;
    std::vector<ManifestEntry> entries;

    std::string to_json() const;
    static DatasetManifest from_json(const std::string& text);
};

// Renders every clip to <dir>/clips/NNNNN.fpt and writes <dir>/manifest.json.
// Last tenth of the clips is tagged "val". Returns the manifest.
DatasetManifest generate_synthetic(const SyntheticSpec& spec, const std::string& dir);

DatasetManifest load_manifest(const std::string& manifest_path);

// every listed file exists, parses as FPT1 and matches its recorded dims;
// throws with a diagnostic otherwise
void verify_manifest(const std::string& manifest_path);

// resolve an entry path against the manifest location
std::string entry_path(const std::string& manifest_path, const ManifestEntry& e);

} // namespace fourplane::evaldata
