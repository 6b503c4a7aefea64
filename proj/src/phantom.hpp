#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "ct/params.hpp"

namespace ct {

// Synthetic cardiac-like benchmark: three foreground structures per slice
// (LV disk, Myo annulus, RV crescent) over a noisy, bias-shaded background.
// Categories: 0 background, 1 RV, 2 Myo, 3 LV.
struct PhantomParams {
    int64_t grid_h = 64;
    int64_t grid_w = 64;
    int64_t slices_per_volume = 8;

    double lv_radius = 7.5;
    double lv_radius_jitter = 1.5;
    double myo_thickness = 3.0;
    double myo_thickness_jitter = 0.8;
    double rv_eccentricity = 1.35;
    double rv_eccentricity_jitter = 0.25;

    double noise_std = 0.16;
    double bias_field_strength = 0.6;
    uint64_t seed = 1;
};

struct Volume {
    int64_t depth = 0, height = 0, width = 0;
    std::vector<float> image;    // D*H*W, in [0,1]
    std::vector<uint8_t> label;  // D*H*W, values < 4
    std::array<float, 3> spacing{1.0f, 1.0f, 10.0f};  // (row mm, col mm, slice mm)
    uint64_t volume_id = 0;

    int64_t voxels() const { return depth * height * width; }
};

inline constexpr int kPhantomCategories = 4;

Volume generate_phantom(const PhantomParams& params, int64_t volume_index);

// XTV1 on-disk format; round-trips bit-exactly.
void save_volume(const std::string& path, const Volume& v);
Volume load_volume(const std::string& path);

struct SplitManifest {
    std::vector<int64_t> labeled;
    std::vector<int64_t> unlabeled;
    std::vector<int64_t> validation;
    uint64_t seed = 0;
    double labeled_fraction = 0.0;
};

SplitManifest make_splits(int64_t n_volumes, int64_t labeled_count, int64_t val_count,
                          uint64_t seed);
void save_manifest(const std::string& path, const SplitManifest& m);
SplitManifest load_manifest(const std::string& path);

struct AugmentConfig {
    int64_t crop = 56;
    double max_angle_deg = 25.0;
    bool flip_h = true;
    bool flip_v = true;
};

// Deterministic core: rotation by `angle_rad` about the slice centre
// (bilinear image, nearest label, zero outside), crop of size `crop` at
// (oy, ox), then flips within the crop window. Image and label see the same
// transform.
void apply_transform(const std::vector<float>& image, const std::vector<uint8_t>& label, int64_t h,
                     int64_t w, double angle_rad, int64_t oy, int64_t ox, int64_t crop,
                     bool flip_h, bool flip_v, std::vector<float>& out_image,
                     std::vector<uint8_t>& out_label);

// Random augmentation. Draw order is fixed (angle, crop offsets, two flip
// coins) and every call consumes the same number of rng draws, so training
// streams stay aligned across configurations.
void augment(const std::vector<float>& image, const std::vector<uint8_t>& label, int64_t h,
             int64_t w, const AugmentConfig& cfg, Rng& rng, std::vector<float>& out_image,
             std::vector<uint8_t>& out_label);

}  // namespace ct
