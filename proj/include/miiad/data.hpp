#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "miiad/tensor.hpp"

namespace miiad::data {

using miiad::Tensor;

// H x W boolean raster (anomaly masks, point validity).
struct BinaryMap {
    int h = 0, w = 0;
    std::vector<uint8_t> v;

    BinaryMap() = default;
    BinaryMap(int h_, int w_, uint8_t fill = 0) : h(h_), w(w_), v(size_t(h_) * w_, fill) {}
    uint8_t& at(int r, int c) { return v[size_t(r) * w + c]; }
    uint8_t at(int r, int c) const { return v[size_t(r) * w + c]; }
    int count() const {
        int n = 0;
        for (uint8_t b : v) n += b ? 1 : 0;
        return n;
    }
    bool any() const { return count() > 0; }
};

struct RgbImage {
    int h = 0, w = 0;
    Tensor pixels;  // (h, w, 3), values in [0,1]

    RgbImage() = default;
    RgbImage(int h_, int w_) : h(h_), w(w_), pixels({h_, w_, 3}) {}
    double& at(int r, int c, int ch) { return pixels.at(r, c, ch); }
    double at(int r, int c, int ch) const { return pixels.at(r, c, ch); }
};

struct PointGrid {
    int h = 0, w = 0;
    Tensor coords;       // (h, w, 3) scene-unit xyz
    BinaryMap validity;  // point present after preprocessing

    PointGrid() = default;
    PointGrid(int h_, int w_) : h(h_), w(w_), coords({h_, w_, 3}), validity(h_, w_, 1) {}
};

struct GroundTruth {
    BinaryMap anomaly_mask;
    bool anomalous = false;
};

struct ModalityMask {
    bool has_rgb = true;
    bool has_pc = true;
};

enum class MissingMode { pc_missing, rgb_missing, both_missing };

struct MissingSpec {
    MissingMode mode = MissingMode::pc_missing;
    double rate = 0.0;  // fraction of samples made incomplete
    uint64_t seed = 0;
};

struct Sample {
    std::optional<RgbImage> rgb;
    std::optional<PointGrid> pc;
    GroundTruth gt;
    ModalityMask mask;
    std::string category;
    int id = 0;

    bool complete() const { return mask.has_rgb && mask.has_pc; }
};

struct MiiadDataset {
    std::vector<Sample> train;  // normal-only
    std::vector<Sample> test;
    std::vector<std::string> categories;
};

enum class DefectKind { bump, dent, color_blotch, hole };

const std::vector<std::string>& known_categories();  // dome, disk, slab

// Procedural normal sample: category heightmap + curvature-correlated texture,
// flat near-zero border band so plane removal has a background to strip.
Sample synth_normal(const std::string& category, int size, uint64_t seed);

// Localized defect injected into a complete normal sample. The anomaly mask
// marks exactly the perturbed pixels.
Sample synth_anomaly(const Sample& base, DefectKind kind, uint64_t seed);

// Modality-incomplete restructuring. Counts per split: round(rate*n) samples
// become incomplete; in both_missing the incomplete set splits into
// ceil/floor halves with the rgb-only group taking the odd extra.
MiiadDataset apply_missing(const MiiadDataset& ds, const MissingSpec& spec);

// Absent modalities replaced by all-ones tensors; the ModalityMask stays.
Sample fill_pseudo(const Sample& s);

// RANSAC plane fit (least-squares refit on the best inlier set), then points
// within `threshold` of the plane get validity = false. Coords untouched.
PointGrid remove_background_plane(const PointGrid& pc, double threshold, int iterations, uint64_t seed);

// Bilinear resize for rgb/coords, nearest for validity and the anomaly mask.
Sample resize_to_grid(const Sample& s, int size);

struct SynthOptions {
    double anomaly_frac = 0.5;     // fraction of test samples made defective
    bool plane_removal = true;
    double plane_threshold = 0.005;
    int ransac_iterations = 256;
};

// Dataset of one or more categories: n_train normals + n_test (normal and
// defective) per category, preprocessed per `opts`. Sample ids are unique
// across the dataset.
MiiadDataset make_dataset(const std::vector<std::string>& categories, int n_train, int n_test, int size,
                          uint64_t seed, const SynthOptions& opts = {});

void save_dataset(const MiiadDataset& ds, const std::string& dir);
MiiadDataset load_dataset(const std::string& dir);

}  // namespace miiad::data
