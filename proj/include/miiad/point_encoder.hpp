#pragma once

#include <array>
#include <cstdint>
#include <utility>
#include <vector>

#include "miiad/data.hpp"
#include "miiad/params.hpp"
#include "miiad/tensor.hpp"

namespace miiad::enc {

using miiad::Tensor;

// Valid points of a PointGrid with their source pixel retained.
struct PointSet {
    std::vector<std::array<double, 3>> pts;
    std::vector<std::pair<int, int>> origin;  // (row, col) in the grid

    size_t size() const { return pts.size(); }
};

PointSet extract_points(const data::PointGrid& grid);

// Greedy farthest point sampling. First pick is a seeded uniform choice,
// afterwards the point with maximal distance to the chosen set wins, ties
// broken by lowest index. Returns M distinct indices in selection order.
std::vector<int> farthest_point_sample(const PointSet& ps, int M, uint64_t seed);
std::vector<int> farthest_point_sample_from(const PointSet& ps, int M, int start_index);

struct GroupSet {
    std::vector<int> centers;                                   // indices into the PointSet
    std::vector<std::vector<int>> members;                      // k point indices per group
    std::vector<std::vector<std::array<double, 3>>> local;      // member coords minus center
    int k = 0;
};

// k nearest points per center (ties by index); short point sets pad by
// repeating the nearest member.
GroupSet group_knn(const PointSet& ps, const std::vector<int>& centers, int k);

// Inverse-distance interpolation of group features back onto every point.
// Weights are normalized per point so each output is a convex combination;
// `literal_denominator` switches to the global-sum normalization variant.
Tensor interpolate_features(const PointSet& ps, const std::vector<int>& centers, const Tensor& group_features,
                            double epsilon, bool literal_denominator = false);

// Average-pool per-row features into (H/patch) x (W/patch) cells by origin
// pixel; empty cells stay zero. Output is (cells x d) row-major over cells.
Tensor project_to_grid(const Tensor& features, const std::vector<std::pair<int, int>>& origins, int grid_h,
                       int grid_w, int patch);

struct PointEncoderConfig {
    int dim = 48;
    int enc_blocks = 2;
    int dec_blocks = 1;
    int heads = 2;
    int mlp_ratio = 4;
    int mlp_hidden = 32;        // pointwise MLP hidden width
    int num_groups = 16;        // M
    int group_size = 16;        // k
    double epsilon = 1e-8;
    bool literal_interp = false;
    std::vector<int> taps;      // block indices over enc+dec; empty = last block

    int total_blocks() const { return enc_blocks + dec_blocks; }
    std::vector<int> effective_taps() const {
        return taps.empty() ? std::vector<int>{total_blocks() - 1} : taps;
    }
    int out_dim() const { return dim * int(effective_taps().size()); }
};

// Small frozen group encoder: pointwise MLP + max-pool per group, center
// positional encoding, then encoder and decoder attention blocks. Tap
// outputs are concatenated per group token.
class PointEncoder {
public:
    PointEncoder(nn::ParamStore& store, const PointEncoderConfig& cfg, Rng& rng);   // creates params
    PointEncoder(nn::ParamStore& store, const PointEncoderConfig& cfg);             // binds existing

    // (M x out_dim) group features
    Tensor encode_groups(const PointSet& ps, const GroupSet& gs) const;

    const PointEncoderConfig& config() const { return cfg_; }

private:
    nn::ParamStore& store_;
    PointEncoderConfig cfg_;
    std::vector<nn::BlockParams> blocks_;
};

}  // namespace miiad::enc
