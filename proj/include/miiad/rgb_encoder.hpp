#pragma once

#include <vector>

#include "miiad/data.hpp"
#include "miiad/params.hpp"
#include "miiad/tensor.hpp"

namespace miiad::enc {

struct TokenSequence {
    Tensor tokens;  // (L x d)
    int rows = 0, cols = 0;  // patch grid shape, rows*cols == L
};

struct RgbEncoderConfig {
    int patch = 8;
    int image_size = 32;  // pins the positional embedding length
    int dim = 48;
    int depth = 12;
    int heads = 4;
    int mlp_ratio = 4;
    std::vector<int> taps = {3, 7, 11};

    int grid_side() const { return image_size / patch; }
    int token_count() const { return grid_side() * grid_side(); }
    std::vector<int> effective_taps() const { return taps.empty() ? std::vector<int>{depth - 1} : taps; }
    int out_dim() const { return dim * int(effective_taps().size()); }
};

// Small frozen vision transformer: non-overlapping patch embedding with a
// learned positional table, `depth` blocks, tapped outputs concatenated.
class RgbEncoder {
public:
    RgbEncoder(nn::ParamStore& store, const RgbEncoderConfig& cfg, Rng& rng);  // creates params
    RgbEncoder(nn::ParamStore& store, const RgbEncoderConfig& cfg);            // binds existing

    TokenSequence patchify(const data::RgbImage& img) const;
    Tensor encode(const TokenSequence& ts) const;  // (L x out_dim)
    Tensor encode(const data::RgbImage& img) const { return encode(patchify(img)); }

    const RgbEncoderConfig& config() const { return cfg_; }

private:
    nn::ParamStore& store_;
    RgbEncoderConfig cfg_;
    std::vector<nn::BlockParams> blocks_;
};

}  // namespace miiad::enc
