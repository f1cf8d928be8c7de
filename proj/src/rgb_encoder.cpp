#include "miiad/rgb_encoder.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace miiad::enc {

namespace {
const char* kPrefix = "backbone.rgb";
}

RgbEncoder::RgbEncoder(nn::ParamStore& store, const RgbEncoderConfig& cfg, Rng& rng)
    : store_(store), cfg_(cfg) {
    if (cfg.image_size % cfg.patch != 0) throw std::invalid_argument("rgb encoder: patch must divide image size");
    const std::string p = kPrefix;
    const int in_dim = cfg.patch * cfg.patch * 3;
    store_.create_normal(p + ".embed.w", {in_dim, cfg.dim}, false, rng, 1.0 / std::sqrt(double(in_dim)));
    store_.create(p + ".embed.b", {1, cfg.dim}, false);
    store_.create_normal(p + ".pos", {cfg.token_count(), cfg.dim}, false, rng, 0.02);
    for (int b = 0; b < cfg.depth; ++b)
        blocks_.push_back(nn::make_block(store_, p + ".blk" + std::to_string(b), cfg.dim, cfg.mlp_ratio,
                                         false, rng));
}

RgbEncoder::RgbEncoder(nn::ParamStore& store, const RgbEncoderConfig& cfg) : store_(store), cfg_(cfg) {
    for (int b = 0; b < cfg.depth; ++b) blocks_.push_back(nn::bind_block(store_, kPrefix + std::string(".blk") + std::to_string(b)));
}

TokenSequence RgbEncoder::patchify(const data::RgbImage& img) const {
    const int p = cfg_.patch;
    if (img.h % p != 0 || img.w % p != 0)
        throw std::invalid_argument("patchify: patch does not divide image dims");
    const int rows = img.h / p, cols = img.w / p;
    if (rows * cols != cfg_.token_count())
        throw std::invalid_argument("patchify: image token count does not match encoder config");

    const Tensor& w = store_.at("backbone.rgb.embed.w").value;
    const Tensor& b = store_.at("backbone.rgb.embed.b").value;
    const Tensor& pos = store_.at("backbone.rgb.pos").value;

    Tensor flat({rows * cols, p * p * 3});
    for (int pr = 0; pr < rows; ++pr)
        for (int pcn = 0; pcn < cols; ++pcn) {
            const int t = pr * cols + pcn;
            int j = 0;
            for (int r = 0; r < p; ++r)
                for (int c = 0; c < p; ++c)
                    for (int ch = 0; ch < 3; ++ch) flat.at(t, j++) = img.at(pr * p + r, pcn * p + c, ch);
        }
    Tensor tok = miiad::matmul(flat, w);
    for (int t = 0; t < tok.rows(); ++t)
        for (int j = 0; j < tok.cols(); ++j) tok.at(t, j) += b.v[size_t(j)] + pos.at(t, j);
    return {std::move(tok), rows, cols};
}

Tensor RgbEncoder::encode(const TokenSequence& ts) const {
    nn::Tape tape;
    int x = tape.leaf(ts.tokens);
    const auto taps = cfg_.effective_taps();
    std::vector<int> tapped;
    for (int bi = 0; bi < cfg_.depth; ++bi) {
        x = nn::transformer_block(tape, x, blocks_[size_t(bi)], cfg_.heads);
        if (std::find(taps.begin(), taps.end(), bi) != taps.end()) tapped.push_back(x);
    }
    if (tapped.empty()) throw std::invalid_argument("encode_rgb: tap list selects no block");
    const int out = tapped.size() == 1 ? tapped[0] : tape.concat_cols(tapped);
    return tape.val(out);
}

}  // namespace miiad::enc
