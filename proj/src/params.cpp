#include "miiad/params.hpp"

#include <cmath>

namespace miiad::nn {

BlockParams make_block(ParamStore& store, const std::string& prefix, int dim, int mlp_ratio, bool trainable,
                       Rng& rng) {
    const int hidden = dim * mlp_ratio;
    const double attn_std = 1.0 / std::sqrt(double(dim));
    const double mlp_std = 1.0 / std::sqrt(double(hidden));
    BlockParams bp;
    bp.wq = &store.create_normal(prefix + ".wq", {dim, dim}, trainable, rng, attn_std);
    bp.bq = &store.create(prefix + ".bq", {1, dim}, trainable);
    bp.wk = &store.create_normal(prefix + ".wk", {dim, dim}, trainable, rng, attn_std);
    bp.bk = &store.create(prefix + ".bk", {1, dim}, trainable);
    bp.wv = &store.create_normal(prefix + ".wv", {dim, dim}, trainable, rng, attn_std);
    bp.bv = &store.create(prefix + ".bv", {1, dim}, trainable);
    bp.wo = &store.create_normal(prefix + ".wo", {dim, dim}, trainable, rng, attn_std);
    bp.bo = &store.create(prefix + ".bo", {1, dim}, trainable);
    bp.ln1_g = &store.create_const(prefix + ".ln1.g", {1, dim}, trainable, 1.0);
    bp.ln1_b = &store.create(prefix + ".ln1.b", {1, dim}, trainable);
    bp.ln2_g = &store.create_const(prefix + ".ln2.g", {1, dim}, trainable, 1.0);
    bp.ln2_b = &store.create(prefix + ".ln2.b", {1, dim}, trainable);
    bp.w1 = &store.create_normal(prefix + ".mlp.w1", {dim, hidden}, trainable, rng, attn_std);
    bp.b1 = &store.create(prefix + ".mlp.b1", {1, hidden}, trainable);
    bp.w2 = &store.create_normal(prefix + ".mlp.w2", {hidden, dim}, trainable, rng, mlp_std);
    bp.b2 = &store.create(prefix + ".mlp.b2", {1, dim}, trainable);
    return bp;
}

BlockParams bind_block(ParamStore& store, const std::string& prefix) {
    BlockParams bp;
    bp.wq = &store.at(prefix + ".wq");
    bp.bq = &store.at(prefix + ".bq");
    bp.wk = &store.at(prefix + ".wk");
    bp.bk = &store.at(prefix + ".bk");
    bp.wv = &store.at(prefix + ".wv");
    bp.bv = &store.at(prefix + ".bv");
    bp.wo = &store.at(prefix + ".wo");
    bp.bo = &store.at(prefix + ".bo");
    bp.ln1_g = &store.at(prefix + ".ln1.g");
    bp.ln1_b = &store.at(prefix + ".ln1.b");
    bp.ln2_g = &store.at(prefix + ".ln2.g");
    bp.ln2_b = &store.at(prefix + ".ln2.b");
    bp.w1 = &store.at(prefix + ".mlp.w1");
    bp.b1 = &store.at(prefix + ".mlp.b1");
    bp.w2 = &store.at(prefix + ".mlp.w2");
    bp.b2 = &store.at(prefix + ".mlp.b2");
    return bp;
}

int transformer_block(Tape& tape, int x, const BlockParams& bp, int heads) {
    const int dim = tape.val(x).cols();
    if (dim % heads != 0) throw std::invalid_argument("transformer_block: heads must divide dim");
    const int dh = dim / heads;
    const double scl = 1.0 / std::sqrt(double(dh));

    const int h = tape.layer_norm(x, tape.param(*bp.ln1_g), tape.param(*bp.ln1_b));
    const int q = tape.linear(h, tape.param(*bp.wq), tape.param(*bp.bq));
    const int k = tape.linear(h, tape.param(*bp.wk), tape.param(*bp.bk));
    const int v = tape.linear(h, tape.param(*bp.wv), tape.param(*bp.bv));

    std::vector<int> head_outs;
    head_outs.reserve(size_t(heads));
    for (int hd = 0; hd < heads; ++hd) {
        const int qh = tape.slice_cols(q, hd * dh, (hd + 1) * dh);
        const int kh = tape.slice_cols(k, hd * dh, (hd + 1) * dh);
        const int vh = tape.slice_cols(v, hd * dh, (hd + 1) * dh);
        const int logits = tape.scale(tape.matmul(qh, tape.transpose(kh)), scl);
        const int attn = tape.softmax_rows(logits);
        head_outs.push_back(tape.matmul(attn, vh));
    }
    const int concat = heads == 1 ? head_outs[0] : tape.concat_cols(head_outs);
    const int attn_out = tape.linear(concat, tape.param(*bp.wo), tape.param(*bp.bo));
    int out = tape.add(x, attn_out);

    const int h2 = tape.layer_norm(out, tape.param(*bp.ln2_g), tape.param(*bp.ln2_b));
    const int m1 = tape.gelu(tape.linear(h2, tape.param(*bp.w1), tape.param(*bp.b1)));
    const int m2 = tape.linear(m1, tape.param(*bp.w2), tape.param(*bp.b2));
    return tape.add(out, m2);
}

}  // namespace miiad::nn
