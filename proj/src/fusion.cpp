#include "miiad/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace miiad::fusion {

int select_instruction(const data::ModalityMask& mask) {
    if (!mask.has_rgb && !mask.has_pc) throw std::invalid_argument("select_instruction: invalid mask");
    if (!mask.has_pc) return 0;   // I_pc
    if (!mask.has_rgb) return 1;  // I_rgb
    return 2;                     // I_complete
}

Tensor prepend_instruction(const Tensor& instruction, const Tensor& tokens) {
    if (instruction.rows() == 0) return tokens;
    if (instruction.cols() != tokens.cols())
        throw std::invalid_argument("prepend_instruction: width mismatch");
    Tensor out({instruction.rows() + tokens.rows(), tokens.cols()});
    std::copy(instruction.v.begin(), instruction.v.end(), out.v.begin());
    std::copy(tokens.v.begin(), tokens.v.end(), out.v.begin() + instruction.v.size());
    return out;
}

namespace {

std::string instr_name(int block, int layer) {
    return "instr.b" + std::to_string(block) + ".l" + std::to_string(layer);
}

}  // namespace

FusionModel::FusionModel(nn::ParamStore& store, const FusionConfig& cfg, Rng& rng)
    : store_(store), cfg_(cfg) {
    if (cfg.instr_start < 0 || (cfg.depth > 0 && cfg.instr_end >= cfg.depth))
        throw std::invalid_argument("fusion: instruction layer range outside depth");

    // trainable adapters to the shared fusion width
    store_.create_normal("adapter.pc.w", {cfg.d_pc_in, cfg.d_f}, true, rng,
                         1.0 / std::sqrt(double(cfg.d_pc_in)));
    store_.create("adapter.pc.b", {1, cfg.d_f}, true);
    store_.create_normal("adapter.rgb.w", {cfg.d_rgb_in, cfg.d_f}, true, rng,
                         1.0 / std::sqrt(double(cfg.d_rgb_in)));
    store_.create("adapter.rgb.b", {1, cfg.d_f}, true);

    // frozen multimodal backbone
    if (cfg.depth > 0) store_.create_normal("fusion.pos", {2 * cfg.tokens, cfg.d_f}, false, rng, 0.02);
    for (int j = 0; j < cfg.depth; ++j)
        blocks_.push_back(nn::make_block(store_, "fusion.blk" + std::to_string(j), cfg.d_f, cfg.mlp_ratio,
                                         false, rng));

    // one instruction block per incomplete pattern, layer-specific rows
    for (int m = 0; m < 3; ++m)
        for (int j = cfg.instr_start; j <= cfg.instr_end && j < cfg.depth; ++j)
            store_.create_normal(instr_name(m, j), {cfg.instr_len, cfg.d_f}, true, rng, 0.02);

    // hypernetwork: generator xi, per-stream-layer embeddings z, summary
    // encoder, and the two-layer delta head (delta zero-initialized)
    store_.create_normal("hyper.xi.w1", {cfg.d_z, cfg.xi_hidden}, true, rng,
                         1.0 / std::sqrt(double(cfg.d_z)));
    store_.create("hyper.xi.b1", {1, cfg.xi_hidden}, true);
    for (int n = 0; n < 2; ++n) {
        const auto [n_in, n_out] = target_dims(n);
        const double std2 = 1.0 / (std::sqrt(double(cfg.xi_hidden)) * std::sqrt(double(n_in)));
        store_.create_normal("hyper.xi.w2.n" + std::to_string(n), {cfg.xi_hidden, target_flat(n)}, true,
                             rng, std2);
        store_.create("hyper.xi.b2.n" + std::to_string(n), {1, target_flat(n)}, true);
        store_.create("hyper.head.w2.n" + std::to_string(n), {cfg.rank, target_flat(n)}, true);
        store_.create("hyper.head.b2.n" + std::to_string(n), {1, target_flat(n)}, true);
        (void)n_out;
    }
    for (const char* m : {"pc", "rgb"})
        for (int n = 0; n < 2; ++n)
            store_.create_normal("hyper.z." + std::string(m) + std::to_string(n), {1, cfg.d_z}, true, rng, 1.0);
    store_.create_normal("hyper.enc.w", {cfg.d_f, cfg.d_e}, true, rng, 1.0 / std::sqrt(double(cfg.d_f)));
    store_.create("hyper.enc.b", {1, cfg.d_e}, true);
    store_.create_normal("hyper.head.w1", {cfg.d_e, cfg.rank}, true, rng, 1.0 / std::sqrt(double(cfg.d_e)));
    store_.create("hyper.head.b1", {1, cfg.rank}, true);

    // learned projection that turns the two streams into the fusion feature
    store_.create_normal("gfs.w", {2 * cfg.d_g, cfg.d_g}, true, rng, 1.0 / std::sqrt(double(2 * cfg.d_g)));
    store_.create("gfs.b", {1, cfg.d_g}, true);
}

FusionModel::FusionModel(nn::ParamStore& store, const FusionConfig& cfg) : store_(store), cfg_(cfg) {
    bind();
}

void FusionModel::bind() {
    for (int j = 0; j < cfg_.depth; ++j)
        blocks_.push_back(nn::bind_block(store_, "fusion.blk" + std::to_string(j)));
}

std::pair<int, int> FusionModel::target_dims(int layer) const {
    if (layer == 0) return {cfg_.d_f, cfg_.target_hidden};
    if (layer == 1) return {cfg_.target_hidden, cfg_.d_g};
    throw std::invalid_argument("target_dims: generated MLPs have 2 layers");
}

int FusionModel::target_flat(int layer) const {
    const auto [n_in, n_out] = target_dims(layer);
    return n_in * n_out + n_out;
}

int FusionModel::adapter_pc(nn::Tape& tape, const Tensor& f_pc) const {
    return tape.linear(tape.leaf(f_pc), tape.param(store_.at("adapter.pc.w")),
                       tape.param(store_.at("adapter.pc.b")));
}

int FusionModel::adapter_rgb(nn::Tape& tape, const Tensor& f_rgb) const {
    return tape.linear(tape.leaf(f_rgb), tape.param(store_.at("adapter.rgb.w")),
                       tape.param(store_.at("adapter.rgb.b")));
}

std::pair<int, int> FusionModel::fuse(nn::Tape& tape, int pc_tokens, int rgb_tokens, int instr_block) const {
    const int L = tape.val(pc_tokens).rows();
    if (tape.val(rgb_tokens).rows() != L || tape.val(pc_tokens).cols() != tape.val(rgb_tokens).cols())
        throw std::invalid_argument("fuse: stream geometry mismatch");

    int x = tape.concat_rows({pc_tokens, rgb_tokens});
    if (cfg_.depth > 0) x = tape.add(x, tape.param(store_.at("fusion.pos")));

    int kept_prefix = 0;
    for (int j = 0; j < cfg_.depth; ++j) {
        const bool insert = cfg_.use_instructions && cfg_.instr_len > 0 && j >= cfg_.instr_start &&
                            j <= cfg_.instr_end;
        if (insert) x = tape.concat_rows({tape.param(store_.at(instr_name(instr_block, j))), x});
        x = nn::transformer_block(tape, x, blocks_[size_t(j)], cfg_.heads);
        if (insert) {
            if (cfg_.keep_instructions)
                kept_prefix += cfg_.instr_len;  // dropped in one cut after the last layer
            else
                x = tape.slice_rows(x, cfg_.instr_len, tape.val(x).rows());
        }
    }
    if (kept_prefix > 0) x = tape.slice_rows(x, kept_prefix, tape.val(x).rows());

    return {tape.slice_rows(x, 0, L), tape.slice_rows(x, L, 2 * L)};
}

FusionModel::GeneratedLayer FusionModel::generate_layer(nn::Tape& tape, int summary,
                                                        const std::string& modality, int layer) const {
    const auto [n_in, n_out] = target_dims(layer);
    const std::string ln = std::to_string(layer);

    // static part: K = xi(z), a two-layer generator
    const int z = tape.param(store_.at("hyper.z." + modality + ln));
    const int h = tape.gelu(tape.linear(z, tape.param(store_.at("hyper.xi.w1")),
                                        tape.param(store_.at("hyper.xi.b1"))));
    const int k_flat = tape.linear(h, tape.param(store_.at("hyper.xi.w2.n" + ln)),
                                   tape.param(store_.at("hyper.xi.b2.n" + ln)));

    // input-conditioned delta: w = (W1 xi_h(e) + B1) W2 + B2
    const int enc = tape.gelu(tape.linear(summary, tape.param(store_.at("hyper.enc.w")),
                                          tape.param(store_.at("hyper.enc.b"))));
    const int t = tape.linear(enc, tape.param(store_.at("hyper.head.w1")),
                              tape.param(store_.at("hyper.head.b1")));
    const int w_flat = tape.linear(t, tape.param(store_.at("hyper.head.w2.n" + ln)),
                                   tape.param(store_.at("hyper.head.b2.n" + ln)));

    const int flat = tape.add(k_flat, w_flat);
    GeneratedLayer out;
    out.k_flat = k_flat;
    out.w_flat = w_flat;
    out.w = tape.reshape(tape.slice_cols(flat, 0, n_in * n_out), {n_in, n_out});
    out.b = tape.slice_cols(flat, n_in * n_out, n_in * n_out + n_out);
    return out;
}

int FusionModel::project_stream(nn::Tape& tape, int f_hat, const std::string& modality) const {
    const int summary = tape.mean_rows(f_hat);
    const GeneratedLayer l0 = generate_layer(tape, summary, modality, 0);
    const GeneratedLayer l1 = generate_layer(tape, summary, modality, 1);
    int h = tape.linear(f_hat, l0.w, l0.b);
    if (!cfg_.linear_target_mlp) h = tape.gelu(h);
    return tape.linear(h, l1.w, l1.b);
}

FusedStreams FusionModel::forward(nn::Tape& tape, const Tensor& f_pc, const Tensor& f_rgb,
                                  const data::ModalityMask& mask) const {
    FusedStreams out;
    const int a_pc = adapter_pc(tape, f_pc);
    const int a_rgb = adapter_rgb(tape, f_rgb);
    const auto [pc_hat, rgb_hat] = fuse(tape, a_pc, a_rgb, select_instruction(mask));
    out.f_pc_hat = pc_hat;
    out.f_rgb_hat = rgb_hat;
    out.g_pc = project_stream(tape, pc_hat, "pc");
    out.g_rgb = project_stream(tape, rgb_hat, "rgb");
    out.g_fs = tape.linear(tape.concat_cols({out.g_pc, out.g_rgb}), tape.param(store_.at("gfs.w")),
                           tape.param(store_.at("gfs.b")));
    return out;
}

int FusionModel::infonce(nn::Tape& tape, int g_a, int g_b) const {
    const int n = tape.val(g_a).rows();
    if (tape.val(g_b).rows() != n) throw std::invalid_argument("infonce: row count mismatch");
    const int na = tape.l2_normalize_rows(g_a);
    const int nb = tape.l2_normalize_rows(g_b);
    const int logits = tape.scale(tape.matmul(na, tape.transpose(nb)), 1.0 / cfg_.temperature);
    std::vector<int> diag(static_cast<size_t>(n));
    std::iota(diag.begin(), diag.end(), 0);
    const int fwd = tape.cross_entropy_rows(logits, diag);
    const int bwd = tape.cross_entropy_rows(tape.transpose(logits), diag);
    return tape.scale(tape.add(fwd, bwd), 0.5);
}

Stage1Result train_stage1(FusionModel& model, const std::vector<std::pair<Tensor, Tensor>>& features,
                          const std::vector<data::ModalityMask>& masks, const Stage1Options& opts) {
    if (features.empty()) throw std::invalid_argument("train_stage1: empty train split");
    if (features.size() != masks.size()) throw std::invalid_argument("train_stage1: feature/mask mismatch");

    nn::ParamStore& store = model.store();
    std::vector<nn::Param*> instr_params = store.with_prefix("instr.");
    std::vector<nn::Param*> mlp_params;
    for (const char* prefix : {"adapter.", "hyper.", "gfs."})
        for (nn::Param* p : store.with_prefix(prefix)) mlp_params.push_back(p);

    nn::AdamW opt;
    std::vector<nn::AdamW::Group> groups(2);
    groups[0].params = instr_params;
    groups[0].lr = opts.lr_instructions;
    groups[0].weight_decay = 0.0;  // instruction tokens are free embeddings
    groups[1].params = mlp_params;
    groups[1].lr = opts.lr_mlp;
    groups[1].weight_decay = opts.weight_decay;

    Stage1Result res;
    std::vector<size_t> order(features.size());
    std::iota(order.begin(), order.end(), size_t{0});

    for (int epoch = 0; epoch < opts.epochs; ++epoch) {
        Rng shuffler(Rng::mix(opts.seed, uint64_t(epoch)));
        shuffler.shuffle(order);
        double ep_loss = 0.0;
        int steps = 0;
        for (size_t b0 = 0; b0 < order.size(); b0 += size_t(opts.batch)) {
            const size_t b1 = std::min(order.size(), b0 + size_t(opts.batch));
            nn::Tape tape;
            std::vector<int> g_pc_parts, g_rgb_parts;
            for (size_t oi = b0; oi < b1; ++oi) {
                const auto& [f_pc, f_rgb] = features[order[oi]];
                const FusedStreams fs = model.forward(tape, f_pc, f_rgb, masks[order[oi]]);
                g_pc_parts.push_back(fs.g_pc);
                g_rgb_parts.push_back(fs.g_rgb);
            }
            const int g_pc = g_pc_parts.size() == 1 ? g_pc_parts[0] : tape.concat_rows(g_pc_parts);
            const int g_rgb = g_rgb_parts.size() == 1 ? g_rgb_parts[0] : tape.concat_rows(g_rgb_parts);
            const int loss = model.infonce(tape, g_pc, g_rgb);

            store.zero_grads();
            tape.backward(loss);

            double instr_max = 0.0;
            for (nn::Param* p : instr_params)
                if (!p->grad.empty())
                    for (double gv : p->grad.v) instr_max = std::max(instr_max, std::abs(gv));
            res.batch_instr_grad_maxabs.push_back(instr_max);

            opt.step(groups);
            ep_loss += tape.val(loss).v[0];
            ++steps;
        }
        res.epoch_loss.push_back(steps ? ep_loss / steps : 0.0);
    }
    return res;
}

}  // namespace miiad::fusion
