#pragma once

#include <string>
#include <utility>
#include <vector>

#include "miiad/data.hpp"
#include "miiad/params.hpp"
#include "miiad/tensor.hpp"

namespace miiad::fusion {

using miiad::Tensor;

struct FusionConfig {
    // backbone (frozen)
    int d_f = 64;
    int depth = 4;
    int heads = 4;
    int mlp_ratio = 4;
    int tokens = 16;     // L per modality
    int d_pc_in = 48;    // point encoder output width
    int d_rgb_in = 144;  // rgb encoder output width

    // modality-incomplete instructions
    int instr_len = 16;
    int instr_start = 0;
    int instr_end = 3;
    bool keep_instructions = false;  // accumulate variant of the per-layer lifecycle
    bool use_instructions = true;    // AIF ablation switch

    // hypernetwork-generated projection MLPs
    int d_g = 64;
    int target_hidden = 16;  // hidden width of each generated 2-layer MLP
    int d_z = 8;
    int xi_hidden = 4;
    int d_e = 8;
    int rank = 4;
    bool linear_target_mlp = false;  // drop the activation (identity-config tests)

    double temperature = 0.07;
};

// Instruction block for a modality pattern: 0 = pc missing, 1 = rgb missing,
// 2 = complete.
int select_instruction(const data::ModalityMask& mask);

// Standalone concat used by the per-layer lifecycle; instruction rows occupy
// positions [0, L_i).
Tensor prepend_instruction(const Tensor& instruction, const Tensor& tokens);

struct FusedStreams {
    int f_pc_hat = -1;   // (L x d_f) tape ids
    int f_rgb_hat = -1;
    int g_pc = -1;       // (L x d_g)
    int g_rgb = -1;
    int g_fs = -1;       // (L x d_g)
};

class FusionModel {
public:
    FusionModel(nn::ParamStore& store, const FusionConfig& cfg, Rng& rng);  // creates params
    FusionModel(nn::ParamStore& store, const FusionConfig& cfg);            // binds existing

    // Cached encoder grids in, fused and projected streams out. Instruction
    // selection follows the modality mask; pseudo-filled grids are expected
    // for absent modalities.
    FusedStreams forward(nn::Tape& tape, const Tensor& f_pc, const Tensor& f_rgb,
                         const data::ModalityMask& mask) const;

    // fusion trunk only (adapter + instruction-conditioned backbone)
    std::pair<int, int> fuse(nn::Tape& tape, int pc_tokens, int rgb_tokens, int instr_block) const;

    // hypernetwork: generated weights of target layer n for one modality
    struct GeneratedLayer {
        int w = -1;  // (n_in x n_out)
        int b = -1;  // (1 x n_out)
        int k_flat = -1;   // static factorized part, before the delta
        int w_flat = -1;   // input-conditioned delta
    };
    GeneratedLayer generate_layer(nn::Tape& tape, int summary, const std::string& modality, int layer) const;

    // tokenwise generated 2-layer MLP for one stream; summary = mean token
    int project_stream(nn::Tape& tape, int f_hat, const std::string& modality) const;

    // symmetric patch-wise InfoNCE over already-stacked token matrices
    int infonce(nn::Tape& tape, int g_a, int g_b) const;

    int adapter_pc(nn::Tape& tape, const Tensor& f_pc) const;
    int adapter_rgb(nn::Tape& tape, const Tensor& f_rgb) const;

    std::pair<int, int> target_dims(int layer) const;  // (n_in, n_out)
    int target_flat(int layer) const;

    const FusionConfig& config() const { return cfg_; }
    nn::ParamStore& store() const { return store_; }

private:
    void bind();

    nn::ParamStore& store_;
    FusionConfig cfg_;
    std::vector<nn::BlockParams> blocks_;
};

struct Stage1Options {
    int epochs = 10;
    int batch = 16;
    double lr_instructions = 1e-2;
    double lr_mlp = 1e-3;
    double weight_decay = 1e-4;
    uint64_t seed = 1;
};

struct Stage1Result {
    std::vector<double> epoch_loss;
    std::vector<double> batch_instr_grad_maxabs;  // one entry per optimizer step
};

// Trains instructions, hypernetwork, adapters, and the fusion projection on
// cached encoder features; the backbone stays frozen.
Stage1Result train_stage1(FusionModel& model,
                          const std::vector<std::pair<Tensor, Tensor>>& features,  // (f_pc, f_rgb)
                          const std::vector<data::ModalityMask>& masks, const Stage1Options& opts);

}  // namespace miiad::fusion
