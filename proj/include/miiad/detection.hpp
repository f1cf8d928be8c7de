#pragma once

#include <array>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "miiad/data.hpp"
#include "miiad/params.hpp"
#include "miiad/tensor.hpp"

namespace miiad::detect {

using miiad::Tensor;

// ---------------------------------------------------------------------------
// Masked attention (real/pseudo group isolation)
// ---------------------------------------------------------------------------

// Row-normalized attention weights with a permit mask; masked entries are
// exactly zero. mask is L x L row-major, mask[i*L+j] = tokens i,j may attend.
Tensor masked_attention_weights(const Tensor& Q, const Tensor& K, const std::vector<uint8_t>& mask);

// Full attention output: weights * V.
Tensor masked_attention(const Tensor& Q, const Tensor& K, const Tensor& V, const std::vector<uint8_t>& mask);

struct GroupAssignment {
    std::vector<uint8_t> is_pseudo;  // per token
    std::vector<uint8_t> mask;       // L x L same-group permit mask
};

// Provenance rule: tokens from ones-filled modalities form the pseudo group,
// genuinely observed tokens the real group.
GroupAssignment assign_groups(const data::ModalityMask& mask, int tokens_per_modality);
GroupAssignment assign_groups(const std::vector<uint8_t>& token_is_pseudo);

// 0 = complete, 1 = rgb-only (pc missing), 2 = pc-only (rgb missing)
int presence_class(const data::ModalityMask& mask);

// ---------------------------------------------------------------------------
// Hybrid layer and its supervision
// ---------------------------------------------------------------------------

struct HybridConfig {
    int d_g = 64;
    int attn_dim = 16;  // D, the key width of the masked attention
    int n_classes = 3;
    int reg_dim = 64;   // width of the regression target (the fused feature)
};

class HybridModel {
public:
    HybridModel(nn::ParamStore& store, const HybridConfig& cfg, Rng& rng);  // creates params
    HybridModel(nn::ParamStore& store, const HybridConfig& cfg);            // binds existing

    // tokens (2L x d_g) -> refined tokens (2L x d_g), attention restricted to
    // same-provenance groups, residual connection around the layer
    int refine(nn::Tape& tape, int tokens, const std::vector<uint8_t>& is_pseudo) const;
    Tensor refine(const Tensor& tokens, const std::vector<uint8_t>& is_pseudo) const;

    int classify(nn::Tape& tape, int pooled) const;  // (1 x d_g) -> logits (1 x n_classes)
    int regress(nn::Tape& tape, int pooled) const;   // (1 x d_g) -> (1 x d_g)

    const HybridConfig& config() const { return cfg_; }
    nn::ParamStore& store() const { return store_; }

private:
    nn::ParamStore& store_;
    HybridConfig cfg_;
};

// Running mean of per-modality predictions across epochs (modality 0 = pc,
// 1 = rgb). Classifier means are renormalized to sum 1.
class PseudoLabelStore {
public:
    struct Entry {
        Tensor cls;  // (1 x n_classes)
        Tensor reg;  // (1 x d_g)
        int epochs = 0;
    };

    void update(int sample_id, int modality, const Tensor& cls, const Tensor& reg);
    const Entry* find(int sample_id, int modality) const;
    size_t size() const { return entries_.size(); }

private:
    std::map<std::pair<int, int>, Entry> entries_;
};

// Scalar loss helpers; these run through the same tape ops the training
// loop uses, so unit oracles exercise the real code path.
double ce_loss(const Tensor& logits, int target);
double kl_loss(const Tensor& p, const Tensor& q_logits);
double l2_loss(const Tensor& a, const Tensor& b);

struct Stage2SampleInputs {
    int id = 0;
    Tensor tokens;                   // (2L x d_g): g_pc rows then g_rgb rows
    std::vector<uint8_t> is_pseudo;  // per token
    int presence = 0;                // class target
    Tensor reg_target;               // (1 x d_g)
};

struct Stage2Options {
    int epochs = 6;
    int batch = 16;
    double lr = 1e-3;
    double weight_decay = 1e-4;
    double lambda_pseudo = 1.0;
    uint64_t seed = 2;
};

struct Stage2Result {
    std::vector<double> epoch_loss;
    std::vector<double> epoch_real;
    std::vector<double> epoch_pseudo;
};

Stage2Result train_stage2(HybridModel& model, const std::vector<Stage2SampleInputs>& samples,
                          PseudoLabelStore& store, const Stage2Options& opts);

// ---------------------------------------------------------------------------
// Memory repositories and scoring
// ---------------------------------------------------------------------------

struct MemoryRepository {
    Tensor bank;                  // (N x d)
    std::string modality;         // "pc", "rgb", "fs"
    std::vector<int> source_ids;  // contributing sample id per row
};

// Greedy k-center (max-min) selection of `keep` row indices, deterministic
// given the start row.
std::vector<int> greedy_coreset(const Tensor& rows, int keep, int start);

// Bank of all tokens of the included samples, optionally coreset-reduced.
MemoryRepository build_repository(const std::vector<Tensor>& sample_tokens, const std::vector<int>& sample_ids,
                                  const std::vector<uint8_t>& include, const std::string& modality,
                                  double coreset_fraction, uint64_t seed);

struct PhiOptions {
    int neighbors = 3;        // b nearest bank entries for the re-weight
    bool eta_constant = false;
    double eta_value = 1.0;
};

// Image-level score: re-weighted distance of the worst patch to the bank.
// `exclude_id` drops rows contributed by that sample (leave-one-out scoring
// of the training split, whose own tokens live in the bank).
double score_phi(const MemoryRepository& repo, const Tensor& tokens, const PhiOptions& opts = {},
                 int exclude_id = -1);

// Per-patch nearest-bank distances, length = token count.
std::vector<double> score_psi(const MemoryRepository& repo, const Tensor& tokens, int exclude_id = -1);

// ---------------------------------------------------------------------------
// Decision models
// ---------------------------------------------------------------------------

struct Mdm {
    std::array<double, 3> mean{0, 0, 0};
    std::array<std::array<double, 3>, 3> cov_inv{};  // of the regularized covariance
    double lambda = 0.0;
    bool degenerate = false;
};

double mdm_distance(const Mdm& m, const std::array<double, 3>& x);

struct OcsvmOptions {
    double nu = 0.1;
    double gamma = 0.0;  // <= 0 selects 1 / (3 * var of training vectors)
    int subsample_cap = 4096;
    std::string mode = "sgd";  // "sgd" or "exact"
    double lr = 1e-4;
    int epochs = 40;
    uint64_t seed = 0;
};

class OneClassSvm {
public:
    void fit(const std::vector<std::array<double, 3>>& points, const OcsvmOptions& opts);
    // larger = more anomalous (rho - sum_i alpha_i k(x_i, x))
    double anomaly_score(const std::array<double, 3>& x) const;

    bool fitted() const { return !support_.empty(); }
    double gamma() const { return gamma_; }
    double rho() const { return rho_; }
    const std::vector<std::array<double, 3>>& support() const { return support_; }
    const std::vector<double>& alpha() const { return alpha_; }
    const std::array<double, 3>& channel_mean() const { return mean_; }
    const std::array<double, 3>& channel_scale() const { return scale_; }
    void restore(std::vector<std::array<double, 3>> support, std::vector<double> alpha, double gamma,
                 double rho, const std::array<double, 3>& mean, const std::array<double, 3>& scale);

private:
    std::array<double, 3> standardize(const std::array<double, 3>& x) const {
        return {(x[0] - mean_[0]) / scale_[0], (x[1] - mean_[1]) / scale_[1],
                (x[2] - mean_[2]) / scale_[2]};
    }

    std::vector<std::array<double, 3>> support_;  // stored standardized
    std::vector<double> alpha_;
    double gamma_ = 1.0;
    double rho_ = 0.0;
    // per-channel training statistics; the three repositories produce
    // distances on very different scales
    std::array<double, 3> mean_{0, 0, 0};
    std::array<double, 3> scale_{1, 1, 1};
};

struct DecisionModels {
    Mdm mdm;
    OneClassSvm ocsvm;
};

struct DecisionOptions {
    double mdm_reg_scale = 1e-6;  // lambda = scale * trace(cov)/3; 0 disables
    OcsvmOptions ocsvm;
};

// image_scores: one 3-vector per training sample; patch_vectors: pooled
// per-patch 3-vectors of the training set.
DecisionModels fit_decision(const std::vector<std::array<double, 3>>& image_scores,
                            const std::vector<std::array<double, 3>>& patch_vectors,
                            const DecisionOptions& opts);

struct ScoreVector {
    std::array<double, 3> image_scores{0, 0, 0};    // phi per repository (pc, rgb, fs)
    std::vector<std::array<double, 3>> patch_maps;  // psi triple per patch
    int patch_rows = 0, patch_cols = 0;
};

struct AnomalyResult {
    double sco_a = 0.0;
    Tensor seg_patch;  // (patch_rows x patch_cols)
    Tensor seg_pixel;  // nearest-neighbor upsampled view
};

AnomalyResult decide(const DecisionModels& models, const ScoreVector& sv, int pixel_h, int pixel_w);

}  // namespace miiad::detect
