#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

namespace miiad::harness {

struct ExperimentConfig {
    struct Seeds {
        uint64_t data = 7;
        uint64_t model = 1;
        uint64_t metric = 99;
    } seeds;

    struct Dataset {
        std::vector<std::string> categories = {"dome", "disk", "slab"};
        int n_train = 60;
        int n_test = 40;
        int size = 32;
        double anomaly_frac = 0.5;
        bool plane_removal = true;
        double plane_threshold = 0.005;
        int ransac_iterations = 256;
    } dataset;

    struct Missing {
        std::string mode = "pc";  // pc | rgb | both
        double rate = 0.7;
    } missing;

    struct Model {
        int patch = 8;

        int rgb_dim = 48;
        int rgb_depth = 12;
        int rgb_heads = 4;
        int rgb_mlp_ratio = 4;
        std::vector<int> rgb_taps = {3, 7, 11};

        int pc_dim = 48;
        int pc_enc_blocks = 2;
        int pc_dec_blocks = 1;
        int pc_heads = 2;
        int pc_mlp_ratio = 4;
        int pc_mlp_hidden = 32;
        int pc_groups = 16;      // M
        int pc_group_size = 16;  // k
        double pc_epsilon = 1e-8;
        std::string pc_interp = "perpoint";  // perpoint | literal
        std::vector<int> pc_taps = {};

        int d_f = 64;
        int fusion_depth = 4;
        int fusion_heads = 4;
        int fusion_mlp_ratio = 4;
        int instr_len = 16;
        int instr_start = 0;
        int instr_end = 3;
        bool keep_instructions = false;
        double temperature = 0.07;

        int d_g = 64;
        int target_hidden = 16;
        int d_z = 8;
        int xi_hidden = 4;
        int d_e = 8;
        int rank = 4;

        int hybrid_attn_dim = 16;
    } model;

    struct Stage1 {
        int epochs = 10;
        int batch = 16;
        double lr_instructions = 1e-2;
        double lr_mlp = 1e-3;
        double weight_decay = 1e-4;
    } stage1;

    struct Stage2 {
        int epochs = 6;
        int batch = 16;
        double lr = 1e-3;
        double weight_decay = 1e-4;
        double lambda_pseudo = 1.0;
    } stage2;

    struct Detect {
        double coreset_fraction = 1.0;
        int phi_neighbors = 3;
        std::string eta = "patchcore";  // patchcore | constant:<value>
        double mdm_reg_scale = 1e-6;
        struct Ocsvm {
            double nu = 0.1;
            double gamma = 0.0;  // <= 0: auto
            int subsample_cap = 4096;
            std::string mode = "sgd";  // sgd | exact
            double lr = 1e-4;
            int epochs = 40;
        } ocsvm;
    } detect;

    struct Metrics {
        double fpr_limit = 0.3;
        bool eight_connectivity = true;
    } metrics;

    struct Ablation {
        bool use_fe_extras = true;
        bool use_aif = true;
        bool use_rphd = true;
    } ablation;

    nlohmann::json to_json() const;
    static ExperimentConfig from_json(const nlohmann::json& j);
    static ExperimentConfig load(const std::string& path);
    void save(const std::string& path) const;

    // empty when valid; otherwise "field.path: message" entries
    std::vector<std::string> validate() const;

    uint64_t hash() const;  // over the canonical json dump
};

}  // namespace miiad::harness
