#include "miiad/config.hpp"

#include <fstream>
#include <stdexcept>

#include "miiad/rng.hpp"

namespace miiad::harness {

using nlohmann::json;

namespace {

template <typename T>
void get_if(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

json ExperimentConfig::to_json() const {
    json j;
    j["seeds"] = {{"data", seeds.data}, {"model", seeds.model}, {"metric", seeds.metric}};
    j["dataset"] = {{"categories", dataset.categories},
                    {"n_train", dataset.n_train},
                    {"n_test", dataset.n_test},
                    {"size", dataset.size},
                    {"anomaly_frac", dataset.anomaly_frac},
                    {"plane_removal", dataset.plane_removal},
                    {"plane_threshold", dataset.plane_threshold},
                    {"ransac_iterations", dataset.ransac_iterations}};
    j["missing"] = {{"mode", missing.mode}, {"rate", missing.rate}};
    j["model"] = {{"patch", model.patch},
                  {"rgb_dim", model.rgb_dim},
                  {"rgb_depth", model.rgb_depth},
                  {"rgb_heads", model.rgb_heads},
                  {"rgb_mlp_ratio", model.rgb_mlp_ratio},
                  {"rgb_taps", model.rgb_taps},
                  {"pc_dim", model.pc_dim},
                  {"pc_enc_blocks", model.pc_enc_blocks},
                  {"pc_dec_blocks", model.pc_dec_blocks},
                  {"pc_heads", model.pc_heads},
                  {"pc_mlp_ratio", model.pc_mlp_ratio},
                  {"pc_mlp_hidden", model.pc_mlp_hidden},
                  {"pc_groups", model.pc_groups},
                  {"pc_group_size", model.pc_group_size},
                  {"pc_epsilon", model.pc_epsilon},
                  {"pc_interp", model.pc_interp},
                  {"pc_taps", model.pc_taps},
                  {"d_f", model.d_f},
                  {"fusion_depth", model.fusion_depth},
                  {"fusion_heads", model.fusion_heads},
                  {"fusion_mlp_ratio", model.fusion_mlp_ratio},
                  {"instr_len", model.instr_len},
                  {"instr_start", model.instr_start},
                  {"instr_end", model.instr_end},
                  {"keep_instructions", model.keep_instructions},
                  {"temperature", model.temperature},
                  {"d_g", model.d_g},
                  {"target_hidden", model.target_hidden},
                  {"d_z", model.d_z},
                  {"xi_hidden", model.xi_hidden},
                  {"d_e", model.d_e},
                  {"rank", model.rank},
                  {"hybrid_attn_dim", model.hybrid_attn_dim}};
    j["stage1"] = {{"epochs", stage1.epochs},
                   {"batch", stage1.batch},
                   {"lr_instructions", stage1.lr_instructions},
                   {"lr_mlp", stage1.lr_mlp},
                   {"weight_decay", stage1.weight_decay}};
    j["stage2"] = {{"epochs", stage2.epochs},
                   {"batch", stage2.batch},
                   {"lr", stage2.lr},
                   {"weight_decay", stage2.weight_decay},
                   {"lambda_pseudo", stage2.lambda_pseudo}};
    j["detect"] = {{"coreset_fraction", detect.coreset_fraction},
                   {"phi_neighbors", detect.phi_neighbors},
                   {"eta", detect.eta},
                   {"mdm_reg_scale", detect.mdm_reg_scale},
                   {"ocsvm",
                    {{"nu", detect.ocsvm.nu},
                     {"gamma", detect.ocsvm.gamma},
                     {"subsample_cap", detect.ocsvm.subsample_cap},
                     {"mode", detect.ocsvm.mode},
                     {"lr", detect.ocsvm.lr},
                     {"epochs", detect.ocsvm.epochs}}}};
    j["metrics"] = {{"fpr_limit", metrics.fpr_limit}, {"eight_connectivity", metrics.eight_connectivity}};
    j["ablation"] = {{"use_fe_extras", ablation.use_fe_extras},
                     {"use_aif", ablation.use_aif},
                     {"use_rphd", ablation.use_rphd}};
    return j;
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
    ExperimentConfig c;
    if (j.contains("seeds")) {
        const auto& s = j.at("seeds");
        get_if(s, "data", c.seeds.data);
        get_if(s, "model", c.seeds.model);
        get_if(s, "metric", c.seeds.metric);
    }
    if (j.contains("dataset")) {
        const auto& d = j.at("dataset");
        get_if(d, "categories", c.dataset.categories);
        get_if(d, "n_train", c.dataset.n_train);
        get_if(d, "n_test", c.dataset.n_test);
        get_if(d, "size", c.dataset.size);
        get_if(d, "anomaly_frac", c.dataset.anomaly_frac);
        get_if(d, "plane_removal", c.dataset.plane_removal);
        get_if(d, "plane_threshold", c.dataset.plane_threshold);
        get_if(d, "ransac_iterations", c.dataset.ransac_iterations);
    }
    if (j.contains("missing")) {
        const auto& m = j.at("missing");
        get_if(m, "mode", c.missing.mode);
        get_if(m, "rate", c.missing.rate);
    }
    if (j.contains("model")) {
        const auto& m = j.at("model");
        get_if(m, "patch", c.model.patch);
        get_if(m, "rgb_dim", c.model.rgb_dim);
        get_if(m, "rgb_depth", c.model.rgb_depth);
        get_if(m, "rgb_heads", c.model.rgb_heads);
        get_if(m, "rgb_mlp_ratio", c.model.rgb_mlp_ratio);
        get_if(m, "rgb_taps", c.model.rgb_taps);
        get_if(m, "pc_dim", c.model.pc_dim);
        get_if(m, "pc_enc_blocks", c.model.pc_enc_blocks);
        get_if(m, "pc_dec_blocks", c.model.pc_dec_blocks);
        get_if(m, "pc_heads", c.model.pc_heads);
        get_if(m, "pc_mlp_ratio", c.model.pc_mlp_ratio);
        get_if(m, "pc_mlp_hidden", c.model.pc_mlp_hidden);
        get_if(m, "pc_groups", c.model.pc_groups);
        get_if(m, "pc_group_size", c.model.pc_group_size);
        get_if(m, "pc_epsilon", c.model.pc_epsilon);
        get_if(m, "pc_interp", c.model.pc_interp);
        get_if(m, "pc_taps", c.model.pc_taps);
        get_if(m, "d_f", c.model.d_f);
        get_if(m, "fusion_depth", c.model.fusion_depth);
        get_if(m, "fusion_heads", c.model.fusion_heads);
        get_if(m, "fusion_mlp_ratio", c.model.fusion_mlp_ratio);
        get_if(m, "instr_len", c.model.instr_len);
        get_if(m, "instr_start", c.model.instr_start);
        get_if(m, "instr_end", c.model.instr_end);
        get_if(m, "keep_instructions", c.model.keep_instructions);
        get_if(m, "temperature", c.model.temperature);
        get_if(m, "d_g", c.model.d_g);
        get_if(m, "target_hidden", c.model.target_hidden);
        get_if(m, "d_z", c.model.d_z);
        get_if(m, "xi_hidden", c.model.xi_hidden);
        get_if(m, "d_e", c.model.d_e);
        get_if(m, "rank", c.model.rank);
        get_if(m, "hybrid_attn_dim", c.model.hybrid_attn_dim);
    }
    if (j.contains("stage1")) {
        const auto& s = j.at("stage1");
        get_if(s, "epochs", c.stage1.epochs);
        get_if(s, "batch", c.stage1.batch);
        get_if(s, "lr_instructions", c.stage1.lr_instructions);
        get_if(s, "lr_mlp", c.stage1.lr_mlp);
        get_if(s, "weight_decay", c.stage1.weight_decay);
    }
    if (j.contains("stage2")) {
        const auto& s = j.at("stage2");
        get_if(s, "epochs", c.stage2.epochs);
        get_if(s, "batch", c.stage2.batch);
        get_if(s, "lr", c.stage2.lr);
        get_if(s, "weight_decay", c.stage2.weight_decay);
        get_if(s, "lambda_pseudo", c.stage2.lambda_pseudo);
    }
    if (j.contains("detect")) {
        const auto& d = j.at("detect");
        get_if(d, "coreset_fraction", c.detect.coreset_fraction);
        get_if(d, "phi_neighbors", c.detect.phi_neighbors);
        get_if(d, "eta", c.detect.eta);
        get_if(d, "mdm_reg_scale", c.detect.mdm_reg_scale);
        if (d.contains("ocsvm")) {
            const auto& o = d.at("ocsvm");
            get_if(o, "nu", c.detect.ocsvm.nu);
            get_if(o, "gamma", c.detect.ocsvm.gamma);
            get_if(o, "subsample_cap", c.detect.ocsvm.subsample_cap);
            get_if(o, "mode", c.detect.ocsvm.mode);
            get_if(o, "lr", c.detect.ocsvm.lr);
            get_if(o, "epochs", c.detect.ocsvm.epochs);
        }
    }
    if (j.contains("metrics")) {
        const auto& m = j.at("metrics");
        get_if(m, "fpr_limit", c.metrics.fpr_limit);
        get_if(m, "eight_connectivity", c.metrics.eight_connectivity);
    }
    if (j.contains("ablation")) {
        const auto& a = j.at("ablation");
        get_if(a, "use_fe_extras", c.ablation.use_fe_extras);
        get_if(a, "use_aif", c.ablation.use_aif);
        get_if(a, "use_rphd", c.ablation.use_rphd);
    }
    return c;
}

ExperimentConfig ExperimentConfig::load(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("config: cannot open " + path);
    json j;
    is >> j;
    return from_json(j);
}

void ExperimentConfig::save(const std::string& path) const {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("config: cannot write " + path);
    os << to_json().dump(2) << "\n";
}

std::vector<std::string> ExperimentConfig::validate() const {
    std::vector<std::string> errs;
    auto req = [&](bool ok, const std::string& field, const std::string& msg) {
        if (!ok) errs.push_back(field + ": " + msg);
    };
    req(!dataset.categories.empty(), "dataset.categories", "must not be empty");
    req(dataset.size >= 8, "dataset.size", "must be >= 8");
    req(dataset.n_train >= 4, "dataset.n_train", "must be >= 4");
    req(dataset.n_test >= 2, "dataset.n_test", "must be >= 2");
    req(dataset.anomaly_frac > 0.0 && dataset.anomaly_frac < 1.0, "dataset.anomaly_frac",
        "must be in (0,1) so both test classes exist");
    req(dataset.plane_threshold > 0.0, "dataset.plane_threshold", "must be > 0");
    req(dataset.ransac_iterations > 0, "dataset.ransac_iterations", "must be > 0");
    req(missing.mode == "pc" || missing.mode == "rgb" || missing.mode == "both", "missing.mode",
        "must be one of pc|rgb|both");
    req(missing.rate >= 0.0 && missing.rate <= 1.0, "missing.rate", "must be in [0,1]");
    req(model.patch >= 1 && dataset.size % model.patch == 0, "model.patch", "must divide dataset.size");
    req(model.rgb_depth >= 1, "model.rgb_depth", "must be >= 1");
    req(model.rgb_dim % model.rgb_heads == 0, "model.rgb_heads", "must divide rgb_dim");
    for (int t : model.rgb_taps)
        req(t >= 0 && t < model.rgb_depth, "model.rgb_taps", "tap index outside [0, rgb_depth)");
    req(model.pc_dim % model.pc_heads == 0, "model.pc_heads", "must divide pc_dim");
    req(model.pc_enc_blocks >= 1 && model.pc_dec_blocks >= 0, "model.pc_enc_blocks", "need >= 1 encoder block");
    for (int t : model.pc_taps)
        req(t >= 0 && t < model.pc_enc_blocks + model.pc_dec_blocks, "model.pc_taps",
            "tap index outside the block range");
    req(model.pc_groups >= 1, "model.pc_groups", "must be >= 1");
    req(model.pc_group_size >= 1, "model.pc_group_size", "must be >= 1");
    req(model.pc_epsilon > 0.0, "model.pc_epsilon", "must be > 0");
    req(model.pc_interp == "perpoint" || model.pc_interp == "literal", "model.pc_interp",
        "must be perpoint|literal");
    req(model.d_f % model.fusion_heads == 0, "model.fusion_heads", "must divide d_f");
    req(model.fusion_depth >= 0, "model.fusion_depth", "must be >= 0");
    req(model.instr_len >= 0, "model.instr_len", "must be >= 0");
    if (model.fusion_depth > 0) {
        req(model.instr_start >= 0 && model.instr_start <= model.instr_end, "model.instr_start",
            "must satisfy 0 <= start <= end");
        req(model.instr_end < model.fusion_depth, "model.instr_end", "must be < fusion_depth");
    }
    req(model.temperature > 0.0, "model.temperature", "must be > 0");
    req(model.target_hidden >= 1 && model.d_z >= 1 && model.xi_hidden >= 1 && model.d_e >= 1 &&
            model.rank >= 1,
        "model", "hypernetwork dims must be >= 1");
    req(stage1.epochs >= 0 && stage1.batch >= 1, "stage1", "epochs >= 0 and batch >= 1");
    req(stage2.epochs >= 0 && stage2.batch >= 1, "stage2", "epochs >= 0 and batch >= 1");
    req(detect.coreset_fraction > 0.0 && detect.coreset_fraction <= 1.0, "detect.coreset_fraction",
        "must be in (0,1]");
    req(detect.phi_neighbors >= 1, "detect.phi_neighbors", "must be >= 1");
    req(detect.eta == "patchcore" || detect.eta.rfind("constant:", 0) == 0, "detect.eta",
        "must be patchcore or constant:<value>");
    req(detect.ocsvm.nu > 0.0 && detect.ocsvm.nu <= 1.0, "detect.ocsvm.nu", "must be in (0,1]");
    req(detect.ocsvm.mode == "sgd" || detect.ocsvm.mode == "exact", "detect.ocsvm.mode",
        "must be sgd|exact");
    req(detect.ocsvm.subsample_cap >= 4, "detect.ocsvm.subsample_cap", "must be >= 4");
    req(metrics.fpr_limit > 0.0 && metrics.fpr_limit <= 1.0, "metrics.fpr_limit", "must be in (0,1]");
    return errs;
}

uint64_t ExperimentConfig::hash() const { return Rng::hash(to_json().dump()); }

}  // namespace miiad::harness
