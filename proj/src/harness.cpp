#include "miiad/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <future>
#include <stdexcept>

#include "miiad/checkpoint.hpp"
#include "miiad/miid_io.hpp"
#include "miiad/rng.hpp"

namespace miiad::harness {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// CategoryPipeline
// ---------------------------------------------------------------------------

namespace {

enc::RgbEncoderConfig rgb_config(const ExperimentConfig& cfg) {
    enc::RgbEncoderConfig rc;
    rc.patch = cfg.model.patch;
    rc.image_size = cfg.dataset.size;
    rc.dim = cfg.model.rgb_dim;
    rc.depth = cfg.model.rgb_depth;
    rc.heads = cfg.model.rgb_heads;
    rc.mlp_ratio = cfg.model.rgb_mlp_ratio;
    rc.taps = cfg.model.rgb_taps;
    return rc;
}

enc::PointEncoderConfig point_config(const ExperimentConfig& cfg) {
    enc::PointEncoderConfig pc;
    pc.dim = cfg.model.pc_dim;
    pc.enc_blocks = cfg.model.pc_enc_blocks;
    pc.dec_blocks = cfg.model.pc_dec_blocks;
    pc.heads = cfg.model.pc_heads;
    pc.mlp_ratio = cfg.model.pc_mlp_ratio;
    pc.mlp_hidden = cfg.model.pc_mlp_hidden;
    pc.num_groups = cfg.model.pc_groups;
    pc.group_size = cfg.model.pc_group_size;
    pc.epsilon = cfg.model.pc_epsilon;
    pc.literal_interp = cfg.model.pc_interp == "literal";
    pc.taps = cfg.model.pc_taps;
    return pc;
}

fusion::FusionConfig fusion_config(const ExperimentConfig& cfg) {
    fusion::FusionConfig fc;
    fc.d_f = cfg.model.d_f;
    fc.depth = cfg.model.fusion_depth;
    fc.heads = cfg.model.fusion_heads;
    fc.mlp_ratio = cfg.model.fusion_mlp_ratio;
    const int side = cfg.dataset.size / cfg.model.patch;
    fc.tokens = side * side;
    fc.d_pc_in = point_config(cfg).out_dim();
    fc.d_rgb_in = rgb_config(cfg).out_dim();
    fc.instr_len = cfg.model.instr_len;
    fc.instr_start = cfg.model.instr_start;
    fc.instr_end = cfg.model.instr_end;
    fc.keep_instructions = cfg.model.keep_instructions;
    fc.use_instructions = cfg.ablation.use_aif;
    fc.d_g = cfg.model.d_g;
    fc.target_hidden = cfg.model.target_hidden;
    fc.d_z = cfg.model.d_z;
    fc.xi_hidden = cfg.model.xi_hidden;
    fc.d_e = cfg.model.d_e;
    fc.rank = cfg.model.rank;
    fc.temperature = cfg.model.temperature;
    return fc;
}

detect::PhiOptions phi_options(const ExperimentConfig& cfg) {
    detect::PhiOptions po;
    po.neighbors = cfg.detect.phi_neighbors;
    if (cfg.detect.eta.rfind("constant:", 0) == 0) {
        po.eta_constant = true;
        po.eta_value = std::stod(cfg.detect.eta.substr(9));
    }
    return po;
}

detect::OcsvmOptions ocsvm_options(const ExperimentConfig& cfg) {
    detect::OcsvmOptions oo;
    oo.nu = cfg.detect.ocsvm.nu;
    oo.gamma = cfg.detect.ocsvm.gamma;
    oo.subsample_cap = cfg.detect.ocsvm.subsample_cap;
    oo.mode = cfg.detect.ocsvm.mode;
    oo.lr = cfg.detect.ocsvm.lr;
    oo.epochs = cfg.detect.ocsvm.epochs;
    oo.seed = cfg.seeds.model;
    return oo;
}

}  // namespace

int CategoryPipeline::stream_width() const {
    return cfg_.ablation.use_aif ? cfg_.model.d_g : cfg_.model.d_f;
}

int CategoryPipeline::fused_width() const {
    return cfg_.ablation.use_aif ? cfg_.model.d_g : 2 * cfg_.model.d_f;
}

void CategoryPipeline::build_models(bool fresh) {
    if (fresh) {
        Rng rng(Rng::mix(cfg_.seeds.model, Rng::hash("init/" + category_)));
        rgb_ = std::make_unique<enc::RgbEncoder>(*store_, rgb_config(cfg_), rng);
        point_ = std::make_unique<enc::PointEncoder>(*store_, point_config(cfg_), rng);
        fusion_ = std::make_unique<fusion::FusionModel>(*store_, fusion_config(cfg_), rng);
        detect::HybridConfig hc;
        hc.d_g = stream_width();
        hc.attn_dim = cfg_.model.hybrid_attn_dim;
        hc.reg_dim = fused_width();
        hybrid_ = std::make_unique<detect::HybridModel>(*store_, hc, rng);
    } else {
        rgb_ = std::make_unique<enc::RgbEncoder>(*store_, rgb_config(cfg_));
        point_ = std::make_unique<enc::PointEncoder>(*store_, point_config(cfg_));
        fusion_ = std::make_unique<fusion::FusionModel>(*store_, fusion_config(cfg_));
        detect::HybridConfig hc;
        hc.d_g = stream_width();
        hc.attn_dim = cfg_.model.hybrid_attn_dim;
        hc.reg_dim = fused_width();
        hybrid_ = std::make_unique<detect::HybridModel>(*store_, hc);
    }
}

CategoryPipeline::CategoryPipeline(const ExperimentConfig& cfg, const std::string& category)
    : cfg_(cfg), category_(category), store_(std::make_unique<nn::ParamStore>()) {
    build_models(true);
}

CategoryPipeline::CategoryPipeline(const ExperimentConfig& cfg, const std::string& category,
                                   const std::string& checkpoint_dir)
    : cfg_(cfg), category_(category), store_(std::make_unique<nn::ParamStore>()) {
    const json manifest = load_params(checkpoint_dir, *store_);
    build_models(false);
    if (manifest.contains("has_banks") && manifest.at("has_banks").get<bool>()) {
        for (const char* tag : {"pc", "rgb", "fs"}) repos_.push_back(load_repository(checkpoint_dir, tag));
        decision_ = load_decision(checkpoint_dir);
        PatchStats stats;
        stats.mean = read_miid((fs::path(checkpoint_dir) / "patch_mean.miid").string());
        stats.sdev = read_miid((fs::path(checkpoint_dir) / "patch_sdev.miid").string());
        patch_stats_ = std::move(stats);
        hybrid_trained_ = manifest.value("hybrid_trained", false);
    }
}

const detect::MemoryRepository& CategoryPipeline::repository(const std::string& tag) const {
    for (const auto& r : repos_)
        if (r.modality == tag) return r;
    throw std::runtime_error("pipeline: repository not built: " + tag);
}

std::pair<Tensor, Tensor> CategoryPipeline::encode(const data::Sample& raw) const {
    const data::Sample s = data::fill_pseudo(raw);
    const Tensor f_rgb = rgb_->encode(*s.rgb);

    const enc::PointSet ps = enc::extract_points(*s.pc);
    const auto& pcfg = point_->config();
    const int M = std::min(pcfg.num_groups, int(ps.size()));
    const auto centers = enc::farthest_point_sample(ps, M, Rng::mix(cfg_.seeds.model, Rng::hash("fps")));
    const enc::GroupSet gs = enc::group_knn(ps, centers, pcfg.group_size);
    const Tensor group_feats = point_->encode_groups(ps, gs);

    Tensor f_pc;
    if (cfg_.ablation.use_fe_extras) {
        // interpolate back onto every point, then pool per patch cell
        const Tensor per_point =
            enc::interpolate_features(ps, centers, group_feats, pcfg.epsilon, pcfg.literal_interp);
        f_pc = enc::project_to_grid(per_point, ps.origin, s.pc->h, s.pc->w, cfg_.model.patch);
    } else {
        // group tokens pooled straight from their center pixels
        std::vector<std::pair<int, int>> origins;
        origins.reserve(centers.size());
        for (int ci : centers) origins.push_back(ps.origin[size_t(ci)]);
        f_pc = enc::project_to_grid(group_feats, origins, s.pc->h, s.pc->w, cfg_.model.patch);
    }
    return {std::move(f_pc), f_rgb};
}

CategoryPipeline::Streams CategoryPipeline::streams_for(const data::Sample& s, bool apply_hybrid) const {
    const auto [f_pc, f_rgb] = encode(s);
    nn::Tape tape;
    Streams out;

    if (cfg_.ablation.use_aif) {
        // bank the projected tokens in the geometry the contrastive loss
        // optimizes: row-normalized directions
        const fusion::FusedStreams fs = fusion_->forward(tape, f_pc, f_rgb, s.mask);
        out.g_pc = tape.val(tape.l2_normalize_rows(fs.g_pc));
        out.g_rgb = tape.val(tape.l2_normalize_rows(fs.g_rgb));
        out.g_fs = tape.val(tape.l2_normalize_rows(fs.g_fs));
    } else {
        // frozen backbone only: repositories read the fused transformer
        // streams directly, fused feature is the plain concatenation
        const int a_pc = fusion_->adapter_pc(tape, f_pc);
        const int a_rgb = fusion_->adapter_rgb(tape, f_rgb);
        const auto [pc_hat, rgb_hat] = fusion_->fuse(tape, a_pc, a_rgb, fusion::select_instruction(s.mask));
        out.g_pc = tape.val(pc_hat);
        out.g_rgb = tape.val(rgb_hat);
        out.g_fs = tape.val(tape.concat_cols({pc_hat, rgb_hat}));
    }

    const int L = out.g_pc.rows();
    out.provenance.assign(size_t(2 * L), 0);
    for (int i = 0; i < L; ++i) {
        out.provenance[size_t(i)] = s.mask.has_pc ? 0 : 1;
        out.provenance[size_t(L + i)] = s.mask.has_rgb ? 0 : 1;
    }

    if (apply_hybrid && cfg_.ablation.use_rphd && hybrid_trained_) {
        Tensor tokens({2 * L, out.g_pc.cols()});
        std::copy(out.g_pc.v.begin(), out.g_pc.v.end(), tokens.v.begin());
        std::copy(out.g_rgb.v.begin(), out.g_rgb.v.end(), tokens.v.begin() + out.g_pc.v.size());
        const Tensor refined = hybrid_->refine(tokens, out.provenance);
        Tensor r_pc({L, out.g_pc.cols()}), r_rgb({L, out.g_pc.cols()});
        std::copy(refined.v.begin(), refined.v.begin() + r_pc.v.size(), r_pc.v.begin());
        std::copy(refined.v.begin() + r_pc.v.size(), refined.v.end(), r_rgb.v.begin());
        out.g_pc = std::move(r_pc);
        out.g_rgb = std::move(r_rgb);
        nn::Tape t2;
        const int cat = t2.concat_cols({t2.leaf(out.g_pc), t2.leaf(out.g_rgb)});
        if (cfg_.ablation.use_aif) {
            out.g_fs = t2.val(t2.linear(cat, t2.param(store_->at("gfs.w")), t2.param(store_->at("gfs.b"))));
        } else {
            out.g_fs = t2.val(cat);
        }
    }
    return out;
}

fusion::Stage1Result CategoryPipeline::run_stage1(const std::vector<data::Sample>& train) {
    std::vector<std::pair<Tensor, Tensor>> features;
    std::vector<data::ModalityMask> masks;
    features.reserve(train.size());
    for (const data::Sample& s : train) {
        features.push_back(encode(s));
        masks.push_back(s.mask);
    }
    fusion::Stage1Options opts;
    opts.epochs = cfg_.stage1.epochs;
    opts.batch = cfg_.stage1.batch;
    opts.lr_instructions = cfg_.stage1.lr_instructions;
    opts.lr_mlp = cfg_.stage1.lr_mlp;
    opts.weight_decay = cfg_.stage1.weight_decay;
    opts.seed = Rng::mix(cfg_.seeds.model, Rng::hash("stage1/" + category_));
    return fusion::train_stage1(*fusion_, features, masks, opts);
}

detect::Stage2Result CategoryPipeline::run_stage2(const std::vector<data::Sample>& train) {
    std::vector<detect::Stage2SampleInputs> inputs;
    inputs.reserve(train.size());
    for (const data::Sample& s : train) {
        const Streams st = streams_for(s, false);
        detect::Stage2SampleInputs in;
        in.id = s.id;
        const int L = st.g_pc.rows();
        in.tokens = Tensor({2 * L, st.g_pc.cols()});
        std::copy(st.g_pc.v.begin(), st.g_pc.v.end(), in.tokens.v.begin());
        std::copy(st.g_rgb.v.begin(), st.g_rgb.v.end(), in.tokens.v.begin() + st.g_pc.v.size());
        in.is_pseudo = st.provenance;
        in.presence = detect::presence_class(s.mask);
        in.reg_target = Tensor({1, st.g_fs.cols()});
        for (int r = 0; r < st.g_fs.rows(); ++r)
            for (int c = 0; c < st.g_fs.cols(); ++c) in.reg_target.at(0, c) += st.g_fs.at(r, c) / st.g_fs.rows();
        inputs.push_back(std::move(in));
    }
    detect::Stage2Options opts;
    opts.epochs = cfg_.stage2.epochs;
    opts.batch = cfg_.stage2.batch;
    opts.lr = cfg_.stage2.lr;
    opts.weight_decay = cfg_.stage2.weight_decay;
    opts.lambda_pseudo = cfg_.stage2.lambda_pseudo;
    opts.seed = Rng::mix(cfg_.seeds.model, Rng::hash("stage2/" + category_));
    detect::PseudoLabelStore store;
    auto res = detect::train_stage2(*hybrid_, inputs, store, opts);
    hybrid_trained_ = true;
    return res;
}

void CategoryPipeline::build_banks_and_decision(const std::vector<data::Sample>& train) {
    std::vector<Tensor> pc_tokens, rgb_tokens, fs_tokens;
    std::vector<int> ids;
    std::vector<uint8_t> has_pc, has_rgb, all;
    for (const data::Sample& s : train) {
        const Streams st = streams_for(s, true);
        pc_tokens.push_back(st.g_pc);
        rgb_tokens.push_back(st.g_rgb);
        fs_tokens.push_back(st.g_fs);
        ids.push_back(s.id);
        has_pc.push_back(s.mask.has_pc ? 1 : 0);
        has_rgb.push_back(s.mask.has_rgb ? 1 : 0);
        all.push_back(1);
    }
    repos_.clear();
    const double cf = cfg_.detect.coreset_fraction;
    const uint64_t cs = Rng::mix(cfg_.seeds.model, Rng::hash("coreset/" + category_));
    repos_.push_back(detect::build_repository(pc_tokens, ids, has_pc, "pc", cf, Rng::mix(cs, 0)));
    repos_.push_back(detect::build_repository(rgb_tokens, ids, has_rgb, "rgb", cf, Rng::mix(cs, 1)));
    repos_.push_back(detect::build_repository(fs_tokens, ids, all, "fs", cf, Rng::mix(cs, 2)));

    // training score vectors for the decision models
    const detect::PhiOptions po = phi_options(cfg_);
    std::vector<std::array<double, 3>> image_scores;
    std::vector<std::vector<std::array<double, 3>>> per_sample_maps;
    for (size_t i = 0; i < train.size(); ++i) {
        const Tensor* toks[3] = {&pc_tokens[i], &rgb_tokens[i], &fs_tokens[i]};
        std::array<double, 3> img{};
        std::array<std::vector<double>, 3> maps;
        for (int r = 0; r < 3; ++r) {
            // leave-one-out: a training sample's own tokens sit in the bank
            img[size_t(r)] = detect::score_phi(repos_[size_t(r)], *toks[r], po, train[i].id);
            maps[size_t(r)] = detect::score_psi(repos_[size_t(r)], *toks[r], train[i].id);
        }
        image_scores.push_back(img);
        std::vector<std::array<double, 3>> triples(maps[0].size());
        for (size_t p = 0; p < maps[0].size(); ++p) triples[p] = {maps[0][p], maps[1][p], maps[2][p]};
        per_sample_maps.push_back(std::move(triples));
    }

    // per-position channel statistics over the training maps
    const int positions = int(per_sample_maps.front().size());
    PatchStats stats;
    stats.mean = Tensor({positions, 3});
    stats.sdev = Tensor({positions, 3});
    for (const auto& sm : per_sample_maps)
        for (int p = 0; p < positions; ++p)
            for (int c = 0; c < 3; ++c) stats.mean.at(p, c) += sm[size_t(p)][size_t(c)] / double(train.size());
    for (const auto& sm : per_sample_maps)
        for (int p = 0; p < positions; ++p)
            for (int c = 0; c < 3; ++c) {
                const double d = sm[size_t(p)][size_t(c)] - stats.mean.at(p, c);
                stats.sdev.at(p, c) += d * d / double(train.size());
            }
    for (auto& v : stats.sdev.v) v = std::max(1e-9, std::sqrt(v));
    patch_stats_ = std::move(stats);

    std::vector<std::array<double, 3>> patch_vectors;
    for (const auto& sm : per_sample_maps)
        for (int p = 0; p < positions; ++p) patch_vectors.push_back(normalize_patch(sm[size_t(p)], p));

    detect::DecisionOptions dopts;
    dopts.mdm_reg_scale = cfg_.detect.mdm_reg_scale;
    dopts.ocsvm = ocsvm_options(cfg_);
    decision_ = detect::fit_decision(image_scores, patch_vectors, dopts);
}

std::array<double, 3> CategoryPipeline::normalize_patch(const std::array<double, 3>& v, int position) const {
    if (!patch_stats_) return v;
    std::array<double, 3> out{};
    for (int c = 0; c < 3; ++c)
        out[size_t(c)] = (v[size_t(c)] - patch_stats_->mean.at(position, c)) / patch_stats_->sdev.at(position, c);
    return out;
}

detect::AnomalyResult CategoryPipeline::evaluate(const data::Sample& s) const {
    if (!decision_ || repos_.size() != 3) throw std::runtime_error("pipeline: banks/decision not built");
    const Streams st = streams_for(s, true);
    const detect::PhiOptions po = phi_options(cfg_);
    detect::ScoreVector sv;
    const Tensor* toks[3] = {&st.g_pc, &st.g_rgb, &st.g_fs};
    std::array<std::vector<double>, 3> maps;
    for (int r = 0; r < 3; ++r) {
        sv.image_scores[size_t(r)] = detect::score_phi(repos_[size_t(r)], *toks[r], po);
        maps[size_t(r)] = detect::score_psi(repos_[size_t(r)], *toks[r]);
    }
    const int side = cfg_.dataset.size / cfg_.model.patch;
    sv.patch_rows = side;
    sv.patch_cols = side;
    sv.patch_maps.resize(maps[0].size());
    for (size_t p = 0; p < maps[0].size(); ++p)
        sv.patch_maps[p] = normalize_patch({maps[0][p], maps[1][p], maps[2][p]}, int(p));
    return detect::decide(*decision_, sv, cfg_.dataset.size, cfg_.dataset.size);
}

void CategoryPipeline::save(const std::string& dir, const json& extra) const {
    json ex = extra;
    ex["category"] = category_;
    ex["has_banks"] = repos_.size() == 3 && decision_.has_value();
    ex["hybrid_trained"] = hybrid_trained_;
    save_params(dir, *store_, cfg_.to_json(), ex);
    if (repos_.size() == 3 && decision_) {
        for (const auto& r : repos_) save_repository(dir, r);
        save_decision(dir, *decision_);
        write_miid((fs::path(dir) / "patch_mean.miid").string(), patch_stats_->mean);
        write_miid((fs::path(dir) / "patch_sdev.miid").string(), patch_stats_->sdev);
    }
}

// ---------------------------------------------------------------------------
// Experiment driver
// ---------------------------------------------------------------------------

int thread_budget() {
    const char* env = std::getenv("MIIAD_NUM_THREADS");
    if (!env) return 1;
    const int n = std::atoi(env);
    return n >= 1 ? n : 1;
}

void ResultTable::append_mean(const std::string& variant, const std::string& mode, double rate) {
    double p = 0, a = 0, i = 0;
    int n = 0;
    for (const ResultRow& r : rows)
        if (r.variant == variant && r.mode == mode && r.rate == rate && r.category != "mean") {
            p += r.p_auroc;
            a += r.aupro;
            i += r.i_auroc;
            ++n;
        }
    if (n == 0) return;
    rows.push_back({variant, mode, rate, "mean", p / n, a / n, i / n});
}

data::MiiadDataset build_benchmark_dataset(const ExperimentConfig& cfg) {
    data::SynthOptions opts;
    opts.anomaly_frac = cfg.dataset.anomaly_frac;
    opts.plane_removal = cfg.dataset.plane_removal;
    opts.plane_threshold = cfg.dataset.plane_threshold;
    opts.ransac_iterations = cfg.dataset.ransac_iterations;
    data::MiiadDataset ds = data::make_dataset(cfg.dataset.categories, cfg.dataset.n_train,
                                               cfg.dataset.n_test, cfg.dataset.size, cfg.seeds.data, opts);
    if (cfg.missing.rate > 0.0) {
        data::MissingSpec spec;
        spec.rate = cfg.missing.rate;
        spec.seed = cfg.seeds.data;
        spec.mode = cfg.missing.mode == "pc"    ? data::MissingMode::pc_missing
                    : cfg.missing.mode == "rgb" ? data::MissingMode::rgb_missing
                                                : data::MissingMode::both_missing;
        ds = data::apply_missing(ds, spec);
    }
    return ds;
}

namespace {

struct CategoryOutcome {
    std::unique_ptr<CategoryPipeline> pipeline;
    ResultRow row;
    fusion::Stage1Result s1;
    detect::Stage2Result s2;
};

CategoryOutcome run_category(const ExperimentConfig& cfg, const data::MiiadDataset& ds,
                             const std::string& category, const std::string& variant) {
    std::vector<data::Sample> train, test;
    for (const auto& s : ds.train)
        if (s.category == category) train.push_back(s);
    for (const auto& s : ds.test)
        if (s.category == category) test.push_back(s);
    if (train.empty() || test.empty())
        throw std::runtime_error("run_experiment: category has no samples: " + category);

    CategoryOutcome out;
    out.pipeline = std::make_unique<CategoryPipeline>(cfg, category);
    if (cfg.ablation.use_aif && cfg.stage1.epochs > 0) out.s1 = out.pipeline->run_stage1(train);
    if (cfg.ablation.use_rphd && cfg.stage2.epochs > 0) out.s2 = out.pipeline->run_stage2(train);
    out.pipeline->build_banks_and_decision(train);

    std::vector<double> scores;
    std::vector<int> labels;
    std::vector<Tensor> maps;
    std::vector<data::BinaryMap> masks;
    for (const auto& s : test) {
        const detect::AnomalyResult r = out.pipeline->evaluate(s);
        scores.push_back(r.sco_a);
        labels.push_back(s.gt.anomalous ? 1 : 0);
        maps.push_back(r.seg_pixel);
        masks.push_back(s.gt.anomaly_mask);
    }
    out.row.variant = variant;
    out.row.mode = cfg.missing.mode;
    out.row.rate = cfg.missing.rate;
    out.row.category = category;
    out.row.i_auroc = metrics::auroc(scores, labels);
    out.row.p_auroc = metrics::pixel_auroc(maps, masks);
    out.row.aupro = metrics::aupro(maps, masks, cfg.metrics.fpr_limit, cfg.metrics.eight_connectivity);
    return out;
}

}  // namespace

TrainedExperiment run_on_dataset(const ExperimentConfig& cfg, const data::MiiadDataset& ds,
                                 const std::string& variant) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto errs = cfg.validate();
    if (!errs.empty()) {
        std::string msg = "invalid config:";
        for (const auto& e : errs) msg += "\n  " + e;
        throw std::invalid_argument(msg);
    }

    TrainedExperiment exp;
    exp.cfg = cfg;
    exp.variant = variant;
    exp.ds = ds;

    const int budget = thread_budget();
    std::vector<CategoryOutcome> outcomes(cfg.dataset.categories.size());
    if (budget <= 1) {
        for (size_t i = 0; i < cfg.dataset.categories.size(); ++i)
            outcomes[i] = run_category(cfg, ds, cfg.dataset.categories[i], variant);
    } else {
        std::vector<std::future<CategoryOutcome>> futs;
        for (size_t i = 0; i < cfg.dataset.categories.size(); ++i) {
            futs.push_back(std::async(std::launch::async, [&, i] {
                return run_category(cfg, ds, cfg.dataset.categories[i], variant);
            }));
            if (int(futs.size()) == budget || i + 1 == cfg.dataset.categories.size()) {
                const size_t base = i + 1 - futs.size();
                for (size_t k = 0; k < futs.size(); ++k) outcomes[base + k] = futs[k].get();
                futs.clear();
            }
        }
    }

    for (size_t i = 0; i < outcomes.size(); ++i) {
        exp.table.rows.push_back(outcomes[i].row);
        exp.stage1[cfg.dataset.categories[i]] = std::move(outcomes[i].s1);
        exp.stage2[cfg.dataset.categories[i]] = std::move(outcomes[i].s2);
        exp.pipelines.push_back(std::move(outcomes[i].pipeline));
    }
    exp.table.append_mean(variant, cfg.missing.mode, cfg.missing.rate);
    exp.trainable = exp.pipelines.front()->trainable_count();
    exp.total = exp.pipelines.front()->total_count();
    exp.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return exp;
}

TrainedExperiment run_experiment_full(const ExperimentConfig& cfg, const std::string& variant) {
    return run_on_dataset(cfg, build_benchmark_dataset(cfg), variant);
}

ResultTable run_experiment(const ExperimentConfig& cfg, const std::string& variant) {
    return run_experiment_full(cfg, variant).table;
}

ResultTable run_ablation(const ExperimentConfig& cfg) {
    const data::MiiadDataset ds = build_benchmark_dataset(cfg);
    ResultTable table;
    const bool flags[2] = {false, true};
    for (bool fe : flags)
        for (bool aif : flags)
            for (bool rphd : flags) {
                ExperimentConfig c = cfg;
                c.ablation.use_fe_extras = fe;
                c.ablation.use_aif = aif;
                c.ablation.use_rphd = rphd;
                std::string name;
                if (!fe && !aif && !rphd) {
                    name = "baseline";
                } else if (fe && aif && rphd) {
                    name = "full";
                } else {
                    name = "+";
                    if (fe) name += "FE";
                    if (aif) name += std::string(name.size() > 1 ? "&" : "") + "AIF";
                    if (rphd) name += std::string(name.size() > 1 ? "&" : "") + "RPHD";
                }
                TrainedExperiment exp = run_on_dataset(c, ds, name);
                for (auto& r : exp.table.rows) table.rows.push_back(std::move(r));
            }
    return table;
}

PairCheckResult fixture_pair_check(const TrainedExperiment& exp, int n_pairs) {
    PairCheckResult res;
    const auto& cfg = exp.cfg;
    const data::DefectKind kinds[] = {data::DefectKind::bump, data::DefectKind::dent,
                                      data::DefectKind::color_blotch, data::DefectKind::hole};
    const int n_cat = int(cfg.dataset.categories.size());
    const int patch = cfg.model.patch;
    for (int i = 0; i < n_pairs; ++i) {
        const std::string cat = cfg.dataset.categories[size_t(i % n_cat)];
        const CategoryPipeline* pipe = nullptr;
        for (const auto& p : exp.pipelines)
            if (p->category() == cat) pipe = p.get();
        if (!pipe) continue;

        const uint64_t seed = Rng::mix(cfg.seeds.metric, Rng::mix(Rng::hash("fixture"), uint64_t(i)));
        data::Sample normal = data::synth_normal(cat, cfg.dataset.size, seed);
        data::Sample anomalous = data::synth_anomaly(normal, kinds[i % 4], Rng::mix(seed, 17));
        normal.id = 1000000 + 2 * i;
        anomalous.id = 1000000 + 2 * i + 1;
        if (cfg.dataset.plane_removal) {
            normal.pc = data::remove_background_plane(*normal.pc, cfg.dataset.plane_threshold,
                                                      cfg.dataset.ransac_iterations, Rng::mix(seed, 3));
            anomalous.pc = data::remove_background_plane(*anomalous.pc, cfg.dataset.plane_threshold,
                                                         cfg.dataset.ransac_iterations, Rng::mix(seed, 3));
        }

        const detect::AnomalyResult rn = pipe->evaluate(normal);
        const detect::AnomalyResult ra = pipe->evaluate(anomalous);
        ++res.pairs;
        if (ra.sco_a > rn.sco_a) ++res.score_wins;

        // argmax patch against the 1-patch-dilated ground truth
        const Tensor& seg = ra.seg_patch;
        int best = 0;
        for (int p = 1; p < int(seg.v.size()); ++p)
            if (seg.v[size_t(p)] > seg.v[size_t(best)]) best = p;
        const int pr = best / seg.shape[1], pcn = best % seg.shape[1];
        bool hit = false;
        const auto& mask = anomalous.gt.anomaly_mask;
        for (int r = 0; r < mask.h && !hit; ++r)
            for (int c = 0; c < mask.w && !hit; ++c) {
                if (!mask.at(r, c)) continue;
                const int mr = r / patch, mc = c / patch;
                if (std::abs(mr - pr) <= 1 && std::abs(mc - pcn) <= 1) hit = true;
            }
        if (hit) ++res.argmax_hits;
    }
    return res;
}

// ---------------------------------------------------------------------------
// Reporting
// ---------------------------------------------------------------------------

namespace {

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.4f", v);
    return buf;
}

}  // namespace

void emit_report(const std::vector<ResultTable>& tables, const ExperimentConfig& cfg,
                 const ReportOptions& opts) {
    if (tables.empty()) throw std::invalid_argument("emit_report: no tables");
    fs::create_directories(opts.out_dir);

    std::ofstream csv(fs::path(opts.out_dir) / "results.csv");
    if (!csv) throw std::runtime_error("emit_report: cannot write to " + opts.out_dir);
    csv << "variant,mode,rate,category,p_auroc,aupro,i_auroc\n";
    for (const auto& t : tables)
        for (const auto& r : t.rows)
            csv << r.variant << "," << r.mode << "," << r.rate << "," << r.category << "," << fmt(r.p_auroc)
                << "," << fmt(r.aupro) << "," << fmt(r.i_auroc) << "\n";

    std::ofstream md(fs::path(opts.out_dir) / "results.md");
    md << "# Benchmark results\n\n";
    md << "| variant | mode | rate | category | P-AUROC | AUPRO | I-AUROC |\n";
    md << "|---|---|---|---|---|---|---|\n";
    for (const auto& t : tables)
        for (const auto& r : t.rows)
            md << "| " << r.variant << " | " << r.mode << " | " << r.rate << " | " << r.category << " | "
               << fmt(r.p_auroc) << " | " << fmt(r.aupro) << " | " << fmt(r.i_auroc) << " |\n";

    json manifest;
    manifest["config"] = cfg.to_json();
    manifest["config_hash"] = cfg.hash();
    manifest["seeds"] = {{"data", cfg.seeds.data}, {"model", cfg.seeds.model}, {"metric", cfg.seeds.metric}};
    manifest["wall_seconds"] = opts.wall_seconds;
    manifest["params"] = {{"trainable", opts.trainable},
                          {"total", opts.total},
                          {"ratio", opts.total > 0 ? double(opts.trainable) / double(opts.total) : 0.0}};
    std::ofstream(fs::path(opts.out_dir) / "manifest.json") << manifest.dump(2) << "\n";
}

}  // namespace miiad::harness
