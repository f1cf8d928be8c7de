#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "miiad/config.hpp"
#include "miiad/data.hpp"
#include "miiad/detection.hpp"
#include "miiad/fusion.hpp"
#include "miiad/metrics.hpp"
#include "miiad/point_encoder.hpp"
#include "miiad/rgb_encoder.hpp"

namespace miiad::harness {

// One category's trained stack: frozen encoders + fusion backbone,
// instruction/hypernetwork weights, hybrid layer, memory banks, and the
// decision models. Heap-allocate; the models hold references into the store.
class CategoryPipeline {
public:
    CategoryPipeline(const ExperimentConfig& cfg, const std::string& category);  // fresh parameters
    CategoryPipeline(const ExperimentConfig& cfg, const std::string& category,
                     const std::string& checkpoint_dir);  // load

    // frozen feature extraction; absent modalities are ones-filled first
    std::pair<Tensor, Tensor> encode(const data::Sample& s) const;

    fusion::Stage1Result run_stage1(const std::vector<data::Sample>& train);
    detect::Stage2Result run_stage2(const std::vector<data::Sample>& train);
    void build_banks_and_decision(const std::vector<data::Sample>& train);

    detect::AnomalyResult evaluate(const data::Sample& s) const;

    void save(const std::string& dir, const nlohmann::json& extra = nlohmann::json::object()) const;

    long long trainable_count() const { return store_->trainable_count(); }
    long long total_count() const { return store_->total_count(); }

    const std::string& category() const { return category_; }
    nn::ParamStore& store() { return *store_; }
    const detect::MemoryRepository& repository(const std::string& tag) const;

    // per-sample fused streams after stage 1 (and stage 2 when enabled)
    struct Streams {
        Tensor g_pc, g_rgb, g_fs;        // (L x width)
        std::vector<uint8_t> provenance; // 2L flags, pc rows then rgb rows
    };
    Streams streams_for(const data::Sample& s, bool apply_hybrid) const;

    // per-position channel statistics of the training psi maps; cancels
    // coverage imbalance between cells before the segmentation decision
    struct PatchStats {
        Tensor mean;  // (positions x 3)
        Tensor sdev;  // (positions x 3)
    };

    int stream_width() const;
    int fused_width() const;

private:
    void build_models(bool fresh);
    std::array<double, 3> normalize_patch(const std::array<double, 3>& v, int position) const;

    ExperimentConfig cfg_;
    std::string category_;
    std::unique_ptr<nn::ParamStore> store_;
    std::unique_ptr<enc::RgbEncoder> rgb_;
    std::unique_ptr<enc::PointEncoder> point_;
    std::unique_ptr<fusion::FusionModel> fusion_;
    std::unique_ptr<detect::HybridModel> hybrid_;

    std::vector<detect::MemoryRepository> repos_;  // pc, rgb, fs
    std::optional<detect::DecisionModels> decision_;
    std::optional<PatchStats> patch_stats_;
    bool hybrid_trained_ = false;
};

struct ResultRow {
    std::string variant;
    std::string mode;
    double rate = 0.0;
    std::string category;  // "mean" for the aggregate row
    double p_auroc = 0.0;
    double aupro = 0.0;
    double i_auroc = 0.0;
};

struct ResultTable {
    std::vector<ResultRow> rows;

    void append_mean(const std::string& variant, const std::string& mode, double rate);
};

struct TrainedExperiment {
    ExperimentConfig cfg;
    std::string variant;
    data::MiiadDataset ds;
    std::vector<std::unique_ptr<CategoryPipeline>> pipelines;
    ResultTable table;
    std::map<std::string, fusion::Stage1Result> stage1;
    std::map<std::string, detect::Stage2Result> stage2;
    long long trainable = 0, total = 0;
    double wall_seconds = 0.0;
};

data::MiiadDataset build_benchmark_dataset(const ExperimentConfig& cfg);

// Full pipeline on an already-built dataset (shared across ablation variants).
TrainedExperiment run_on_dataset(const ExperimentConfig& cfg, const data::MiiadDataset& ds,
                                 const std::string& variant);

TrainedExperiment run_experiment_full(const ExperimentConfig& cfg, const std::string& variant = "radar");
ResultTable run_experiment(const ExperimentConfig& cfg, const std::string& variant = "radar");

// All 8 {FE, AIF, RPHD} flag combinations over one shared dataset.
ResultTable run_ablation(const ExperimentConfig& cfg);

struct PairCheckResult {
    int pairs = 0;
    int score_wins = 0;    // anomalous sco_a strictly above its normal base
    int argmax_hits = 0;   // seg argmax inside the 1-patch-dilated gt mask
};

// Normal/defective fixture pairs evaluated through already-trained pipelines.
PairCheckResult fixture_pair_check(const TrainedExperiment& exp, int n_pairs);

struct ReportOptions {
    std::string out_dir;
    double wall_seconds = 0.0;
    long long trainable = 0, total = 0;
};

// CSV + Markdown renderings plus a machine-readable run manifest.
void emit_report(const std::vector<ResultTable>& tables, const ExperimentConfig& cfg,
                 const ReportOptions& opts);

int thread_budget();  // MIIAD_NUM_THREADS, default 1

}  // namespace miiad::harness
