// miiad — synthetic modality-incomplete anomaly detection benchmark driver.
// Subcommands: synth, missing, train-stage1, train-stage2, eval, ablate, bench.
// Exit codes: 0 success, 2 config error, 3 runtime failure.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "miiad/checkpoint.hpp"
#include "miiad/config.hpp"
#include "miiad/data.hpp"
#include "miiad/harness.hpp"
#include "miiad/metrics.hpp"
#include "miiad/miid_io.hpp"

namespace fs = std::filesystem;
using namespace miiad;
using harness::ExperimentConfig;
using nlohmann::json;

namespace {

std::vector<std::string> split_csv(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == ',') {
            if (!cur.empty()) out.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
}

ExperimentConfig load_config_or_default(const std::string& path) {
    if (path.empty()) return ExperimentConfig{};
    return ExperimentConfig::load(path);
}

int check_config(const ExperimentConfig& cfg) {
    const auto errs = cfg.validate();
    if (errs.empty()) return 0;
    std::cerr << "config errors:\n";
    for (const auto& e : errs) std::cerr << "  " << e << "\n";
    return 2;
}

std::vector<data::Sample> category_split(const std::vector<data::Sample>& all, const std::string& cat) {
    std::vector<data::Sample> out;
    for (const auto& s : all)
        if (s.category == cat) out.push_back(s);
    return out;
}

int cmd_synth(const std::string& categories, int n_train, int n_test, int size, uint64_t seed,
              const std::string& out, double anomaly_frac, bool no_plane_removal) {
    data::SynthOptions opts;
    opts.anomaly_frac = anomaly_frac;
    opts.plane_removal = !no_plane_removal;
    const auto ds = data::make_dataset(split_csv(categories), n_train, n_test, size, seed, opts);
    data::save_dataset(ds, out);
    std::cout << "wrote " << ds.train.size() << " train / " << ds.test.size() << " test samples to " << out
              << "\n";
    return 0;
}

int cmd_missing(const std::string& mode, double rate, uint64_t seed, const std::string& in,
                const std::string& out) {
    data::MissingSpec spec;
    spec.rate = rate;
    spec.seed = seed;
    if (mode == "pc")
        spec.mode = data::MissingMode::pc_missing;
    else if (mode == "rgb")
        spec.mode = data::MissingMode::rgb_missing;
    else if (mode == "both")
        spec.mode = data::MissingMode::both_missing;
    else {
        std::cerr << "missing.mode: must be pc|rgb|both\n";
        return 2;
    }
    const auto ds = data::load_dataset(in);
    data::save_dataset(data::apply_missing(ds, spec), out);
    std::cout << "wrote modality-incomplete dataset to " << out << "\n";
    return 0;
}

int cmd_train_stage1(const std::string& data_dir, const std::string& cfg_path, const std::string& out) {
    ExperimentConfig cfg = load_config_or_default(cfg_path);
    if (int rc = check_config(cfg)) return rc;
    const auto ds = data::load_dataset(data_dir);
    for (const auto& cat : ds.categories) {
        harness::CategoryPipeline pipe(cfg, cat);
        const auto train = category_split(ds.train, cat);
        if (train.empty()) {
            std::cerr << "no train samples for category " << cat << "\n";
            return 3;
        }
        json extra;
        if (cfg.ablation.use_aif && cfg.stage1.epochs > 0) {
            const auto s1 = pipe.run_stage1(train);
            extra["stage1_loss"] = s1.epoch_loss;
        }
        pipe.save((fs::path(out) / cat).string(), extra);
        std::cout << "stage-1 checkpoint: " << (fs::path(out) / cat).string() << "\n";
    }
    return 0;
}

int cmd_train_stage2(const std::string& data_dir, const std::string& ckpt, const std::string& out) {
    const auto ds = data::load_dataset(data_dir);
    for (const auto& cat : ds.categories) {
        const std::string in_dir = (fs::path(ckpt) / cat).string();
        std::ifstream mf(fs::path(in_dir) / "manifest.json");
        if (!mf) {
            std::cerr << "missing checkpoint for category " << cat << " under " << ckpt << "\n";
            return 3;
        }
        json manifest;
        mf >> manifest;
        ExperimentConfig cfg = ExperimentConfig::from_json(manifest.at("config"));
        if (int rc = check_config(cfg)) return rc;
        harness::CategoryPipeline pipe(cfg, cat, in_dir);
        const auto train = category_split(ds.train, cat);
        json extra;
        if (cfg.ablation.use_rphd && cfg.stage2.epochs > 0) {
            const auto s2 = pipe.run_stage2(train);
            extra["stage2_loss"] = s2.epoch_loss;
        }
        pipe.build_banks_and_decision(train);
        pipe.save((fs::path(out) / cat).string(), extra);
        std::cout << "stage-2 checkpoint: " << (fs::path(out) / cat).string() << "\n";
    }
    return 0;
}

int cmd_eval(const std::string& ckpt, const std::string& data_dir, const std::string& out) {
    const auto ds = data::load_dataset(data_dir);
    fs::create_directories(out);
    std::ofstream csv(fs::path(out) / "scores.csv");
    csv << "id,category,label,sco_a\n";

    harness::ResultTable table;
    std::string mode = "?";
    double rate = 0.0;
    for (const auto& cat : ds.categories) {
        const std::string dir = (fs::path(ckpt) / cat).string();
        std::ifstream mf(fs::path(dir) / "manifest.json");
        if (!mf) {
            std::cerr << "missing checkpoint for category " << cat << "\n";
            return 3;
        }
        json manifest;
        mf >> manifest;
        ExperimentConfig cfg = ExperimentConfig::from_json(manifest.at("config"));
        mode = cfg.missing.mode;
        rate = cfg.missing.rate;
        harness::CategoryPipeline pipe(cfg, cat, dir);

        std::vector<double> scores;
        std::vector<int> labels;
        std::vector<Tensor> maps;
        std::vector<data::BinaryMap> masks;
        for (const auto& s : category_split(ds.test, cat)) {
            const auto r = pipe.evaluate(s);
            csv << s.id << "," << cat << "," << (s.gt.anomalous ? 1 : 0) << "," << r.sco_a << "\n";
            write_miid((fs::path(out) / ("seg_" + std::to_string(s.id) + ".miid")).string(), r.seg_pixel);
            scores.push_back(r.sco_a);
            labels.push_back(s.gt.anomalous ? 1 : 0);
            maps.push_back(r.seg_pixel);
            masks.push_back(s.gt.anomaly_mask);
        }
        harness::ResultRow row;
        row.variant = "eval";
        row.mode = mode;
        row.rate = rate;
        row.category = cat;
        row.i_auroc = metrics::auroc(scores, labels);
        row.p_auroc = metrics::pixel_auroc(maps, masks);
        row.aupro = metrics::aupro(maps, masks, cfg.metrics.fpr_limit, cfg.metrics.eight_connectivity);
        table.rows.push_back(row);
        std::cout << cat << ": P-AUROC " << row.p_auroc << "  AUPRO " << row.aupro << "  I-AUROC "
                  << row.i_auroc << "\n";
    }
    table.append_mean("eval", mode, rate);

    json summary;
    for (const auto& r : table.rows)
        summary[r.category] = {{"p_auroc", r.p_auroc}, {"aupro", r.aupro}, {"i_auroc", r.i_auroc}};
    std::ofstream(fs::path(out) / "summary.json") << summary.dump(2) << "\n";
    return 0;
}

int cmd_ablate(const std::string& cfg_path, const std::string& out, int n_seeds) {
    ExperimentConfig cfg = load_config_or_default(cfg_path);
    if (int rc = check_config(cfg)) return rc;
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<harness::ResultTable> tables;
    for (int k = 0; k < n_seeds; ++k) {
        ExperimentConfig c = cfg;
        c.seeds.data += uint64_t(k);
        c.seeds.model += uint64_t(k);
        tables.push_back(harness::run_ablation(c));
    }
    long long trainable = 0, total = 0;
    {
        harness::CategoryPipeline probe(cfg, cfg.dataset.categories.front());
        trainable = probe.trainable_count();
        total = probe.total_count();
    }
    harness::ReportOptions ropts;
    ropts.out_dir = out;
    ropts.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    ropts.trainable = trainable;
    ropts.total = total;
    harness::emit_report(tables, cfg, ropts);
    std::cout << "ablation report written to " << out << "\n";
    return 0;
}

int cmd_bench(const std::string& cfg_path, const std::string& rates_csv, int n_seeds,
              const std::string& out) {
    ExperimentConfig cfg = load_config_or_default(cfg_path);
    if (int rc = check_config(cfg)) return rc;
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<harness::ResultTable> tables;
    long long trainable = 0, total = 0;
    for (const auto& rs : split_csv(rates_csv)) {
        const double rate = std::stod(rs);
        for (int k = 0; k < n_seeds; ++k) {
            ExperimentConfig c = cfg;
            c.missing.rate = rate;
            c.seeds.data += uint64_t(k);
            c.seeds.model += uint64_t(k);
            const auto exp = harness::run_experiment_full(c, "radar");
            trainable = exp.trainable;
            total = exp.total;
            tables.push_back(exp.table);
        }
    }
    harness::ReportOptions ropts;
    ropts.out_dir = out;
    ropts.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    ropts.trainable = trainable;
    ropts.total = total;
    harness::emit_report(tables, cfg, ropts);
    std::cout << "benchmark report written to " << out << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"modality-incomplete industrial anomaly detection benchmark"};
    app.require_subcommand(1);

    auto* synth = app.add_subcommand("synth", "generate a synthetic multimodal dataset");
    std::string categories = "dome,disk,slab", out_dir = "dataset";
    int n_train = 60, n_test = 40, size = 32;
    uint64_t seed = 7;
    double anomaly_frac = 0.5;
    bool no_plane_removal = false;
    synth->add_option("--categories", categories, "comma-separated category list");
    synth->add_option("--n-train", n_train, "normal training samples per category");
    synth->add_option("--n-test", n_test, "test samples per category");
    synth->add_option("--size", size, "grid resolution");
    synth->add_option("--seed", seed, "data seed");
    synth->add_option("--out", out_dir, "output directory")->required();
    synth->add_option("--anomaly-frac", anomaly_frac, "fraction of defective test samples");
    synth->add_flag("--no-plane-removal", no_plane_removal, "skip RANSAC background removal");

    auto* missing = app.add_subcommand("missing", "restructure a dataset into a modality-incomplete one");
    std::string m_mode = "pc", m_in, m_out;
    double m_rate = 0.7;
    uint64_t m_seed = 7;
    missing->add_option("--mode", m_mode, "pc|rgb|both");
    missing->add_option("--rate", m_rate, "missing rate in [0,1]");
    missing->add_option("--seed", m_seed, "sampler seed");
    missing->add_option("input", m_in, "input dataset dir")->required();
    missing->add_option("output", m_out, "output dataset dir")->required();

    auto* ts1 = app.add_subcommand("train-stage1", "train instruction fusion on a dataset");
    std::string t1_data, t1_cfg, t1_out = "ckpt";
    ts1->add_option("--data", t1_data, "dataset dir")->required();
    ts1->add_option("--config", t1_cfg, "experiment config json");
    ts1->add_option("--out", t1_out, "checkpoint dir")->required();

    auto* ts2 = app.add_subcommand("train-stage2", "train hybrid detection and build repositories");
    std::string t2_data, t2_ckpt, t2_out = "ckpt2";
    ts2->add_option("--data", t2_data, "dataset dir")->required();
    ts2->add_option("--ckpt", t2_ckpt, "stage-1 checkpoint dir")->required();
    ts2->add_option("--out", t2_out, "checkpoint dir")->required();

    auto* ev = app.add_subcommand("eval", "score a test split against a trained checkpoint");
    std::string e_ckpt, e_data, e_out = "results";
    ev->add_option("--ckpt", e_ckpt, "stage-2 checkpoint dir")->required();
    ev->add_option("--data", e_data, "dataset dir")->required();
    ev->add_option("--out", e_out, "results dir")->required();

    auto* ab = app.add_subcommand("ablate", "run the 8 module-flag combinations");
    std::string a_cfg, a_out = "ablation";
    int a_seeds = 1;
    ab->add_option("--config", a_cfg, "experiment config json");
    ab->add_option("--out", a_out, "report dir")->required();
    ab->add_option("--seeds", a_seeds, "number of incremented seeds");

    auto* be = app.add_subcommand("bench", "missing-rate sweep of the full model");
    std::string b_cfg, b_rates = "0.3,0.5,0.7", b_out = "bench";
    int b_seeds = 1;
    be->add_option("--config", b_cfg, "experiment config json");
    be->add_option("--rates", b_rates, "comma-separated missing rates");
    be->add_option("--seeds", b_seeds, "number of incremented seeds");
    be->add_option("--out", b_out, "report dir")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (synth->parsed())
            return cmd_synth(categories, n_train, n_test, size, seed, out_dir, anomaly_frac,
                             no_plane_removal);
        if (missing->parsed()) return cmd_missing(m_mode, m_rate, m_seed, m_in, m_out);
        if (ts1->parsed()) return cmd_train_stage1(t1_data, t1_cfg, t1_out);
        if (ts2->parsed()) return cmd_train_stage2(t2_data, t2_ckpt, t2_out);
        if (ev->parsed()) return cmd_eval(e_ckpt, e_data, e_out);
        if (ab->parsed()) return cmd_ablate(a_cfg, a_out, a_seeds);
        if (be->parsed()) return cmd_bench(b_cfg, b_rates, b_seeds, b_out);
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
    return 0;
}
