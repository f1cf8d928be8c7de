#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "miiad/checkpoint.hpp"
#include "miiad/config.hpp"
#include "miiad/harness.hpp"
#include "miiad/miid_io.hpp"
#include "miiad/rng.hpp"

using namespace miiad;
using namespace miiad::harness;
namespace fs = std::filesystem;

namespace {

// minutes-scale settings for pipeline-level tests
ExperimentConfig tiny_config() {
    ExperimentConfig cfg;
    cfg.dataset.categories = {"dome"};
    cfg.dataset.n_train = 10;
    cfg.dataset.n_test = 6;
    cfg.dataset.size = 16;
    cfg.missing.rate = 0.5;
    cfg.model.patch = 8;
    cfg.model.rgb_depth = 2;
    cfg.model.rgb_taps = {1};
    cfg.model.pc_groups = 8;
    cfg.model.pc_group_size = 8;
    cfg.model.fusion_depth = 2;
    cfg.model.instr_len = 4;
    cfg.model.instr_start = 0;
    cfg.model.instr_end = 1;
    cfg.stage1.epochs = 2;
    cfg.stage1.batch = 8;
    cfg.stage2.epochs = 2;
    cfg.stage2.batch = 8;
    cfg.detect.ocsvm.epochs = 3;
    cfg.detect.ocsvm.subsample_cap = 128;
    return cfg;
}

fs::path temp_dir(const std::string& tag) {
    const fs::path p = fs::temp_directory_path() / ("miiad_harness_" + tag);
    fs::remove_all(p);
    return p;
}

}  // namespace

TEST_CASE("miid tensor files round-trip") {
    Rng rng(101);
    Tensor t({3, 5, 2});
    for (auto& v : t.v) v = rng.normal();
    const fs::path p = temp_dir("miid") / "x.miid";
    fs::create_directories(p.parent_path());
    write_miid(p.string(), t);
    const Tensor back = read_miid(p.string());
    CHECK(back.shape == t.shape);
    for (size_t i = 0; i < t.v.size(); ++i) CHECK(back.v[i] == doctest::Approx(t.v[i]).epsilon(1e-6));
    // float32 payload: a second round-trip is bitwise stable
    write_miid(p.string(), back);
    const Tensor again = read_miid(p.string());
    CHECK(again.v == back.v);
    CHECK_THROWS(read_miid((p.parent_path() / "missing.miid").string()));
    fs::remove_all(p.parent_path());
}

TEST_CASE("config round-trips losslessly and validates with field paths") {
    ExperimentConfig cfg = tiny_config();
    cfg.detect.eta = "constant:1.0";
    const auto j = cfg.to_json();
    const ExperimentConfig back = ExperimentConfig::from_json(j);
    CHECK(back.to_json().dump() == j.dump());
    CHECK(cfg.validate().empty());
    CHECK(cfg.hash() == back.hash());

    ExperimentConfig bad = cfg;
    bad.missing.rate = 1.5;
    bad.model.patch = 7;
    const auto errs = bad.validate();
    REQUIRE(errs.size() >= 2);
    bool saw_rate = false, saw_patch = false;
    for (const auto& e : errs) {
        saw_rate = saw_rate || e.rfind("missing.rate", 0) == 0;
        saw_patch = saw_patch || e.rfind("model.patch", 0) == 0;
    }
    CHECK(saw_rate);
    CHECK(saw_patch);

    ExperimentConfig other = cfg;
    other.seeds.data += 1;
    CHECK(other.hash() != cfg.hash());
}

TEST_CASE("checkpoint save/load restores every parameter") {
    const ExperimentConfig cfg = tiny_config();
    CategoryPipeline pipe(cfg, "dome");
    const fs::path dir = temp_dir("ckpt");
    pipe.save(dir.string());

    nn::ParamStore restored;
    const auto manifest = load_params(dir.string(), restored);
    CHECK(manifest.at("counts").at("trainable").get<long long>() == pipe.trainable_count());
    CHECK(manifest.at("counts").at("total").get<long long>() == pipe.total_count());
    for (nn::Param* p : restored.all()) {
        const nn::Param& orig = pipe.store().at(p->name);
        CHECK(p->trainable == orig.trainable);
        REQUIRE(p->value.shape == orig.value.shape);
        for (size_t i = 0; i < p->value.v.size(); ++i)
            CHECK(p->value.v[i] == doctest::Approx(orig.value.v[i]).epsilon(1e-6));
    }
    fs::remove_all(dir);
}

TEST_CASE("trained pipeline evaluates deterministically and survives a checkpoint cycle") {
    const ExperimentConfig cfg = tiny_config();
    const auto ds = build_benchmark_dataset(cfg);
    std::vector<data::Sample> train, test;
    for (const auto& s : ds.train)
        if (s.category == "dome") train.push_back(s);
    for (const auto& s : ds.test)
        if (s.category == "dome") test.push_back(s);

    CategoryPipeline pipe(cfg, "dome");
    pipe.run_stage1(train);
    pipe.run_stage2(train);
    pipe.build_banks_and_decision(train);

    const auto r1 = pipe.evaluate(test[0]);
    const auto r2 = pipe.evaluate(test[0]);
    CHECK(r1.sco_a == r2.sco_a);
    CHECK(r1.seg_pixel.v == r2.seg_pixel.v);

    const fs::path dir = temp_dir("cycle");
    pipe.save(dir.string());
    CategoryPipeline loaded(cfg, "dome", dir.string());
    const auto r3 = loaded.evaluate(test[0]);
    // float32 storage rounds the parameters, scores stay close
    CHECK(r3.sco_a == doctest::Approx(r1.sco_a).epsilon(1e-3));
    fs::remove_all(dir);
}

TEST_CASE("seed isolation: metric seed never touches training, model init ignores data seed") {
    ExperimentConfig cfg = tiny_config();
    cfg.stage1.epochs = 1;
    cfg.stage2.epochs = 1;

    ExperimentConfig metric_changed = cfg;
    metric_changed.seeds.metric += 1234;
    const auto t1 = run_experiment(cfg, "a");
    const auto t2 = run_experiment(metric_changed, "a");
    REQUIRE(t1.rows.size() == t2.rows.size());
    for (size_t i = 0; i < t1.rows.size(); ++i) {
        CHECK(t1.rows[i].p_auroc == t2.rows[i].p_auroc);
        CHECK(t1.rows[i].aupro == t2.rows[i].aupro);
        CHECK(t1.rows[i].i_auroc == t2.rows[i].i_auroc);
    }

    // identical config twice: identical tables
    const auto t3 = run_experiment(cfg, "a");
    for (size_t i = 0; i < t1.rows.size(); ++i) CHECK(t1.rows[i].p_auroc == t3.rows[i].p_auroc);

    // data seed changes the data but not the parameter initialization
    ExperimentConfig data_changed = cfg;
    data_changed.seeds.data += 1;
    CategoryPipeline p1(cfg, "dome");
    CategoryPipeline p2(data_changed, "dome");
    for (nn::Param* p : p1.store().all()) CHECK(p->value.v == p2.store().at(p->name).value.v);
    const auto da = build_benchmark_dataset(cfg);
    const auto db = build_benchmark_dataset(data_changed);
    CHECK(da.train[0].rgb->pixels.v != db.train[0].rgb->pixels.v);
}

TEST_CASE("result tables carry a mean row equal to the category average") {
    ResultTable t;
    t.rows.push_back({"v", "pc", 0.5, "a", 0.8, 0.4, 0.9});
    t.rows.push_back({"v", "pc", 0.5, "b", 0.6, 0.2, 0.7});
    t.append_mean("v", "pc", 0.5);
    REQUIRE(t.rows.size() == 3);
    CHECK(t.rows[2].category == "mean");
    CHECK(t.rows[2].p_auroc == doctest::Approx(0.7));
    CHECK(t.rows[2].aupro == doctest::Approx(0.3));
    CHECK(t.rows[2].i_auroc == doctest::Approx(0.8));
}

TEST_CASE("emit_report writes consistent CSV and Markdown plus a manifest") {
    ResultTable t;
    t.rows.push_back({"radar", "pc", 0.7, "dome", 0.8123, 0.4567, 0.9012});
    t.rows.push_back({"radar", "pc", 0.7, "mean", 0.8123, 0.4567, 0.9012});
    const ExperimentConfig cfg = tiny_config();
    const fs::path dir = temp_dir("report");

    ReportOptions opts;
    opts.out_dir = dir.string();
    opts.trainable = 123;
    opts.total = 4567;
    opts.wall_seconds = 1.5;
    emit_report({t}, cfg, opts);

    std::ifstream csv(dir / "results.csv");
    REQUIRE(csv.good());
    std::string line;
    std::getline(csv, line);
    CHECK(line == "variant,mode,rate,category,p_auroc,aupro,i_auroc");
    std::getline(csv, line);
    CHECK(line.find("0.8123") != std::string::npos);

    std::ifstream md(dir / "results.md");
    REQUIRE(md.good());
    std::string all((std::istreambuf_iterator<char>(md)), std::istreambuf_iterator<char>());
    CHECK(all.find("0.8123") != std::string::npos);  // same numbers in both renderings
    CHECK(all.find("0.4567") != std::string::npos);

    nlohmann::json manifest;
    std::ifstream(dir / "manifest.json") >> manifest;
    CHECK(manifest.at("config_hash").get<uint64_t>() == cfg.hash());
    CHECK(manifest.at("params").at("trainable").get<long long>() == 123);
    CHECK(manifest.at("params").at("ratio").get<double>() == doctest::Approx(123.0 / 4567.0));

    CHECK_THROWS_AS(emit_report({}, cfg, opts), std::invalid_argument);
    fs::remove_all(dir);
}

TEST_CASE("every ablation flag combination runs to completion") {
    ExperimentConfig cfg = tiny_config();
    cfg.dataset.n_train = 8;
    cfg.dataset.n_test = 4;
    cfg.stage1.epochs = 1;
    cfg.stage2.epochs = 1;
    const ResultTable t = run_ablation(cfg);
    // 8 variants x (1 category + mean row)
    CHECK(t.rows.size() == 16);
    int meanrows = 0;
    for (const auto& r : t.rows) {
        CHECK(r.p_auroc >= 0.0);
        CHECK(r.p_auroc <= 1.0);
        if (r.category == "mean") ++meanrows;
    }
    CHECK(meanrows == 8);
}
