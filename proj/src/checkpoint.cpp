#include "miiad/checkpoint.hpp"

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>

#include "miiad/miid_io.hpp"

namespace miiad::harness {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string param_file(int index) {
    std::ostringstream os;
    os << "p" << std::setw(4) << std::setfill('0') << index << ".miid";
    return os.str();
}

}  // namespace

void save_params(const std::string& dir, nn::ParamStore& store, const json& config, const json& extra) {
    fs::create_directories(fs::path(dir) / "params");
    json manifest;
    manifest["config"] = config;
    manifest["counts"] = {{"trainable", store.trainable_count()},
                          {"total", store.total_count()},
                          {"ratio", double(store.trainable_count()) / double(store.total_count())}};
    json plist = json::array();
    int idx = 0;
    for (nn::Param* p : store.all()) {
        plist.push_back({{"name", p->name},
                         {"shape", p->value.shape},
                         {"trainable", p->trainable},
                         {"file", param_file(idx)}});
        write_miid((fs::path(dir) / "params" / param_file(idx)).string(), p->value);
        ++idx;
    }
    manifest["params"] = std::move(plist);
    for (auto it = extra.begin(); it != extra.end(); ++it) manifest[it.key()] = it.value();
    std::ofstream(fs::path(dir) / "manifest.json") << manifest.dump(2) << "\n";
}

json load_params(const std::string& dir, nn::ParamStore& store) {
    const fs::path mpath = fs::path(dir) / "manifest.json";
    std::ifstream is(mpath);
    if (!is) throw std::runtime_error("checkpoint: missing " + mpath.string());
    json manifest;
    is >> manifest;
    for (const auto& pj : manifest.at("params")) {
        nn::Param& p = store.create(pj.at("name").get<std::string>(),
                                    pj.at("shape").get<std::vector<int>>(), pj.at("trainable").get<bool>());
        Tensor t = read_miid((fs::path(dir) / "params" / pj.at("file").get<std::string>()).string());
        if (!t.same_shape(p.value)) throw std::runtime_error("checkpoint: shape mismatch for " + p.name);
        p.value = std::move(t);
    }
    return manifest;
}

void save_repository(const std::string& dir, const detect::MemoryRepository& repo) {
    fs::create_directories(fs::path(dir) / "repos");
    write_miid((fs::path(dir) / "repos" / (repo.modality + ".miid")).string(), repo.bank);
    json ids = {{"modality", repo.modality}, {"source_ids", repo.source_ids}};
    std::ofstream(fs::path(dir) / "repos" / (repo.modality + ".ids.json")) << ids.dump() << "\n";
}

detect::MemoryRepository load_repository(const std::string& dir, const std::string& tag) {
    detect::MemoryRepository repo;
    repo.modality = tag;
    repo.bank = read_miid((fs::path(dir) / "repos" / (tag + ".miid")).string());
    std::ifstream is(fs::path(dir) / "repos" / (tag + ".ids.json"));
    if (is) {
        json j;
        is >> j;
        repo.source_ids = j.at("source_ids").get<std::vector<int>>();
    }
    return repo;
}

void save_decision(const std::string& dir, const detect::DecisionModels& dm) {
    fs::create_directories(dir);
    json j;
    j["mdm"] = {{"mean", dm.mdm.mean},
                {"lambda", dm.mdm.lambda},
                {"degenerate", dm.mdm.degenerate},
                {"cov_inv", dm.mdm.cov_inv}};
    j["ocsvm"] = {{"gamma", dm.ocsvm.gamma()},
                  {"rho", dm.ocsvm.rho()},
                  {"alpha", dm.ocsvm.alpha()},
                  {"channel_mean", dm.ocsvm.channel_mean()},
                  {"channel_scale", dm.ocsvm.channel_scale()}};
    std::ofstream(fs::path(dir) / "decision.json") << j.dump() << "\n";
    const auto& sv = dm.ocsvm.support();
    Tensor s({int(sv.size()), 3});
    for (size_t i = 0; i < sv.size(); ++i)
        for (int c = 0; c < 3; ++c) s.at(int(i), c) = sv[i][size_t(c)];
    write_miid((fs::path(dir) / "decision.support.miid").string(), s);
}

detect::DecisionModels load_decision(const std::string& dir) {
    std::ifstream is(fs::path(dir) / "decision.json");
    if (!is) throw std::runtime_error("checkpoint: missing decision.json in " + dir);
    json j;
    is >> j;
    detect::DecisionModels dm;
    dm.mdm.mean = j.at("mdm").at("mean").get<std::array<double, 3>>();
    dm.mdm.lambda = j.at("mdm").at("lambda").get<double>();
    dm.mdm.degenerate = j.at("mdm").at("degenerate").get<bool>();
    dm.mdm.cov_inv = j.at("mdm").at("cov_inv").get<std::array<std::array<double, 3>, 3>>();
    const Tensor s = read_miid((fs::path(dir) / "decision.support.miid").string());
    std::vector<std::array<double, 3>> sv(size_t(s.rows()));
    for (int i = 0; i < s.rows(); ++i)
        for (int c = 0; c < 3; ++c) sv[size_t(i)][size_t(c)] = s.at(i, c);
    dm.ocsvm.restore(std::move(sv), j.at("ocsvm").at("alpha").get<std::vector<double>>(),
                     j.at("ocsvm").at("gamma").get<double>(), j.at("ocsvm").at("rho").get<double>(),
                     j.at("ocsvm").at("channel_mean").get<std::array<double, 3>>(),
                     j.at("ocsvm").at("channel_scale").get<std::array<double, 3>>());
    return dm;
}

}  // namespace miiad::harness
