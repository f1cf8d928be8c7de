#pragma once

#include <string>

#include <json.hpp>

#include "miiad/detection.hpp"
#include "miiad/params.hpp"

namespace miiad::harness {

// Checkpoint directory layout:
//   manifest.json   config, ordered parameter table, trainable/total counts
//   params/pNNNN.miid
//   repos/<tag>.miid + repos/<tag>.ids.json      (stage-2 checkpoints)
//   decision.json + decision.support.miid        (stage-2 checkpoints)
void save_params(const std::string& dir, nn::ParamStore& store, const nlohmann::json& config,
                 const nlohmann::json& extra = nlohmann::json::object());

// Recreates every parameter (names, shapes, trainable flags, values) into an
// empty store and returns the manifest.
nlohmann::json load_params(const std::string& dir, nn::ParamStore& store);

void save_repository(const std::string& dir, const detect::MemoryRepository& repo);
detect::MemoryRepository load_repository(const std::string& dir, const std::string& tag);

void save_decision(const std::string& dir, const detect::DecisionModels& dm);
detect::DecisionModels load_decision(const std::string& dir);

}  // namespace miiad::harness
