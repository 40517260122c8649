#pragma once

#include <string>

#include "json.hpp"
#include "moco/nets.hpp"
#include "moco/prior.hpp"
#include "moco/train.hpp"

namespace moco::cfg {

struct PriorArch {
  int channels = 128;
  int n_blocks = 4;
  int gated_res_per_block = 2;
  bool attention = true;
};

struct SimConfig {
  int n_states = 3;
};

// Whole-run configuration. JSON parsing is strict: unknown keys are
// rejected, missing keys take these defaults.
struct AppConfig {
  int version = 1;
  nets::VQModelConfig model;
  PriorArch prior;
  train::TrainConfig train;
  SimConfig sim;

  prior::PriorConfig prior_config(vq::Level level) const {
    prior::PriorConfig pc;
    pc.level = level;
    pc.k = model.codebook_k;
    pc.channels = prior.channels;
    pc.n_blocks = prior.n_blocks;
    pc.gated_res_per_block = prior.gated_res_per_block;
    pc.attention = prior.attention;
    pc.has_context = level == vq::Level::Bottom;
    pc.num_labels = model.num_labels;
    return pc;
  }
};

AppConfig parse_config(const nlohmann::json& j);
AppConfig load_config(const std::string& path);
nlohmann::json config_to_json(const AppConfig& c);

// small-scale preset used by tests and the acceptance suite
AppConfig toy_config();

}  // namespace moco::cfg
