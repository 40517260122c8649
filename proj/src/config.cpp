#include "moco/config.hpp"

#include <fstream>
#include <set>
#include <stdexcept>

namespace moco::cfg {

namespace {

void check_keys(const nlohmann::json& j, const std::set<std::string>& allowed,
                const std::string& where) {
  if (!j.is_object()) throw std::invalid_argument("config: '" + where + "' must be an object");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!allowed.count(it.key()))
      throw std::invalid_argument("config: unknown key '" + it.key() + "' in " + where);
}

template <typename T>
void read(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

AppConfig parse_config(const nlohmann::json& j) {
  AppConfig c;
  check_keys(j, {"version", "model", "prior", "train", "sim"}, "root");
  read(j, "version", c.version);
  if (c.version != 1)
    throw std::invalid_argument("config: unsupported version " + std::to_string(c.version));

  if (j.contains("model")) {
    const auto& m = j.at("model");
    check_keys(m,
               {"in_channels", "hidden_channels", "res_blocks_per_stage", "codebook_k",
                "codebook_d", "bottom_stride", "top_stride", "num_labels",
                "encoder_label_injection"},
               "model");
    read(m, "in_channels", c.model.in_channels);
    read(m, "hidden_channels", c.model.hidden_channels);
    read(m, "res_blocks_per_stage", c.model.res_blocks_per_stage);
    read(m, "codebook_k", c.model.codebook_k);
    read(m, "codebook_d", c.model.codebook_d);
    read(m, "bottom_stride", c.model.bottom_stride);
    read(m, "top_stride", c.model.top_stride);
    read(m, "num_labels", c.model.num_labels);
    read(m, "encoder_label_injection", c.model.encoder_label_injection);
  }
  if (j.contains("prior")) {
    const auto& p = j.at("prior");
    check_keys(p, {"channels", "n_blocks", "gated_res_per_block", "attention"}, "prior");
    read(p, "channels", c.prior.channels);
    read(p, "n_blocks", c.prior.n_blocks);
    read(p, "gated_res_per_block", c.prior.gated_res_per_block);
    read(p, "attention", c.prior.attention);
  }
  if (j.contains("train")) {
    const auto& t = j.at("train");
    check_keys(t,
               {"lr_stage1", "lr_stage2", "adam_beta1", "adam_beta2", "adam_eps", "epochs",
                "batch_size", "beta_commit", "crop", "seed", "grad_clip", "max_steps",
                "checkpoint_every"},
               "train");
    read(t, "lr_stage1", c.train.lr_stage1);
    read(t, "lr_stage2", c.train.lr_stage2);
    read(t, "adam_beta1", c.train.adam_beta1);
    read(t, "adam_beta2", c.train.adam_beta2);
    read(t, "adam_eps", c.train.adam_eps);
    read(t, "epochs", c.train.epochs);
    read(t, "batch_size", c.train.batch_size);
    read(t, "beta_commit", c.train.beta_commit);
    read(t, "crop", c.train.crop);
    read(t, "seed", c.train.seed);
    read(t, "grad_clip", c.train.grad_clip);
    read(t, "max_steps", c.train.max_steps);
    read(t, "checkpoint_every", c.train.checkpoint_every);
  }
  if (j.contains("sim")) {
    const auto& s = j.at("sim");
    check_keys(s, {"n_states"}, "sim");
    read(s, "n_states", c.sim.n_states);
    if (c.sim.n_states < 1) throw std::invalid_argument("config: sim.n_states must be >= 1");
  }

  c.model.validate();
  c.train.validate();
  return c;
}

AppConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("config: cannot open " + path);
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("config: parse failure in " + path + ": " + e.what());
  }
  return parse_config(j);
}

nlohmann::json config_to_json(const AppConfig& c) {
  return {
      {"version", c.version},
      {"model",
       {{"in_channels", c.model.in_channels},
        {"hidden_channels", c.model.hidden_channels},
        {"res_blocks_per_stage", c.model.res_blocks_per_stage},
        {"codebook_k", c.model.codebook_k},
        {"codebook_d", c.model.codebook_d},
        {"bottom_stride", c.model.bottom_stride},
        {"top_stride", c.model.top_stride},
        {"num_labels", c.model.num_labels},
        {"encoder_label_injection", c.model.encoder_label_injection}}},
      {"prior",
       {{"channels", c.prior.channels},
        {"n_blocks", c.prior.n_blocks},
        {"gated_res_per_block", c.prior.gated_res_per_block},
        {"attention", c.prior.attention}}},
      {"train",
       {{"lr_stage1", c.train.lr_stage1},
        {"lr_stage2", c.train.lr_stage2},
        {"adam_beta1", c.train.adam_beta1},
        {"adam_beta2", c.train.adam_beta2},
        {"adam_eps", c.train.adam_eps},
        {"epochs", c.train.epochs},
        {"batch_size", c.train.batch_size},
        {"beta_commit", c.train.beta_commit},
        {"crop", c.train.crop},
        {"seed", c.train.seed},
        {"grad_clip", c.train.grad_clip},
        {"max_steps", c.train.max_steps},
        {"checkpoint_every", c.train.checkpoint_every}}},
      {"sim", {{"n_states", c.sim.n_states}}}};
}

AppConfig toy_config() {
  AppConfig c;
  c.model.hidden_channels = 32;
  c.model.codebook_k = 32;
  c.model.codebook_d = 8;
  c.model.bottom_stride = 2;
  c.model.top_stride = 4;
  c.prior.channels = 32;
  c.prior.n_blocks = 2;
  c.prior.gated_res_per_block = 1;
  c.train.lr_stage1 = 1e-3;
  c.train.lr_stage2 = 1e-3;
  c.train.epochs = 4;
  c.train.batch_size = 8;
  c.train.crop = 16;
  c.sim.n_states = 2;
  return c;
}

}  // namespace moco::cfg
