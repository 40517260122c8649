// moco: motion-artifact simulation, two-stage VQ training, and correction.
//
// exit codes: 0 success, 1 usage error, 2 data/checkpoint error

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "moco/config.hpp"
#include "moco/nifti.hpp"
#include "moco/phantom.hpp"
#include "moco/pipeline.hpp"
#include "moco/train.hpp"
#include "moco/vq.hpp"

namespace {

using namespace moco;

struct GlobalArgs {
  std::string config_path;
  std::optional<uint64_t> seed;
  std::string out;
};

cfg::AppConfig resolve_config(const GlobalArgs& g) {
  cfg::AppConfig app = g.config_path.empty() ? cfg::AppConfig{} : cfg::load_config(g.config_path);
  if (g.seed) app.train.seed = *g.seed;
  return app;
}

ImageVolume load_volume(const std::string& path) {
  if (!std::filesystem::exists(path)) throw std::runtime_error("volume not found: " + path);
  return nifti::read(path);
}

std::string pair_stem(const std::string& dir, int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "pair_%05d", index);
  return (std::filesystem::path(dir) / buf).string();
}

std::vector<TrainingPair> load_pair_dir(const std::string& dir) {
  std::vector<TrainingPair> pairs;
  for (int i = 0;; ++i) {
    const std::string stem = pair_stem(dir, i);
    if (!std::filesystem::exists(stem + ".json")) break;
    pairs.push_back(pipeline::load_pair(stem));
  }
  if (pairs.empty()) throw std::runtime_error("no pair files found under " + dir);
  return pairs;
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << text;
}

int run_phantom(const GlobalArgs& g, int size, int shapes) {
  if (g.out.empty()) throw std::invalid_argument("phantom: --out is required");
  Rng rng(g.seed.value_or(0));
  ImageVolume vol = make_phantom(size, shapes, rng);
  nifti::write(g.out, vol);
  std::cout << "wrote " << g.out << " (" << vol.nz << "x" << vol.ny << "x" << vol.nx << ")\n";
  return 0;
}

int run_simulate(const GlobalArgs& g, const std::string& volume, int count) {
  if (g.out.empty()) throw std::invalid_argument("simulate: --out directory is required");
  cfg::AppConfig app = resolve_config(g);
  ImageVolume vol = load_volume(volume);
  std::filesystem::create_directories(g.out);
  const uint64_t seed = app.train.seed;
  for (int i = 0; i < count; ++i) {
    Rng rng(seed + static_cast<uint64_t>(i));
    TrainingPair pair = make_training_pair(vol, app.train.crop, rng, app.sim.n_states);
    pipeline::save_pair(pair_stem(g.out, i), pair, seed + static_cast<uint64_t>(i));
  }
  std::cout << "wrote " << count << " pairs under " << g.out << "\n";
  return 0;
}

int run_train_vq(const GlobalArgs& g, const std::string& data_dir) {
  if (g.out.empty()) throw std::invalid_argument("train-vq: --out checkpoint stem is required");
  cfg::AppConfig app = resolve_config(g);
  train::MemoryPairSource source(load_pair_dir(data_dir));

  nets::VQModel<float> model(app.model);
  Rng init_rng(app.train.seed);
  model.init_params(init_rng);

  train::TrainLog log = train::train_stage1(app.train, source, model);
  pipeline::save_vq_model(g.out, model, app, app.train.seed);
  write_text_file(g.out + ".log.jsonl", log.to_jsonl());
  if (!log.steps.empty())
    std::cout << "stage 1 done: " << log.steps.size() << " steps, final total loss "
              << log.steps.back().losses.at("total") << "\n";
  std::cout << "wrote " << g.out << ".json/.blob\n";
  return 0;
}

int run_train_prior(const GlobalArgs& g, const std::string& data_dir, const std::string& vq_stem) {
  if (g.out.empty()) throw std::invalid_argument("train-prior: --out checkpoint stem is required");
  auto [model, app] = pipeline::load_vq_model(vq_stem);
  if (g.seed) app.train.seed = *g.seed;
  if (!g.config_path.empty()) {
    // training hyperparameters may be overridden; the model architecture
    // stays pinned to the checkpoint
    cfg::AppConfig over = cfg::load_config(g.config_path);
    app.train = over.train;
    app.prior = over.prior;
    if (g.seed) app.train.seed = *g.seed;
  }
  train::MemoryPairSource source(load_pair_dir(data_dir));

  prior::PriorNet<float> top(app.prior_config(vq::Level::Top));
  prior::PriorNet<float> bottom(app.prior_config(vq::Level::Bottom));
  Rng init_rng(app.train.seed ^ 0xabcdef1234567890ull);
  top.init_params(init_rng);
  bottom.init_params(init_rng);

  const uint64_t vq_hash_before = train::param_store_hash(model.params());
  train::TrainLog log = train::train_stage2(app.train, source, model, top, bottom);
  if (train::param_store_hash(model.params()) != vq_hash_before)
    throw std::runtime_error("train-prior: autoencoder parameters changed during stage 2");

  pipeline::save_priors(g.out, top, bottom, app, app.train.seed);
  write_text_file(g.out + ".log.jsonl", log.to_jsonl());
  if (!log.steps.empty())
    std::cout << "stage 2 done: " << log.steps.size() << " steps, final nll (top, bottom) = ("
              << log.steps.back().losses.at("nll_top") << ", "
              << log.steps.back().losses.at("nll_bottom") << ")\n";
  std::cout << "wrote " << g.out << ".json/.blob\n";
  return 0;
}

int run_correct(const GlobalArgs& g, const std::string& vq_stem, const std::string& prior_stem,
                const std::string& input, const std::string& array, int label,
                const std::string& mode, const std::string& rearrange_mode, double temperature,
                const std::string& dump_grids) {
  if (g.out.empty()) throw std::invalid_argument("correct: --out stem is required");
  SeverityLabel y(label);

  auto [model, app] = pipeline::load_vq_model(vq_stem);
  std::optional<std::pair<prior::PriorNet<float>, prior::PriorNet<float>>> priors;
  pipeline::CorrectMode cmode;
  if (mode == "direct") {
    cmode = pipeline::CorrectMode::Direct;
  } else if (mode == "rearranged") {
    cmode = pipeline::CorrectMode::Rearranged;
    if (prior_stem.empty())
      throw std::invalid_argument("correct: rearranged mode requires --prior");
    priors = pipeline::load_priors(prior_stem, app);
  } else {
    throw std::invalid_argument("correct: --mode must be direct or rearranged");
  }
  prior::RearrangeMode rmode;
  if (rearrange_mode == "regenerate")
    rmode = prior::RearrangeMode::Regenerate;
  else if (rearrange_mode == "resample-prefix")
    rmode = prior::RearrangeMode::ResamplePrefix;
  else
    throw std::invalid_argument("correct: --rearrange-mode must be regenerate or resample-prefix");

  ckpt::Checkpoint in = ckpt::load(input);
  const Tensor<float>& arr = in.require(array);
  if (arr.shape.size() != 2) throw std::runtime_error("correct: input array must be 2D");
  ImageSlice img(arr.dim(0), arr.dim(1), in.config.value("spacing_row", 1.0),
                 in.config.value("spacing_col", 1.0));
  img.v = arr.v;

  Rng rng(g.seed.value_or(app.train.seed));
  pipeline::CorrectionGrids grids;
  ImageSlice out = pipeline::correct_image(model, priors ? &priors->first : nullptr,
                                           priors ? &priors->second : nullptr, img, y.value, cmode,
                                           temperature, rmode, rng, &grids);

  ckpt::Checkpoint result;
  result.stage = "image";
  result.seed = g.seed.value_or(app.train.seed);
  result.config = {{"spacing_row", out.sp_row}, {"spacing_col", out.sp_col},
                   {"y", y.value},              {"mode", mode}};
  Tensor<float> t({out.h, out.w});
  t.v = out.v;
  result.add("image", std::move(t));
  ckpt::save(result, g.out);

  if (!dump_grids.empty()) {
    write_text_file(dump_grids + ".top.json", vq::grid_to_json(grids.used_top));
    write_text_file(dump_grids + ".bottom.json", vq::grid_to_json(grids.used_bottom));
  }
  std::cout << "wrote " << g.out << ".json/.blob\n";
  return 0;
}

int run_panel(const GlobalArgs& g, const std::string& vq_stem, const std::string& prior_stem,
              const std::string& volume, const std::string& rows_csv,
              const std::string& columns_csv, double temperature,
              const std::string& rearrange_mode) {
  if (g.out.empty()) throw std::invalid_argument("panel: --out png path is required");
  auto [model, app] = pipeline::load_vq_model(vq_stem);

  pipeline::PanelSpec spec;
  spec.out_path = g.out;
  spec.rows.clear();
  {
    std::stringstream ss(rows_csv);
    std::string item;
    while (std::getline(ss, item, ',')) spec.rows.push_back(std::stoi(item));
  }
  if (!columns_csv.empty()) {
    spec.columns.clear();
    std::stringstream ss(columns_csv);
    std::string item;
    while (std::getline(ss, item, ','))
      spec.columns.push_back(pipeline::panel_column_from_name(item));
  }

  const bool needs_priors =
      std::find(spec.columns.begin(), spec.columns.end(),
                pipeline::PanelColumn::CorrectedRearranged) != spec.columns.end();
  std::optional<std::pair<prior::PriorNet<float>, prior::PriorNet<float>>> priors;
  if (needs_priors) {
    if (prior_stem.empty())
      throw std::invalid_argument("panel: the corrected_rearranged column requires --prior");
    priors = pipeline::load_priors(prior_stem, app);
  }
  prior::RearrangeMode rmode = rearrange_mode == "resample-prefix"
                                   ? prior::RearrangeMode::ResamplePrefix
                                   : prior::RearrangeMode::Regenerate;

  ImageVolume vol = load_volume(volume);
  pipeline::emit_panel(spec, model, priors ? &priors->first : nullptr,
                       priors ? &priors->second : nullptr, vol, app.train.crop, app.sim.n_states,
                       temperature, rmode, g.seed.value_or(app.train.seed));
  std::cout << "wrote " << g.out << "\n";
  return 0;
}

int run_eval(const GlobalArgs& g, const std::string& vq_stem, const std::string& prior_stem,
             const std::string& volume, int count, bool rearranged, double temperature) {
  if (g.out.empty()) throw std::invalid_argument("eval: --out csv path is required");
  auto [model, app] = pipeline::load_vq_model(vq_stem);
  std::optional<std::pair<prior::PriorNet<float>, prior::PriorNet<float>>> priors;
  if (rearranged) {
    if (prior_stem.empty()) throw std::invalid_argument("eval: --rearranged requires --prior");
    priors = pipeline::load_priors(prior_stem, app);
  }
  ImageVolume vol = load_volume(volume);
  pipeline::eval_csv(g.out, model, priors ? &priors->first : nullptr,
                     priors ? &priors->second : nullptr, vol, count, app.train.crop,
                     app.sim.n_states, g.seed.value_or(app.train.seed), rearranged, temperature);
  std::cout << "wrote " << g.out << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App cli{"k-space motion simulation and hierarchical VQ motion correction"};
  cli.require_subcommand(1);

  GlobalArgs g;
  cli.add_option("--config", g.config_path, "JSON config path")->capture_default_str();
  uint64_t seed_val = 0;
  auto* seed_opt = cli.add_option("--seed", seed_val, "global seed");
  cli.add_option("--out", g.out, "output path (file, directory, or checkpoint stem)");

  auto* sc_phantom = cli.add_subcommand("phantom", "generate a synthetic NIfTI volume");
  int ph_size = 64, ph_shapes = 6;
  sc_phantom->add_option("--size", ph_size, "in-plane size");
  sc_phantom->add_option("--shapes", ph_shapes, "ellipsoid count");

  auto* sc_sim = cli.add_subcommand("simulate", "write corrupted/clean training pairs");
  std::string sim_volume;
  int sim_count = 64;
  sc_sim->add_option("--volume", sim_volume, "input NIfTI volume")->required();
  sc_sim->add_option("--count", sim_count, "pair count");

  auto* sc_tvq = cli.add_subcommand("train-vq", "stage 1: fit the autoencoder and codebooks");
  std::string tvq_data;
  sc_tvq->add_option("--data", tvq_data, "directory of simulated pairs")->required();

  auto* sc_tpr = cli.add_subcommand("train-prior", "stage 2: fit the autoregressive priors");
  std::string tpr_data, tpr_vq;
  sc_tpr->add_option("--data", tpr_data, "directory of simulated pairs")->required();
  sc_tpr->add_option("--vq", tpr_vq, "trained autoencoder checkpoint stem")->required();

  auto* sc_cor = cli.add_subcommand("correct", "correct a single image");
  std::string cor_vq, cor_prior, cor_input, cor_array = "corrupted", cor_mode = "direct";
  std::string cor_rmode = "regenerate", cor_dump;
  int cor_label = 0;
  double cor_temp = 0.0;
  sc_cor->add_option("--vq", cor_vq, "autoencoder checkpoint stem")->required();
  sc_cor->add_option("--prior", cor_prior, "prior checkpoint stem");
  sc_cor->add_option("--input", cor_input, "input array file stem")->required();
  sc_cor->add_option("--array", cor_array, "array name inside the input file");
  sc_cor->add_option("--label", cor_label, "severity label 0..10")->required();
  sc_cor->add_option("--mode", cor_mode, "direct | rearranged");
  sc_cor->add_option("--rearrange-mode", cor_rmode, "regenerate | resample-prefix");
  sc_cor->add_option("--temperature", cor_temp, "sampling temperature (0 = greedy)");
  sc_cor->add_option("--dump-grids", cor_dump, "write decoder index grids as JSON to this stem");

  auto* sc_panel = cli.add_subcommand("panel", "emit a severity-by-variant PNG grid");
  std::string pn_vq, pn_prior, pn_volume, pn_rows = "2,5,8", pn_cols, pn_rmode = "regenerate";
  double pn_temp = 0.0;
  sc_panel->add_option("--vq", pn_vq, "autoencoder checkpoint stem")->required();
  sc_panel->add_option("--prior", pn_prior, "prior checkpoint stem");
  sc_panel->add_option("--volume", pn_volume, "input NIfTI volume")->required();
  sc_panel->add_option("--rows", pn_rows, "comma-separated severity labels");
  sc_panel->add_option("--columns", pn_cols,
                       "comma-separated subset of corrupted,corrected,corrected_rearranged,reference");
  sc_panel->add_option("--temperature", pn_temp, "sampling temperature for the rearranged column");
  sc_panel->add_option("--rearrange-mode", pn_rmode, "regenerate | resample-prefix");

  auto* sc_eval = cli.add_subcommand("eval", "PSNR/SSIM table over simulated test pairs");
  std::string ev_vq, ev_prior, ev_volume;
  int ev_count = 16;
  bool ev_re = false;
  double ev_temp = 0.0;
  sc_eval->add_option("--vq", ev_vq, "autoencoder checkpoint stem")->required();
  sc_eval->add_option("--prior", ev_prior, "prior checkpoint stem");
  sc_eval->add_option("--volume", ev_volume, "input NIfTI volume")->required();
  sc_eval->add_option("--count", ev_count, "sample count");
  sc_eval->add_flag("--rearranged", ev_re, "also evaluate the rearranged mode");
  sc_eval->add_option("--temperature", ev_temp, "sampling temperature for rearranged mode");

  try {
    cli.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return cli.exit(e) == 0 ? 0 : 1;
  }

  if (seed_opt->count() > 0) g.seed = seed_val;

  try {
    if (cli.got_subcommand(sc_phantom)) return run_phantom(g, ph_size, ph_shapes);
    if (cli.got_subcommand(sc_sim)) return run_simulate(g, sim_volume, sim_count);
    if (cli.got_subcommand(sc_tvq)) return run_train_vq(g, tvq_data);
    if (cli.got_subcommand(sc_tpr)) return run_train_prior(g, tpr_data, tpr_vq);
    if (cli.got_subcommand(sc_cor))
      return run_correct(g, cor_vq, cor_prior, cor_input, cor_array, cor_label, cor_mode,
                         cor_rmode, cor_temp, cor_dump);
    if (cli.got_subcommand(sc_panel))
      return run_panel(g, pn_vq, pn_prior, pn_volume, pn_rows, pn_cols, pn_temp, pn_rmode);
    if (cli.got_subcommand(sc_eval))
      return run_eval(g, ev_vq, ev_prior, ev_volume, ev_count, ev_re, ev_temp);
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
