#include "moco/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

#include "moco/metrics.hpp"
#include "moco/png_io.hpp"

namespace moco::pipeline {

namespace {

Tensor<float> slice_tensor2d(const ImageSlice& s) {
  Tensor<float> t({s.h, s.w});
  t.v = s.v;
  return t;
}

ImageSlice tensor2d_slice(const Tensor<float>& t, double spr, double spc) {
  ImageSlice s(t.dim(0), t.dim(1), spr, spc);
  s.v = t.v;
  return s;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << text;
  if (!f) throw std::runtime_error("write failure on " + path);
}

std::string fmt17(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

nlohmann::json spec_to_json(const MotionSpec& spec) {
  nlohmann::json states = nlohmann::json::array();
  for (const auto& s : spec.states)
    states.push_back({{"rotation_deg", s.rotation_deg},
                      {"t_row_mm", s.t_row_mm},
                      {"t_col_mm", s.t_col_mm}});
  return {{"amplitude", spec.amplitude},
          {"states", std::move(states)},
          {"segment_bounds", spec.segment_bounds}};
}

MotionSpec spec_from_json(const nlohmann::json& j) {
  MotionSpec spec;
  spec.amplitude = j.at("amplitude").get<double>();
  for (const auto& s : j.at("states"))
    spec.states.push_back({s.at("rotation_deg").get<double>(), s.at("t_row_mm").get<double>(),
                           s.at("t_col_mm").get<double>()});
  spec.segment_bounds = j.at("segment_bounds").get<std::vector<int>>();
  return spec;
}

void save_pair(const std::string& stem, const TrainingPair& pair, uint64_t seed) {
  ckpt::Checkpoint c;
  c.stage = "pair";
  c.seed = seed;
  c.config = {{"spacing_row", pair.clean.sp_row}, {"spacing_col", pair.clean.sp_col}};
  c.add("corrupted", slice_tensor2d(pair.corrupted));
  c.add("clean", slice_tensor2d(pair.clean));
  ckpt::save(c, stem);

  nlohmann::json meta = {{"y", pair.label.value}, {"spec", spec_to_json(pair.spec)}};
  write_text(stem + ".meta.json", meta.dump(2) + "\n");
}

TrainingPair load_pair(const std::string& stem) {
  ckpt::Checkpoint c = ckpt::load(stem);
  if (c.stage != "pair") throw std::runtime_error("pair file: wrong stage '" + c.stage + "'");
  const double spr = c.config.value("spacing_row", 1.0);
  const double spc = c.config.value("spacing_col", 1.0);

  std::ifstream mf(stem + ".meta.json");
  if (!mf) throw std::runtime_error("pair file: missing sidecar " + stem + ".meta.json");
  nlohmann::json meta;
  mf >> meta;

  TrainingPair pair;
  pair.corrupted = tensor2d_slice(c.require("corrupted"), spr, spc);
  pair.clean = tensor2d_slice(c.require("clean"), spr, spc);
  pair.label = SeverityLabel(meta.at("y").get<int>());
  pair.spec = spec_from_json(meta.at("spec"));
  return pair;
}

TrainingPair make_pair_for_label(const ImageVolume& vol, int crop, Rng& rng, int n_states,
                                 SeverityLabel y) {
  if (crop < 1 || crop > vol.ny || crop > vol.nx)
    throw std::runtime_error("make_pair_for_label: crop exceeds in-plane dimensions");
  const int z = rng.randint(0, vol.nz - 1);
  ImageSlice norm = normalize_percentile(vol.slice(z));
  const int r0 = rng.randint(0, vol.ny - crop);
  const int c0 = rng.randint(0, vol.nx - crop);

  ImageSlice clean(crop, crop, vol.sp_row, vol.sp_col);
  for (int r = 0; r < crop; ++r)
    for (int c = 0; c < crop; ++c) clean.at(r, c) = norm.at(r0 + r, c0 + c);

  TrainingPair pair;
  pair.label = y;
  pair.spec = sample_motion_spec(y, n_states, crop, rng);
  pair.corrupted = corrupt_kspace(clean, pair.spec);
  pair.clean = std::move(clean);
  return pair;
}

void save_vq_model(const std::string& stem, const nets::VQModel<float>& model,
                   const cfg::AppConfig& app, uint64_t seed) {
  ckpt::Checkpoint c;
  c.stage = "vq";
  c.seed = seed;
  c.config = cfg::config_to_json(app);
  ckpt::pack_params(model.params(), c);
  ckpt::save(c, stem);
}

std::pair<nets::VQModel<float>, cfg::AppConfig> load_vq_model(const std::string& stem) {
  ckpt::Checkpoint c = ckpt::load(stem);
  if (c.stage != "vq")
    throw std::runtime_error("checkpoint " + stem + ": stage is '" + c.stage + "', expected 'vq'");
  cfg::AppConfig app = cfg::parse_config(c.config);
  nets::VQModel<float> model(app.model);
  ckpt::unpack_params(c, model.params());
  return {std::move(model), std::move(app)};
}

void save_priors(const std::string& stem, const prior::PriorNet<float>& top,
                 const prior::PriorNet<float>& bottom, const cfg::AppConfig& app, uint64_t seed) {
  ckpt::Checkpoint c;
  c.stage = "prior";
  c.seed = seed;
  c.config = cfg::config_to_json(app);
  ckpt::pack_params(top.params(), c, "top.");
  ckpt::pack_params(bottom.params(), c, "bottom.");
  ckpt::save(c, stem);
}

std::pair<prior::PriorNet<float>, prior::PriorNet<float>> load_priors(
    const std::string& stem, const cfg::AppConfig& vq_app) {
  ckpt::Checkpoint c = ckpt::load(stem);
  if (c.stage != "prior")
    throw std::runtime_error("checkpoint " + stem + ": stage is '" + c.stage +
                             "', expected 'prior'");
  cfg::AppConfig app = cfg::parse_config(c.config);
  if (app.model.codebook_k != vq_app.model.codebook_k)
    throw std::runtime_error("checkpoint " + stem + ": field codebook_k (" +
                             std::to_string(app.model.codebook_k) +
                             ") does not match the autoencoder (" +
                             std::to_string(vq_app.model.codebook_k) + ")");
  if (app.model.bottom_stride != vq_app.model.bottom_stride ||
      app.model.top_stride != vq_app.model.top_stride)
    throw std::runtime_error("checkpoint " + stem +
                             ": field bottom_stride/top_stride does not match the autoencoder");

  prior::PriorNet<float> top(app.prior_config(vq::Level::Top));
  prior::PriorNet<float> bottom(app.prior_config(vq::Level::Bottom));
  ckpt::unpack_params(c, top.params(), "top.");
  ckpt::unpack_params(c, bottom.params(), "bottom.");
  return {std::move(top), std::move(bottom)};
}

ImageSlice correct_image(nets::VQModel<float>& vq_model, prior::PriorNet<float>* prior_top,
                         prior::PriorNet<float>* prior_bottom, const ImageSlice& corrupted, int y,
                         CorrectMode mode, double temperature, prior::RearrangeMode rmode,
                         Rng& rng, CorrectionGrids* grids_out) {
  ad::Graph<float> g;
  Tensor<float> xs = nets::VQModel<float>::slice_to_tensor(corrupted);
  auto [z_b, z_t] = vq_model.encode_hierarchy(g, g.constant(xs), y);

  auto cb_top = vq_model.codebook(vq::Level::Top);
  auto cb_bottom = vq_model.codebook(vq::Level::Bottom);
  auto [g_top, zq_top] = vq::quantize_grid(g.val(z_t), cb_top);
  auto [g_bottom, zq_bottom] = vq::quantize_grid(g.val(z_b), cb_bottom);

  Tensor<float> eq_top, eq_bottom;
  vq::CodeGrid used_top = g_top, used_bottom = g_bottom;
  if (mode == CorrectMode::Rearranged) {
    if (!prior_top || !prior_bottom)
      throw std::invalid_argument("correct: rearranged mode needs both priors");
    if (prior_top->config().k != cb_top.K())
      throw std::runtime_error("correct: prior vocabulary does not match codebook_k");
    used_top = prior_top->rearrange(g_top, y, temperature, rng, rmode);
    used_bottom = prior_bottom->rearrange(g_bottom, y, temperature, rng, rmode, &g_top);
    eq_top = vq::lookup(used_top, cb_top);
    eq_bottom = vq::lookup(used_bottom, cb_bottom);
  } else {
    eq_top = std::move(zq_top);
    eq_bottom = std::move(zq_bottom);
  }

  ad::Var out =
      vq_model.decode_hierarchy(g, g.constant(std::move(eq_top)), g.constant(std::move(eq_bottom)), y);
  ImageSlice result =
      nets::VQModel<float>::tensor_to_slice(g.val(out), corrupted.sp_row, corrupted.sp_col);
  for (auto& v : result.v) v = std::max(v, 0.0f);

  if (grids_out) {
    grids_out->enc_top = std::move(g_top);
    grids_out->enc_bottom = std::move(g_bottom);
    grids_out->used_top = std::move(used_top);
    grids_out->used_bottom = std::move(used_bottom);
  }
  return result;
}

PanelColumn panel_column_from_name(const std::string& name) {
  if (name == "corrupted") return PanelColumn::Corrupted;
  if (name == "corrected") return PanelColumn::Corrected;
  if (name == "corrected_rearranged" || name == "rearranged")
    return PanelColumn::CorrectedRearranged;
  if (name == "reference") return PanelColumn::Reference;
  throw std::invalid_argument("panel: unknown column '" + name + "'");
}

void emit_panel(const PanelSpec& spec, nets::VQModel<float>& vq_model,
                prior::PriorNet<float>* prior_top, prior::PriorNet<float>* prior_bottom,
                const ImageVolume& vol, int crop, int n_states, double temperature,
                prior::RearrangeMode rmode, uint64_t seed) {
  if (spec.rows.empty() || spec.columns.empty())
    throw std::invalid_argument("panel: needs at least one row and one column");
  for (int y : spec.rows) SeverityLabel check(y);

  constexpr int kSep = 2;
  const int tiles_h = static_cast<int>(spec.rows.size());
  const int tiles_w = static_cast<int>(spec.columns.size());
  const int ph = tiles_h * crop + (tiles_h - 1) * kSep;
  const int pw = tiles_w * crop + (tiles_w - 1) * kSep;
  std::vector<uint8_t> canvas(static_cast<size_t>(ph) * pw, 255);

  auto to_u8 = [](float v) {
    const float c = std::clamp(v, 0.0f, 1.0f);
    return static_cast<uint8_t>(std::lround(c * 255.0f));
  };

  for (int ri = 0; ri < tiles_h; ++ri) {
    const int y = spec.rows[static_cast<size_t>(ri)];
    Rng rng(seed + 0x9e3779b9ull * static_cast<uint64_t>(y + 1));
    TrainingPair pair = make_pair_for_label(vol, crop, rng, n_states, SeverityLabel(y));

    for (int ci = 0; ci < tiles_w; ++ci) {
      ImageSlice tile;
      switch (spec.columns[static_cast<size_t>(ci)]) {
        case PanelColumn::Corrupted: tile = pair.corrupted; break;
        case PanelColumn::Reference: tile = pair.clean; break;
        case PanelColumn::Corrected:
          tile = correct_image(vq_model, prior_top, prior_bottom, pair.corrupted, y,
                               CorrectMode::Direct, 0.0, rmode, rng);
          break;
        case PanelColumn::CorrectedRearranged:
          tile = correct_image(vq_model, prior_top, prior_bottom, pair.corrupted, y,
                               CorrectMode::Rearranged, temperature, rmode, rng);
          break;
      }
      const int r0 = ri * (crop + kSep), c0 = ci * (crop + kSep);
      for (int r = 0; r < crop; ++r)
        for (int c = 0; c < crop; ++c)
          canvas[static_cast<size_t>(r0 + r) * pw + (c0 + c)] = to_u8(tile.at(r, c));
    }
  }
  png::write_gray8(spec.out_path, pw, ph, canvas);
}

void eval_csv(const std::string& out_path, nets::VQModel<float>& vq_model,
              prior::PriorNet<float>* prior_top, prior::PriorNet<float>* prior_bottom,
              const ImageVolume& vol, int count, int crop, int n_states, uint64_t seed,
              bool rearranged, double temperature) {
  if (count < 1) throw std::invalid_argument("eval: count must be >= 1");
  std::ostringstream os;
  os << "index,y,psnr_corrupted,ssim_corrupted,psnr_corrected,ssim_corrected";
  if (rearranged) os << ",psnr_rearranged,ssim_rearranged";
  os << "\n";

  const int ncols = rearranged ? 6 : 4;
  std::vector<double> sums(static_cast<size_t>(ncols) + 1, 0.0);

  for (int i = 0; i < count; ++i) {
    Rng rng(seed + static_cast<uint64_t>(i));
    TrainingPair pair = make_training_pair(vol, crop, rng, n_states);
    std::vector<double> cols;
    cols.push_back(metrics::psnr(pair.corrupted, pair.clean, 1.0));
    cols.push_back(metrics::ssim(pair.corrupted, pair.clean));
    ImageSlice direct = correct_image(vq_model, prior_top, prior_bottom, pair.corrupted,
                                      pair.label.value, CorrectMode::Direct, 0.0,
                                      prior::RearrangeMode::Regenerate, rng);
    cols.push_back(metrics::psnr(direct, pair.clean, 1.0));
    cols.push_back(metrics::ssim(direct, pair.clean));
    if (rearranged) {
      ImageSlice re = correct_image(vq_model, prior_top, prior_bottom, pair.corrupted,
                                    pair.label.value, CorrectMode::Rearranged, temperature,
                                    prior::RearrangeMode::Regenerate, rng);
      cols.push_back(metrics::psnr(re, pair.clean, 1.0));
      cols.push_back(metrics::ssim(re, pair.clean));
    }

    os << i << "," << pair.label.value;
    sums[0] += pair.label.value;
    for (size_t c = 0; c < cols.size(); ++c) {
      os << "," << fmt17(cols[c]);
      sums[c + 1] += cols[c];
    }
    os << "\n";
  }

  os << "mean," << fmt17(sums[0] / count);
  for (int c = 0; c < ncols; ++c) os << "," << fmt17(sums[static_cast<size_t>(c) + 1] / count);
  os << "\n";
  write_text(out_path, os.str());
}

}  // namespace moco::pipeline
