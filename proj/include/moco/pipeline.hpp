#pragma once

#include <optional>
#include <string>
#include <vector>

#include "moco/checkpoint.hpp"
#include "moco/config.hpp"
#include "moco/motion_sim.hpp"
#include "moco/nets.hpp"
#include "moco/prior.hpp"

namespace moco::pipeline {

// ---- simulated pair files: <stem>.json/.blob plus <stem>.meta.json ---------
void save_pair(const std::string& stem, const TrainingPair& pair, uint64_t seed);
TrainingPair load_pair(const std::string& stem);

nlohmann::json spec_to_json(const MotionSpec& spec);
MotionSpec spec_from_json(const nlohmann::json& j);

// like make_training_pair but with a caller-chosen severity
TrainingPair make_pair_for_label(const ImageVolume& vol, int crop, Rng& rng, int n_states,
                                 SeverityLabel y);

// ---- model persistence ------------------------------------------------------
void save_vq_model(const std::string& stem, const nets::VQModel<float>& model,
                   const cfg::AppConfig& app, uint64_t seed);
std::pair<nets::VQModel<float>, cfg::AppConfig> load_vq_model(const std::string& stem);

void save_priors(const std::string& stem, const prior::PriorNet<float>& top,
                 const prior::PriorNet<float>& bottom, const cfg::AppConfig& app, uint64_t seed);
// validates compatibility against the autoencoder config (K must match)
std::pair<prior::PriorNet<float>, prior::PriorNet<float>> load_priors(
    const std::string& stem, const cfg::AppConfig& vq_app);

// ---- correction -------------------------------------------------------------
enum class CorrectMode { Direct, Rearranged };

struct CorrectionGrids {
  vq::CodeGrid enc_top, enc_bottom;    // from the encoder
  vq::CodeGrid used_top, used_bottom;  // what the decoder consumed
};

ImageSlice correct_image(nets::VQModel<float>& vq_model, prior::PriorNet<float>* prior_top,
                         prior::PriorNet<float>* prior_bottom, const ImageSlice& corrupted, int y,
                         CorrectMode mode, double temperature, prior::RearrangeMode rmode,
                         Rng& rng, CorrectionGrids* grids_out = nullptr);

// ---- figure panels ----------------------------------------------------------
enum class PanelColumn { Corrupted, Corrected, CorrectedRearranged, Reference };

PanelColumn panel_column_from_name(const std::string& name);

struct PanelSpec {
  std::vector<int> rows = {2, 5, 8};
  std::vector<PanelColumn> columns = {PanelColumn::Corrupted, PanelColumn::Corrected,
                                      PanelColumn::CorrectedRearranged, PanelColumn::Reference};
  std::string out_path;
};

void emit_panel(const PanelSpec& spec, nets::VQModel<float>& vq_model,
                prior::PriorNet<float>* prior_top, prior::PriorNet<float>* prior_bottom,
                const ImageVolume& vol, int crop, int n_states, double temperature,
                prior::RearrangeMode rmode, uint64_t seed);

// ---- metric table -----------------------------------------------------------
// CSV with one row per sample and a trailing mean row
void eval_csv(const std::string& out_path, nets::VQModel<float>& vq_model,
              prior::PriorNet<float>* prior_top, prior::PriorNet<float>* prior_bottom,
              const ImageVolume& vol, int count, int crop, int n_states, uint64_t seed,
              bool rearranged, double temperature);

}  // namespace moco::pipeline
