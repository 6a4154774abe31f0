#pragma once

#include "lively/beats.hpp"
#include "lively/diffusion.hpp"
#include "lively/feature_ae.hpp"
#include "lively/rag.hpp"
#include "lively/sag.hpp"
#include "lively/synth.hpp"

#include <json.hpp>

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace lively {

struct DiffusionSettings {
  std::string schedule = "linear";  // or "cosine"
  int steps = 1000;
  double beta_start = 1e-4;
  double beta_end = 0.02;
  int ddim_steps = 100;
  double eta = 0.0;
  double w = 1.0;
  int K = 20;

  diffusion::NoiseSchedule make_schedule() const;
  rag::GenerateOptions generate_options() const { return {w, ddim_steps, eta}; }
};

struct MetricSettings {
  double sigma_bc = metrics::kBeatSigma;
  int n_pairs = 500;
  metrics::FeatureAeConfig ae;
};

// Every field has a desk-scale default; see RunConfig::defaults().
struct RunConfig {
  synth::SynthConfig data;
  rag::RagConfig rag;
  sag::SagConfig sag;
  DiffusionSettings diffusion;
  MetricSettings metrics;
  rag::RagTrainOptions train_rag;
  sag::SagTrainOptions train_sag;
  metrics::AeTrainOptions train_ae;
  std::optional<std::uint64_t> seed;

  static RunConfig defaults();

  void validate() const;
  nlohmann::json to_json() const;
  // Unknown keys anywhere throw BadConfig.
  static RunConfig from_json(const nlohmann::json& j);

  // Throws if seed is unset.
  std::uint64_t require_seed() const;
};

// "a.b.c=value"; value parses as JSON and falls back to a plain string.
void apply_override(nlohmann::json& doc, const std::string& assignment);

// Defaults, then the file (if any), then the overrides in order.
RunConfig load_run_config(const std::optional<std::filesystem::path>& file, const std::vector<std::string>& overrides);

}  // namespace lively
