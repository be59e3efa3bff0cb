#pragma once

#include <string>
#include <vector>

#include "skinseg/network.hpp"
#include "skinseg/training.hpp"

namespace skinseg {

// Full experiment configuration: every knob has a documented default, the
// resolved form is serialized into each run directory, and a run is
// reproducible from that file plus its seed.
struct RunConfig {
  ModelConfig model;
  TrainConfig training;
  real eval_threshold = 0.5;
  std::vector<real> sweep_thresholds;  // default 0.05 .. 0.95 step 0.05

  RunConfig();
};

std::string run_config_to_json(const RunConfig& cfg);
RunConfig run_config_from_json(const std::string& text);

// Applies a "section.key=value" override (e.g. "training.seed=7",
// "loss.lambda1=0.01", "model.input_size=32").
void apply_override(RunConfig& cfg, const std::string& assignment);

}  // namespace skinseg
