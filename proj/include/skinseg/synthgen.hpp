#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "skinseg/image_io.hpp"
#include "skinseg/rng.hpp"

namespace skinseg {

using Rgb = std::array<real, 3>;

// Procedural portrait-like scenes: ellipse figures with exact silhouette
// (body) and exposed-skin ground truth, skin-colored clothing and
// background distractors so that color alone is ambiguous.
struct SceneParams {
  int image_size = 64;
  int min_figures = 1;
  int max_figures = 3;
  std::vector<Rgb> skin_tone_palette = {
      {0.95, 0.80, 0.68}, {0.87, 0.68, 0.55}, {0.76, 0.57, 0.44}, {0.55, 0.40, 0.30}};
  // Deliberately overlaps the skin palette so clothing is not separable by
  // color alone.
  std::vector<Rgb> clothing_palette = {
      {0.92, 0.78, 0.66}, {0.80, 0.62, 0.50}, {0.25, 0.35, 0.60}, {0.70, 0.25, 0.25},
      {0.30, 0.55, 0.35}};
  real background_distractor_rate = 0.5;  // fraction of the distractor budget used
  real lighting_tint_strength = 0.1;
  real pixel_noise = 0.03;
  std::uint64_t seed = 0;

  void validate() const;
};

struct EllipseSpec {
  real cy, cx, ry, rx;
};

// Scene metadata for programmatic inspection.
struct SceneInfo {
  int n_figures = 0;
  std::vector<EllipseSpec> distractors;
  std::vector<int> figure_tone;  // palette index per figure
};

struct Scene {
  Image image;
  Mask skin;
  Mask body;
  SceneInfo info;
};

Scene generate_scene(const SceneParams& params, Rng& rng);

struct GenerateSummary {
  int train_skin = 0;
  int train_body = 0;
  int validation = 0;
  std::filesystem::path train_manifest;
  std::filesystem::path val_manifest;
};

// Writes count training samples (a skin_label_fraction of which keep only
// the skin mask, the rest only the body mask), plus val_count dual-labeled
// validation samples, along with manifests. Fully determined by params.seed.
GenerateSummary generate_dataset(const SceneParams& params, int count, real skin_label_fraction,
                                 int val_count, const std::filesystem::path& out_dir);

}  // namespace skinseg
