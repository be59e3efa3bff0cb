#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "skinseg/image_io.hpp"
#include "skinseg/rng.hpp"

namespace skinseg {

// Per-sample mask availability; acts as the loss switch during training.
struct LabelFlags {
  bool skin = false;
  bool body = false;
};

struct SampleDesc {
  std::string id;
  std::string image_path;            // relative to the manifest directory
  std::string skin_mask_path;        // empty when absent
  std::string body_mask_path;
  LabelFlags flags;
};

struct Dataset {
  std::filesystem::path root;
  std::vector<SampleDesc> items;

  std::vector<int> indices_with_skin() const;
  std::vector<int> indices_with_body() const;
};

// Manifest: UTF-8 lines "id image_path skin_mask_path body_mask_path",
// '-' marking an absent mask, '#' starting a comment. Paths are relative
// to the manifest's directory. Referenced files must exist.
Dataset load_manifest(const std::filesystem::path& manifest_path);

struct Sample {
  std::string id;
  Image image;
  std::optional<Mask> skin_mask;
  std::optional<Mask> body_mask;
  LabelFlags flags;

  // Pixels marked skin but not body (0 when either mask is missing).
  std::size_t containment_violations() const;
};

// Decodes, normalizes to [0,1], binarizes masks at >=128 and resizes
// everything to working_size (bilinear image, nearest masks). With
// strict_containment, any skin-outside-body pixel is an error.
Sample load_sample(const Dataset& ds, const SampleDesc& desc, int working_size,
                   bool strict_containment = false);

struct AugmentConfig {
  real flip_probability = 0.5;
  real scale_min = 1.0;
  real scale_max = 1.25;
  int crop_size = 64;
  std::uint64_t seed = 0;

  void validate() const;
};

// The random choices of one augmentation, separated out so tests can apply
// a fixed transform.
struct AugmentDraw {
  bool flip = false;
  real scale = 1.0;
  int off_y = 0, off_x = 0;
};

AugmentDraw draw_augment(const AugmentConfig& cfg, int src_size, Rng& rng);
Sample apply_augment(const Sample& s, const AugmentDraw& d, int crop_size);
Sample augment(const Sample& s, const AugmentConfig& cfg, Rng& rng);

// Strictly alternating batch stream: even batches are skin-labeled, odd
// batches body-labeled. Each pool is shuffled per pass and cycled
// independently when exhausted, so unbalanced pools are supported.
class BatchScheduler {
 public:
  BatchScheduler(std::vector<int> skin_pool, std::vector<int> body_pool, int batch_size,
                 std::uint64_t seed);

  // Returns sample indices for the next batch; is_skin reports the parity.
  std::vector<int> next(bool& is_skin);
  long batches_emitted() const { return emitted_; }

 private:
  struct Pool {
    std::vector<int> ids;
    std::vector<int> order;
    std::size_t cursor = 0;
    void reshuffle(Rng& rng);
    int take(Rng& rng);
  };
  Pool skin_, body_;
  int batch_size_;
  Rng rng_;
  long emitted_ = 0;
};

}  // namespace skinseg
