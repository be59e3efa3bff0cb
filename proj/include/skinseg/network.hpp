#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "skinseg/graph.hpp"
#include "skinseg/image_io.hpp"
#include "skinseg/rng.hpp"
#include "skinseg/tensor.hpp"

namespace skinseg {

struct ModelConfig {
  int input_size = 64;      // 512 matches the full-scale setup
  int base_channels = 16;   // 64 at full scale
  int depth = 4;            // down/up blocks
  real guidance_channel_ratio = 0.5;
  std::string initial_guidance_skin = "zero";  // "zero" or a raster path
  std::string initial_guidance_body = "zero";

  int guidance_base() const {
    const int g = static_cast<int>(base_channels * guidance_channel_ratio + 0.5);
    return g < 1 ? 1 : g;
  }
  int bottleneck_spatial() const { return input_size >> depth; }
  int bottleneck_channels() const { return base_channels << depth; }
  int guidance_bottleneck_channels() const { return guidance_base() << depth; }

  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

enum class Branch { skin, body };

// Shared-encoder features: the bottleneck embedding plus one skip feature
// per resolution level above it.
struct FeatureMap {
  Tensor bottleneck;          // {1, C, s, s}
  std::vector<Tensor> skips;  // level 0 (full res) .. depth-1
};

// Outputs of a two-stage mutually guided pass on one image.
struct ForwardTrace {
  Tensor o_skin, o_body;      // stage 1, {H,W}
  Tensor o2_skin, o2_body;    // stage 2, {H,W}
  Tensor g2_skin, g2_body;    // guidance actually consumed by stage 2
  bool grad_stop = false;
};

struct CheckpointMeta {
  int epoch = 0;
  std::string phase = "stage1";  // "stage1" | "finetune"
  std::uint64_t seed = 0;
  std::map<std::string, real> metrics;
};

// Dual-decoder segmentation network with a shared image encoder, a
// half-width guidance encoder fused at the bottleneck, and per-branch
// decoders whose weights are shared between the two stages.
class Model {
 public:
  explicit Model(ModelConfig cfg);
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  const ModelConfig& config() const { return cfg_; }

  void init_params(Rng& rng);
  void zero_grads();
  void freeze_encoder();

  std::vector<ad::Param*>& params() { return params_; }  // trainable weights, fixed order
  const std::vector<std::pair<std::string, Tensor*>>& state() const { return state_; }

  void set_initial_guidance(Tensor e_skin, Tensor e_body);
  const Tensor& initial_guidance_skin() const { return e_skin_; }
  const Tensor& initial_guidance_body() const { return e_body_; }

  // --- graph builders (batched, {N,3,H,W} image input) ---
  struct FeatNodes {
    ad::NodeP bottleneck;
    std::vector<ad::NodeP> skips;
  };
  struct Stage1Nodes {
    FeatNodes feat;
    ad::NodeP o_skin, o_body;
  };
  struct TwoStageNodes {
    Stage1Nodes s1;
    ad::NodeP o2_skin, o2_body;
    ad::NodeP g2_skin, g2_body;
  };

  FeatNodes encode_nodes(ad::Graph& g, ad::NodeP image);
  ad::NodeP decode_nodes(ad::Graph& g, Branch branch, const FeatNodes& feat, ad::NodeP guidance);
  // guidance_into_skin/body default to the configured initial signals
  // (cross-assigned: the skin decoder sees the body-side signal).
  Stage1Nodes forward_stage1_nodes(ad::Graph& g, ad::NodeP image,
                                   ad::NodeP guidance_into_skin = nullptr,
                                   ad::NodeP guidance_into_body = nullptr);
  // stage-2 guidance defaults to the crossed stage-1 outputs; explicit
  // nodes override per branch. grad_stop detaches the default guidance.
  TwoStageNodes forward_two_stage_nodes(ad::Graph& g, ad::NodeP image,
                                        ad::NodeP g2_skin = nullptr, ad::NodeP g2_body = nullptr,
                                        bool grad_stop = true);
  // Stage-2 continuation over an existing stage-1 result with explicit
  // guidance nodes (used when guidance is assembled per sample).
  TwoStageNodes forward_two_stage_from(ad::Graph& g, const Stage1Nodes& s1, ad::NodeP g2_skin,
                                       ad::NodeP g2_body);

  // --- value-level single-image API (eval-mode statistics, pure) ---
  FeatureMap encode(const Image& img);
  Tensor decode(Branch branch, const FeatureMap& feat, const Tensor& guidance);
  std::pair<Tensor, Tensor> forward_stage1(
      const Image& img, std::optional<std::pair<Tensor, Tensor>> initial_guidance = {});
  ForwardTrace forward_two_stage(const Image& img, std::optional<Tensor> override_g2_skin = {},
                                 std::optional<Tensor> override_g2_body = {}, bool grad_stop = true);

  // Batched eval-mode forward; returns {N,1,H,W} maps. Single-stage when
  // two_stage is false (stage-2 outputs empty).
  struct BatchOut {
    Tensor o_skin, o_body, o2_skin, o2_body;
  };
  BatchOut forward_batch(const Tensor& images, bool two_stage);

  // Expands a {H,W} map to a {N,1,H,W} constant.
  static Tensor expand_guidance(const Tensor& map, int n);

 private:
  struct ConvBn {
    ad::Param w, gamma, beta;
    ad::BatchNormState bn;
  };
  struct EncoderP {
    std::vector<std::array<ConvBn, 2>> levels;  // depth+1 entries
  };
  struct DecoderP {
    struct Up {
      ConvBn reduce, c0, c1;
    };
    std::vector<Up> ups;
    ad::Param head_w, head_b;
  };

  ConvBn make_convbn(const std::string& name, int cin, int cout);
  EncoderP make_encoder(const std::string& prefix, int in_ch, int base);
  DecoderP make_decoder(const std::string& prefix);
  FeatNodes run_encoder(ad::Graph& g, EncoderP& enc, ad::NodeP x, bool keep_skips);
  ad::NodeP run_block(ad::Graph& g, ConvBn& b, ad::NodeP x);
  void register_params();
  ad::NodeP default_stage1_guidance(ad::Graph& g, const Tensor& map, int n);

  ModelConfig cfg_;
  EncoderP encoder_, guidance_encoder_;
  DecoderP dec_skin_, dec_body_;
  Tensor e_skin_, e_body_;  // initial guidance signals, {H,W}
  std::vector<ad::Param*> params_;
  std::vector<std::pair<std::string, Tensor*>> state_;
};

// Checkpoint container: plain-text index (config, epoch, seed, metrics,
// tensor names/shapes) followed by raw little-endian float32 data.
void save_checkpoint(const std::filesystem::path& path, const Model& model,
                     const CheckpointMeta& meta);
std::unique_ptr<Model> load_checkpoint(const std::filesystem::path& path, CheckpointMeta* meta);

std::string model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const std::string& text);

}  // namespace skinseg
