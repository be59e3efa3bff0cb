#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "skinseg/dataset.hpp"
#include "skinseg/losses.hpp"
#include "skinseg/network.hpp"

namespace skinseg {

struct TrainConfig {
  real learning_rate = 1e-3;
  real beta1 = 0.9;
  real beta2 = 0.999;
  int batch_size = 8;
  int stage1_epochs = 10;
  int finetune_epochs = 5;
  bool grad_stop = true;
  bool mutual_guidance = true;
  bool from_scratch = false;  // skip pretraining; run two-stage from epoch 0
  bool use_augment = true;
  std::uint64_t seed = 1;
  LossConfig loss;
  AugmentConfig augment;

  void validate() const;
};

class Adam {
 public:
  Adam(real lr, real beta1 = 0.9, real beta2 = 0.999, real eps = 1e-8)
      : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {}

  void step(const std::vector<ad::Param*>& params);

 private:
  struct Slot {
    Tensor m, v;
  };
  real lr_, b1_, b2_, eps_;
  long t_ = 0;
  std::unordered_map<ad::Param*, Slot> state_;
};

// Trusted stage-2 guidance: ground truth where the flag grants it, the
// crossed stage-1 output otherwise. Returns (G'_skin, G'_body).
std::pair<Tensor, Tensor> select_guidance(const Sample& sample, const Tensor& o_skin,
                                          const Tensor& o_body);

// Single-sample total loss over a completed trace; stage-2 terms are
// included exactly when the trace carries stage-2 outputs.
LossBreakdown total_loss(const ForwardTrace& trace, const Sample& sample, const Image& image,
                         const LossConfig& cfg);

struct EpochRecord {
  int epoch = 0;
  std::string phase;  // "stage1" | "finetune"
  real ce = 0, crf = 0, wce = 0, total = 0;
  real val_skin_iou = 0, val_body_iou = 0;
};

std::string epoch_record_jsonl(const EpochRecord& r);

struct ValMetrics {
  real skin_iou = 0, body_iou = 0;
  real skin_precision = 0, skin_recall = 0;
  int skin_n = 0, body_n = 0;
};

// Eval-mode validation pass; two_stage selects which outputs count as the
// operating prediction.
ValMetrics validate_model(Model& model, const std::vector<Sample>& val, bool two_stage,
                          real threshold = 0.5, int batch_size = 8);

// Fraction of validation pixels predicted skin (>0.5) but not body (<0.5);
// the consistency the weighted cross-output loss is meant to suppress.
real containment_violation_fraction(Model& model, const std::vector<Sample>& val, bool two_stage,
                                    int batch_size = 8);

struct TrainResult {
  std::vector<EpochRecord> history;
  real final_skin_iou = 0;
  real final_body_iou = 0;
  std::string final_phase;
};

// Two-phase optimization: stage-1 pretraining with the configured initial
// guidance signals, then two-stage finetuning with trusted guidance and
// optional gradient stopping. mutual_guidance=false keeps every epoch in
// stage 1; from_scratch=true makes every epoch two-stage. on_phase_end is
// invoked once when the stage-1 phase hands over to finetuning.
TrainResult train(Model& model, const std::vector<Sample>& train_samples,
                  const std::vector<Sample>& val_samples, const TrainConfig& cfg,
                  std::ostream* log = nullptr,
                  const std::function<void(Model&, int)>& on_phase_end = {});

std::vector<Sample> load_all_samples(const Dataset& ds, int working_size,
                                     bool strict_containment = false);

}  // namespace skinseg
