#include "skinseg/training.hpp"

#include <json.hpp>

#include <cmath>
#include <ostream>

#include "skinseg/errors.hpp"
#include "skinseg/evaluation.hpp"

namespace skinseg {

using nlohmann::json;

void TrainConfig::validate() const {
  if (learning_rate < 0) throw ValidationError("learning_rate must be >= 0");
  if (batch_size < 1) throw ValidationError("batch_size must be positive");
  if (stage1_epochs < 0 || finetune_epochs < 0)
    throw ValidationError("epoch counts must be non-negative");
  if (stage1_epochs + finetune_epochs < 1) throw ValidationError("need at least one epoch");
  loss.validate();
  augment.validate();
}

void Adam::step(const std::vector<ad::Param*>& params) {
  ++t_;
  const real c1 = 1.0 - std::pow(b1_, static_cast<real>(t_));
  const real c2 = 1.0 - std::pow(b2_, static_cast<real>(t_));
  for (ad::Param* p : params) {
    if (!p->trainable) continue;
    auto& slot = state_[p];
    if (slot.m.numel() != p->value.numel()) {
      slot.m = Tensor(p->value.shape);
      slot.v = Tensor(p->value.shape);
    }
    for (std::size_t i = 0; i < p->value.numel(); ++i) {
      const real g = p->grad[i];
      slot.m[i] = b1_ * slot.m[i] + (1 - b1_) * g;
      slot.v[i] = b2_ * slot.v[i] + (1 - b2_) * g * g;
      const real mhat = slot.m[i] / c1;
      const real vhat = slot.v[i] / c2;
      p->value[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
    }
  }
}

std::pair<Tensor, Tensor> select_guidance(const Sample& sample, const Tensor& o_skin,
                                          const Tensor& o_body) {
  if (sample.flags.skin && !sample.skin_mask)
    throw ValidationError("sample '" + sample.id + "': skin flag set but skin mask missing");
  if (sample.flags.body && !sample.body_mask)
    throw ValidationError("sample '" + sample.id + "': body flag set but body mask missing");
  Tensor g_skin = sample.flags.body ? sample.body_mask->to_tensor() : o_body;
  Tensor g_body = sample.flags.skin ? sample.skin_mask->to_tensor() : o_skin;
  return {std::move(g_skin), std::move(g_body)};
}

LossBreakdown total_loss(const ForwardTrace& trace, const Sample& sample, const Image& image,
                         const LossConfig& cfg) {
  if (sample.flags.skin && !sample.skin_mask)
    throw ValidationError("sample '" + sample.id + "': skin flag set but skin mask missing");
  if (sample.flags.body && !sample.body_mask)
    throw ValidationError("sample '" + sample.id + "': body flag set but body mask missing");
  const int h = trace.o_skin.dim(0), w = trace.o_skin.dim(1);
  if (image.h != h || image.w != w)
    throw ValidationError("total_loss: trace and image sizes differ");

  auto as_batch = [&](const Tensor& map) {
    Tensor t({1, 1, h, w});
    std::copy(map.data.begin(), map.data.end(), t.data.begin());
    return t;
  };
  BatchTargets targets;
  targets.skin_flags = Tensor({1}, sample.flags.skin ? 1.0 : 0.0);
  targets.body_flags = Tensor({1}, sample.flags.body ? 1.0 : 0.0);
  targets.skin_masks =
      sample.skin_mask ? as_batch(sample.skin_mask->to_tensor()) : Tensor({1, 1, h, w});
  targets.body_masks =
      sample.body_mask ? as_batch(sample.body_mask->to_tensor()) : Tensor({1, 1, h, w});
  auto affs = std::make_shared<std::vector<Affinity>>();
  affs->push_back(build_affinity(image, cfg));
  targets.affinities = affs;

  ad::Graph g;
  TraceNodes nodes;
  nodes.o_skin = g.constant(as_batch(trace.o_skin));
  nodes.o_body = g.constant(as_batch(trace.o_body));
  const bool two_stage = trace.o2_skin.numel() > 0;
  if (two_stage) {
    nodes.o2_skin = g.constant(as_batch(trace.o2_skin));
    nodes.o2_body = g.constant(as_batch(trace.o2_body));
  }
  return build_total_loss(g, nodes, targets, cfg).breakdown;
}

std::string epoch_record_jsonl(const EpochRecord& r) {
  json j{{"epoch", r.epoch},     {"phase", r.phase}, {"ce", r.ce},
         {"crf", r.crf},         {"wce", r.wce},     {"total", r.total},
         {"val_skin_iou", r.val_skin_iou}, {"val_body_iou", r.val_body_iou}};
  return j.dump();
}

namespace {

struct Batch {
  Tensor images;      // {N,3,S,S}
  Tensor skin_masks;  // {N,1,S,S}
  Tensor body_masks;
  Tensor skin_flags;  // {N}
  Tensor body_flags;
  std::shared_ptr<std::vector<Affinity>> affinities;
};

Batch assemble_batch(const std::vector<Sample>& samples, const std::vector<int>& idx,
                     const TrainConfig& cfg, int input_size, long global_iter) {
  const int n = static_cast<int>(idx.size());
  Batch b;
  b.images = Tensor({n, 3, input_size, input_size});
  b.skin_masks = Tensor({n, 1, input_size, input_size});
  b.body_masks = Tensor({n, 1, input_size, input_size});
  b.skin_flags = Tensor({n});
  b.body_flags = Tensor({n});
  b.affinities = std::make_shared<std::vector<Affinity>>();
  const std::size_t plane = static_cast<std::size_t>(input_size) * input_size;
  for (int i = 0; i < n; ++i) {
    const Sample& src = samples[static_cast<std::size_t>(idx[static_cast<std::size_t>(i)])];
    Sample s;
    if (cfg.use_augment) {
      Rng rng(Rng::mix(Rng::mix(cfg.seed, static_cast<std::uint64_t>(global_iter)),
                       static_cast<std::uint64_t>(i)));
      s = augment(src, cfg.augment, rng);
    } else {
      s = src;
    }
    std::copy(s.image.px.begin(), s.image.px.end(),
              b.images.data.begin() + static_cast<std::size_t>(i) * 3 * plane);
    if (s.skin_mask) {
      const Tensor t = s.skin_mask->to_tensor();
      std::copy(t.data.begin(), t.data.end(),
                b.skin_masks.data.begin() + static_cast<std::size_t>(i) * plane);
    }
    if (s.body_mask) {
      const Tensor t = s.body_mask->to_tensor();
      std::copy(t.data.begin(), t.data.end(),
                b.body_masks.data.begin() + static_cast<std::size_t>(i) * plane);
    }
    b.skin_flags[static_cast<std::size_t>(i)] = s.flags.skin ? 1.0 : 0.0;
    b.body_flags[static_cast<std::size_t>(i)] = s.flags.body ? 1.0 : 0.0;
    b.affinities->push_back(build_affinity(s.image, cfg.loss));
  }
  return b;
}

Tensor slice_row(const Tensor& t, int i) {
  const int h = t.dim(2), w = t.dim(3);
  Tensor out({h, w});
  std::copy(t.ptr() + static_cast<std::size_t>(i) * h * w,
            t.ptr() + static_cast<std::size_t>(i + 1) * h * w, out.ptr());
  return out;
}

}  // namespace

ValMetrics validate_model(Model& model, const std::vector<Sample>& val, bool two_stage,
                          real threshold, int batch_size) {
  ValMetrics out;
  const int input = model.config().input_size;
  const std::size_t plane = static_cast<std::size_t>(input) * input;
  for (std::size_t start = 0; start < val.size(); start += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(val.size(), start + static_cast<std::size_t>(batch_size));
    const int n = static_cast<int>(end - start);
    Tensor images({n, 3, input, input});
    for (int i = 0; i < n; ++i) {
      const Sample& s = val[start + static_cast<std::size_t>(i)];
      if (s.image.h != input || s.image.w != input)
        throw ValidationError("validation sample size differs from model input");
      std::copy(s.image.px.begin(), s.image.px.end(),
                images.data.begin() + static_cast<std::size_t>(i) * 3 * plane);
    }
    auto fwd = model.forward_batch(images, two_stage);
    const Tensor& skin_map = two_stage ? fwd.o2_skin : fwd.o_skin;
    const Tensor& body_map = two_stage ? fwd.o2_body : fwd.o_body;
    for (int i = 0; i < n; ++i) {
      const Sample& s = val[start + static_cast<std::size_t>(i)];
      if (s.skin_mask) {
        const Mask pred = binarize(slice_row(skin_map, i), threshold);
        out.skin_iou += iou(pred, *s.skin_mask);
        const auto [p, r] = precision_recall(pred, *s.skin_mask);
        out.skin_precision += p;
        out.skin_recall += r;
        ++out.skin_n;
      }
      if (s.body_mask) {
        const Mask pred = binarize(slice_row(body_map, i), threshold);
        out.body_iou += iou(pred, *s.body_mask);
        ++out.body_n;
      }
    }
  }
  if (out.skin_n) {
    out.skin_iou /= out.skin_n;
    out.skin_precision /= out.skin_n;
    out.skin_recall /= out.skin_n;
  }
  if (out.body_n) out.body_iou /= out.body_n;
  return out;
}

real containment_violation_fraction(Model& model, const std::vector<Sample>& val, bool two_stage,
                                    int batch_size) {
  const int input = model.config().input_size;
  const std::size_t plane = static_cast<std::size_t>(input) * input;
  std::size_t violations = 0, total = 0;
  for (std::size_t start = 0; start < val.size(); start += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(val.size(), start + static_cast<std::size_t>(batch_size));
    const int n = static_cast<int>(end - start);
    Tensor images({n, 3, input, input});
    for (int i = 0; i < n; ++i)
      std::copy(val[start + static_cast<std::size_t>(i)].image.px.begin(),
                val[start + static_cast<std::size_t>(i)].image.px.end(),
                images.data.begin() + static_cast<std::size_t>(i) * 3 * plane);
    auto fwd = model.forward_batch(images, two_stage);
    const Tensor& skin_map = two_stage ? fwd.o2_skin : fwd.o_skin;
    const Tensor& body_map = two_stage ? fwd.o2_body : fwd.o_body;
    for (std::size_t i = 0; i < skin_map.numel(); ++i) {
      violations += skin_map[i] > 0.5 && body_map[i] < 0.5 ? 1 : 0;
      ++total;
    }
  }
  return total ? static_cast<real>(violations) / static_cast<real>(total) : 0.0;
}

std::vector<Sample> load_all_samples(const Dataset& ds, int working_size, bool strict_containment) {
  std::vector<Sample> out;
  out.reserve(ds.items.size());
  for (const auto& desc : ds.items)
    out.push_back(load_sample(ds, desc, working_size, strict_containment));
  return out;
}

TrainResult train(Model& model, const std::vector<Sample>& train_samples,
                  const std::vector<Sample>& val_samples, const TrainConfig& cfg,
                  std::ostream* log, const std::function<void(Model&, int)>& on_phase_end) {
  cfg.validate();
  const int input = model.config().input_size;
  if (cfg.use_augment && cfg.augment.crop_size != input)
    throw ValidationError("augment crop_size must equal the model input size");
  for (const Sample& s : train_samples)
    if (s.image.h != input || s.image.w != input)
      throw ValidationError("training sample size differs from model input");

  std::vector<int> skin_pool, body_pool;
  for (std::size_t i = 0; i < train_samples.size(); ++i) {
    if (train_samples[i].flags.skin) skin_pool.push_back(static_cast<int>(i));
    if (train_samples[i].flags.body) body_pool.push_back(static_cast<int>(i));
  }
  BatchScheduler scheduler(skin_pool, body_pool, cfg.batch_size, Rng::mix(cfg.seed, 0x5c8ed));

  const int total_epochs = cfg.stage1_epochs + cfg.finetune_epochs;
  int stage1_end;  // first epoch index that runs two-stage
  if (!cfg.mutual_guidance)
    stage1_end = total_epochs;
  else if (cfg.from_scratch)
    stage1_end = 0;
  else
    stage1_end = cfg.stage1_epochs;

  const std::size_t larger = std::max(skin_pool.size(), body_pool.size());
  const long iters_per_epoch =
      2 * static_cast<long>((larger + static_cast<std::size_t>(cfg.batch_size) - 1) /
                            static_cast<std::size_t>(cfg.batch_size));

  Adam opt(cfg.learning_rate, cfg.beta1, cfg.beta2);
  TrainResult result;
  long global_iter = 0;
  for (int epoch = 0; epoch < total_epochs; ++epoch) {
    const bool two_stage = epoch >= stage1_end;
    const char* phase = two_stage ? "finetune" : "stage1";
    real sum_ce = 0, sum_crf = 0, sum_wce = 0, sum_total = 0;
    for (long it = 0; it < iters_per_epoch; ++it, ++global_iter) {
      bool is_skin = false;
      const std::vector<int> idx = scheduler.next(is_skin);
      Batch b = assemble_batch(train_samples, idx, cfg, input, global_iter);

      ad::Graph g;
      g.training = true;
      auto image = g.constant(b.images);
      TraceNodes trace;
      if (two_stage) {
        auto s1 = model.forward_stage1_nodes(g, image);
        // Trusted guidance per sample: ground truth where available,
        // otherwise the crossed stage-1 output (detached under grad_stop).
        ad::NodeP src_skin = cfg.grad_stop ? ad::detach(g, s1.o_body) : s1.o_body;
        ad::NodeP src_body = cfg.grad_stop ? ad::detach(g, s1.o_skin) : s1.o_skin;
        auto g2_skin = ad::mix_per_sample(g, src_skin, b.body_masks, b.body_flags);
        auto g2_body = ad::mix_per_sample(g, src_body, b.skin_masks, b.skin_flags);
        auto t = model.forward_two_stage_from(g, s1, g2_skin, g2_body);
        trace = {s1.o_skin, s1.o_body, t.o2_skin, t.o2_body};
      } else {
        auto s1 = model.forward_stage1_nodes(g, image);
        trace = {s1.o_skin, s1.o_body, nullptr, nullptr};
      }
      BatchTargets targets{b.skin_masks, b.body_masks, b.skin_flags, b.body_flags, b.affinities};
      auto loss = build_total_loss(g, trace, targets, cfg.loss);
      const std::string bad = loss.breakdown.first_non_finite();
      if (!bad.empty())
        throw RuntimeAbort("non-finite loss term " + bad + " at epoch " + std::to_string(epoch) +
                           " iteration " + std::to_string(it));
      model.zero_grads();
      g.backward(loss.node);
      opt.step(model.params());

      sum_ce += loss.breakdown.ce_sum();
      sum_crf += loss.breakdown.crf_sum();
      sum_wce += loss.breakdown.wce_sum();
      sum_total += loss.breakdown.total;
    }

    const ValMetrics vm = validate_model(model, val_samples, two_stage, 0.5, cfg.batch_size);
    EpochRecord rec;
    rec.epoch = epoch;
    rec.phase = phase;
    rec.ce = sum_ce / static_cast<real>(iters_per_epoch);
    rec.crf = sum_crf / static_cast<real>(iters_per_epoch);
    rec.wce = sum_wce / static_cast<real>(iters_per_epoch);
    rec.total = sum_total / static_cast<real>(iters_per_epoch);
    rec.val_skin_iou = vm.skin_iou;
    rec.val_body_iou = vm.body_iou;
    result.history.push_back(rec);
    result.final_skin_iou = vm.skin_iou;
    result.final_body_iou = vm.body_iou;
    result.final_phase = phase;
    if (log)
      (*log) << "epoch " << epoch << " [" << phase << "] total=" << rec.total
             << " val_skin_iou=" << rec.val_skin_iou << " val_body_iou=" << rec.val_body_iou
             << "\n";
    if (on_phase_end && !two_stage && epoch + 1 == stage1_end && stage1_end < total_epochs)
      on_phase_end(model, epoch);
  }
  return result;
}

}  // namespace skinseg
