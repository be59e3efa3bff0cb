#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "skinseg/image_io.hpp"
#include "skinseg/tensor.hpp"

namespace skinseg {

Mask binarize(const Tensor& prob, real threshold);  // pixel = 1 iff p > threshold

// Empty-mask conventions: iou(empty, empty) = 1, precision of an empty
// prediction = 1, recall of an empty ground truth = 1.
real iou(const Mask& pred, const Mask& gt);
std::pair<real, real> precision_recall(const Mask& pred, const Mask& gt);

// Shared-tie Top-1: every method attaining a sample's maximum IoU gets the
// win. Input is per-method rows over an identical sample list; result in
// percent.
std::vector<real> iou_top1(const std::vector<std::vector<real>>& per_sample_ious);

struct CurveRow {
  real threshold = 0;
  real mean_iou = 0;
  real mean_precision = 0;
  real mean_recall = 0;
};

std::vector<CurveRow> sweep(const std::vector<Tensor>& probs, const std::vector<Mask>& gts,
                            const std::vector<real>& thresholds);

struct SampleMetrics {
  std::string id;
  real iou = 0, precision = 0, recall = 0;
};

struct TaskReport {
  std::vector<SampleMetrics> per_sample;
  real mean_iou = 0, mean_precision = 0, mean_recall = 0;
  std::vector<CurveRow> curve;

  void finalize();  // recompute aggregates from per_sample
};

struct EvalReport {
  std::string method;
  std::string dataset;
  real threshold = 0.5;
  std::string top1_tie_rule = "shared";
  std::optional<TaskReport> skin;
  std::optional<TaskReport> body;
};

// One prediction set: per-sample probability maps keyed by sample id.
using PredictionMap = std::map<std::string, Tensor>;

struct LabeledSet {
  std::vector<std::string> ids;
  std::map<std::string, Mask> masks;
};

// Computes per-sample and aggregate metrics at `threshold` plus a sweep
// over `curve_thresholds`. Every id in `set` must have a prediction.
TaskReport evaluate_task(const PredictionMap& preds, const LabeledSet& set, real threshold,
                         const std::vector<real>& curve_thresholds);

std::string report_to_json(const EvalReport& r);
EvalReport report_from_json(const std::string& text);
void save_report(const std::filesystem::path& path, const EvalReport& r);
EvalReport load_report(const std::filesystem::path& path);

void save_curve_csv(const std::filesystem::path& path, const std::vector<CurveRow>& curve);

// Comparison grid: one row per method with mean metrics and the Top-1
// share computed over the intersection-free common sample list.
struct ComparisonRow {
  std::string method;
  real mean_iou = 0, top1 = 0, mean_precision = 0, mean_recall = 0;
};

std::vector<ComparisonRow> compare_reports(const std::vector<EvalReport>& reports, bool body_task);
std::string comparison_to_text(const std::vector<ComparisonRow>& rows, const std::string& task);

}  // namespace skinseg
