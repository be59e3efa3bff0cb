#include "skinseg/evaluation.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "skinseg/errors.hpp"

namespace skinseg {

using nlohmann::json;

Mask binarize(const Tensor& prob, real threshold) {
  if (prob.shape.size() != 2) throw ValidationError("binarize: expected {H,W} map");
  if (threshold < 0 || threshold > 1) throw ValidationError("binarize: threshold must be in [0,1]");
  Mask m(prob.dim(0), prob.dim(1));
  for (std::size_t i = 0; i < prob.numel(); ++i) m.v[i] = prob[i] > threshold ? 1 : 0;
  return m;
}

real iou(const Mask& pred, const Mask& gt) {
  if (pred.h != gt.h || pred.w != gt.w) throw ValidationError("iou: shape mismatch");
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < pred.v.size(); ++i) {
    inter += pred.v[i] & gt.v[i];
    uni += pred.v[i] | gt.v[i];
  }
  if (uni == 0) return 1.0;
  return static_cast<real>(inter) / static_cast<real>(uni);
}

std::pair<real, real> precision_recall(const Mask& pred, const Mask& gt) {
  if (pred.h != gt.h || pred.w != gt.w) throw ValidationError("precision_recall: shape mismatch");
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < pred.v.size(); ++i) {
    tp += pred.v[i] & gt.v[i];
    fp += pred.v[i] & static_cast<std::size_t>(gt.v[i] ^ 1);
    fn += static_cast<std::size_t>(pred.v[i] ^ 1) & gt.v[i];
  }
  const real precision = tp + fp == 0 ? 1.0 : static_cast<real>(tp) / static_cast<real>(tp + fp);
  const real recall = tp + fn == 0 ? 1.0 : static_cast<real>(tp) / static_cast<real>(tp + fn);
  return {precision, recall};
}

std::vector<real> iou_top1(const std::vector<std::vector<real>>& per_sample_ious) {
  if (per_sample_ious.empty()) throw ValidationError("iou_top1: no methods");
  const std::size_t n = per_sample_ious[0].size();
  if (n == 0) throw ValidationError("iou_top1: no samples");
  for (const auto& row : per_sample_ious)
    if (row.size() != n) throw ValidationError("iou_top1: ragged method/sample table");
  std::vector<real> wins(per_sample_ious.size(), 0);
  for (std::size_t s = 0; s < n; ++s) {
    real best = -1;
    for (const auto& row : per_sample_ious) best = std::max(best, row[s]);
    for (std::size_t m = 0; m < per_sample_ious.size(); ++m)
      if (per_sample_ious[m][s] == best) wins[m] += 1;
  }
  for (auto& w : wins) w = w / static_cast<real>(n) * 100.0;
  return wins;
}

std::vector<CurveRow> sweep(const std::vector<Tensor>& probs, const std::vector<Mask>& gts,
                            const std::vector<real>& thresholds) {
  if (probs.empty() || probs.size() != gts.size())
    throw ValidationError("sweep: need a non-empty, aligned prediction/ground-truth set");
  for (std::size_t i = 1; i < thresholds.size(); ++i)
    if (thresholds[i] < thresholds[i - 1]) throw ValidationError("sweep: thresholds must be ascending");
  std::vector<CurveRow> out;
  out.reserve(thresholds.size());
  for (real t : thresholds) {
    CurveRow row;
    row.threshold = t;
    for (std::size_t i = 0; i < probs.size(); ++i) {
      const Mask pred = binarize(probs[i], t);
      row.mean_iou += iou(pred, gts[i]);
      const auto [p, r] = precision_recall(pred, gts[i]);
      row.mean_precision += p;
      row.mean_recall += r;
    }
    const real n = static_cast<real>(probs.size());
    row.mean_iou /= n;
    row.mean_precision /= n;
    row.mean_recall /= n;
    out.push_back(row);
  }
  return out;
}

void TaskReport::finalize() {
  mean_iou = mean_precision = mean_recall = 0;
  if (per_sample.empty()) return;
  for (const auto& s : per_sample) {
    mean_iou += s.iou;
    mean_precision += s.precision;
    mean_recall += s.recall;
  }
  const real n = static_cast<real>(per_sample.size());
  mean_iou /= n;
  mean_precision /= n;
  mean_recall /= n;
}

TaskReport evaluate_task(const PredictionMap& preds, const LabeledSet& set, real threshold,
                         const std::vector<real>& curve_thresholds) {
  std::vector<std::string> missing;
  for (const auto& id : set.ids)
    if (!preds.count(id)) missing.push_back(id);
  if (!missing.empty()) {
    std::string msg = "missing predictions for:";
    for (const auto& id : missing) msg += " " + id;
    throw ValidationError(msg);
  }
  TaskReport out;
  std::vector<Tensor> probs;
  std::vector<Mask> gts;
  for (const auto& id : set.ids) {
    const Tensor& p = preds.at(id);
    const Mask& gt = set.masks.at(id);
    SampleMetrics m;
    m.id = id;
    const Mask pred = binarize(p, threshold);
    m.iou = iou(pred, gt);
    std::tie(m.precision, m.recall) = precision_recall(pred, gt);
    out.per_sample.push_back(m);
    probs.push_back(p);
    gts.push_back(gt);
  }
  out.finalize();
  if (!curve_thresholds.empty()) out.curve = sweep(probs, gts, curve_thresholds);
  return out;
}

namespace {

json task_to_json(const TaskReport& t) {
  json per = json::array();
  for (const auto& s : t.per_sample)
    per.push_back({{"id", s.id}, {"iou", s.iou}, {"precision", s.precision}, {"recall", s.recall}});
  json curve = json::array();
  for (const auto& c : t.curve)
    curve.push_back({{"threshold", c.threshold},
                     {"mean_iou", c.mean_iou},
                     {"mean_precision", c.mean_precision},
                     {"mean_recall", c.mean_recall}});
  return {{"per_sample", per},
          {"mean_iou", t.mean_iou},
          {"mean_precision", t.mean_precision},
          {"mean_recall", t.mean_recall},
          {"curve", curve}};
}

TaskReport task_from_json(const json& j) {
  TaskReport t;
  for (const auto& s : j.at("per_sample"))
    t.per_sample.push_back({s.at("id").get<std::string>(), s.at("iou").get<real>(),
                            s.at("precision").get<real>(), s.at("recall").get<real>()});
  t.mean_iou = j.at("mean_iou").get<real>();
  t.mean_precision = j.at("mean_precision").get<real>();
  t.mean_recall = j.at("mean_recall").get<real>();
  for (const auto& c : j.at("curve"))
    t.curve.push_back({c.at("threshold").get<real>(), c.at("mean_iou").get<real>(),
                       c.at("mean_precision").get<real>(), c.at("mean_recall").get<real>()});
  return t;
}

}  // namespace

std::string report_to_json(const EvalReport& r) {
  json j{{"method", r.method},
         {"dataset", r.dataset},
         {"threshold", r.threshold},
         {"top1_tie_rule", r.top1_tie_rule}};
  if (r.skin) j["skin"] = task_to_json(*r.skin);
  if (r.body) j["body"] = task_to_json(*r.body);
  return j.dump(2) + "\n";
}

EvalReport report_from_json(const std::string& text) {
  const json j = json::parse(text);
  EvalReport r;
  r.method = j.at("method").get<std::string>();
  r.dataset = j.at("dataset").get<std::string>();
  r.threshold = j.at("threshold").get<real>();
  r.top1_tie_rule = j.value("top1_tie_rule", "shared");
  if (j.contains("skin")) r.skin = task_from_json(j.at("skin"));
  if (j.contains("body")) r.body = task_from_json(j.at("body"));
  return r;
}

void save_report(const std::filesystem::path& path, const EvalReport& r) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write report " + path.string());
  out << report_to_json(r);
}

EvalReport load_report(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open report " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return report_from_json(ss.str());
}

void save_curve_csv(const std::filesystem::path& path, const std::vector<CurveRow>& curve) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write curve " + path.string());
  out << "threshold,mean_iou,mean_precision,mean_recall\n";
  char buf[160];
  for (const auto& c : curve) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g,%.17g\n", c.threshold, c.mean_iou,
                  c.mean_precision, c.mean_recall);
    out << buf;
  }
}

std::vector<ComparisonRow> compare_reports(const std::vector<EvalReport>& reports, bool body_task) {
  if (reports.empty()) throw ValidationError("compare: no reports");
  std::vector<std::vector<real>> iou_table;
  std::vector<ComparisonRow> rows;
  std::vector<std::string> ref_ids;
  for (const auto& r : reports) {
    const auto& task = body_task ? r.body : r.skin;
    if (!task)
      throw ValidationError("report for '" + r.method + "' lacks the " +
                            (body_task ? "body" : "skin") + " task");
    std::vector<std::string> ids;
    std::vector<real> ious;
    for (const auto& s : task->per_sample) {
      ids.push_back(s.id);
      ious.push_back(s.iou);
    }
    if (ref_ids.empty())
      ref_ids = ids;
    else if (ids != ref_ids)
      throw ValidationError("report for '" + r.method + "' covers a different sample list");
    iou_table.push_back(std::move(ious));
    rows.push_back({r.method, task->mean_iou, 0, task->mean_precision, task->mean_recall});
  }
  const auto top1 = iou_top1(iou_table);
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i].top1 = top1[i];
  return rows;
}

std::string comparison_to_text(const std::vector<ComparisonRow>& rows, const std::string& task) {
  std::ostringstream out;
  out << "task: " << task << "\n";
  char buf[200];
  std::snprintf(buf, sizeof buf, "%-28s %10s %12s %14s %11s\n", "method", "IoU(%)", "Top-1(%)",
                "Precision(%)", "Recall(%)");
  out << buf;
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%-28s %10.2f %12.2f %14.2f %11.2f\n", r.method.c_str(),
                  r.mean_iou * 100, r.top1, r.mean_precision * 100, r.mean_recall * 100);
    out << buf;
  }
  return out.str();
}

}  // namespace skinseg
