#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "skinseg/baselines.hpp"
#include "skinseg/dataset.hpp"
#include "skinseg/errors.hpp"
#include "skinseg/evaluation.hpp"
#include "skinseg/image_io.hpp"
#include "skinseg/losses.hpp"
#include "skinseg/network.hpp"
#include "skinseg/run_config.hpp"
#include "skinseg/runtime.hpp"
#include "skinseg/synthgen.hpp"
#include "skinseg/training.hpp"

namespace fs = std::filesystem;
using namespace skinseg;

namespace {

Tensor load_guidance_map(const std::string& spec_str, int input_size) {
  if (spec_str == "zero") return Tensor({input_size, input_size});
  Tensor map = spec_str.ends_with(".f32") ? read_prob_f32(spec_str) : read_prob_pgm(spec_str);
  if (map.dim(0) != input_size || map.dim(1) != input_size)
    throw ValidationError("initial guidance map " + spec_str + " must be " +
                          std::to_string(input_size) + "x" + std::to_string(input_size));
  return map;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  out << text;
}

struct PredictionPaths {
  fs::path prob_pgm, prob_f32, mask_pgm;
};

PredictionPaths prediction_paths(const fs::path& dir, const std::string& id, const char* task) {
  return {dir / (id + "_" + task + "_prob.pgm"), dir / (id + "_" + task + "_prob.f32"),
          dir / (id + "_" + task + "_mask.pgm")};
}

void write_prediction(const fs::path& dir, const std::string& id, const char* task,
                      const Tensor& prob, real threshold) {
  const auto p = prediction_paths(dir, id, task);
  write_prob_pgm(p.prob_pgm, prob);
  write_prob_f32(p.prob_f32, prob);
  write_mask(p.mask_pgm, binarize(prob, threshold));
}

// Prefers the exact float sidecar, then the 8-bit map, then a hard mask.
std::optional<Tensor> read_prediction(const fs::path& dir, const std::string& id,
                                      const char* task) {
  const auto p = prediction_paths(dir, id, task);
  if (fs::exists(p.prob_f32)) return read_prob_f32(p.prob_f32);
  if (fs::exists(p.prob_pgm)) return read_prob_pgm(p.prob_pgm);
  if (fs::exists(p.mask_pgm)) return read_mask(p.mask_pgm).to_tensor();
  return std::nullopt;
}

int run_synth(const std::string& out_dir, int count, int size, double fraction, int val_count,
              std::uint64_t seed, double distractor_rate, int min_figures, int max_figures) {
  SceneParams params;
  params.image_size = size;
  params.seed = seed;
  params.background_distractor_rate = distractor_rate;
  params.min_figures = min_figures;
  params.max_figures = max_figures;
  const auto sum = generate_dataset(params, count, fraction, val_count, out_dir);
  std::cout << "wrote " << (sum.train_skin + sum.train_body) << " training samples ("
            << sum.train_skin << " skin / " << sum.train_body << " body) and " << sum.validation
            << " validation samples to " << out_dir << "\n";
  return 0;
}

int run_train(const std::string& data_dir, const std::string& out_dir,
              const std::string& config_path, const std::vector<std::string>& overrides,
              bool stage1_only, bool no_mutual_guidance, bool no_crf, bool no_wce,
              bool no_gradient_stop, bool from_scratch, std::optional<std::uint64_t> seed) {
  RunConfig cfg;
  if (!config_path.empty()) {
    std::ifstream in(config_path);
    if (!in) throw InputError("cannot open config " + config_path);
    std::stringstream ss;
    ss << in.rdbuf();
    cfg = run_config_from_json(ss.str());
  }
  for (const auto& o : overrides) apply_override(cfg, o);
  if (stage1_only) cfg.training.finetune_epochs = 0;
  if (no_mutual_guidance) cfg.training.mutual_guidance = false;
  if (no_crf) cfg.training.loss.lambda1 = 0;
  if (no_wce) cfg.training.loss.lambda2 = 0;
  if (no_gradient_stop) cfg.training.grad_stop = false;
  if (from_scratch) cfg.training.from_scratch = true;
  if (seed) cfg.training.seed = *seed;
  if (cfg.training.augment.crop_size == 0) cfg.training.augment.crop_size = cfg.model.input_size;

  const Dataset train_ds = load_manifest(fs::path(data_dir) / "train_manifest.txt");
  const Dataset val_ds = load_manifest(fs::path(data_dir) / "val_manifest.txt");
  const auto train_samples = load_all_samples(train_ds, cfg.model.input_size);
  const auto val_samples = load_all_samples(val_ds, cfg.model.input_size);

  fs::create_directories(out_dir);
  write_text(fs::path(out_dir) / "resolved_config.json", run_config_to_json(cfg));

  Model model(cfg.model);
  Rng init_rng(Rng::mix(cfg.training.seed, 0x1217));
  model.init_params(init_rng);
  model.set_initial_guidance(
      load_guidance_map(cfg.model.initial_guidance_skin, cfg.model.input_size),
      load_guidance_map(cfg.model.initial_guidance_body, cfg.model.input_size));

  auto result =
      train(model, train_samples, val_samples, cfg.training, &std::cout,
            [&](Model& m, int epoch) {
              CheckpointMeta meta{epoch, "stage1", cfg.training.seed, {}};
              save_checkpoint(fs::path(out_dir) / "checkpoint_stage1.ckpt", m, meta);
            });

  std::string history;
  for (const auto& rec : result.history) history += epoch_record_jsonl(rec) + "\n";
  write_text(fs::path(out_dir) / "history.jsonl", history);

  // Final metrics come from the saved (float32) checkpoint so the recorded
  // values are exactly recomputable from the artifact on disk.
  const fs::path final_path = fs::path(out_dir) / "checkpoint_final.ckpt";
  const bool two_stage = result.final_phase == "finetune";
  CheckpointMeta meta{cfg.training.stage1_epochs + cfg.training.finetune_epochs - 1,
                      result.final_phase, cfg.training.seed, {}};
  save_checkpoint(final_path, model, meta);
  auto quantized = load_checkpoint(final_path, nullptr);
  const ValMetrics vm = validate_model(*quantized, val_samples, two_stage, cfg.eval_threshold,
                                       cfg.training.batch_size);
  meta.metrics = {{"val_skin_iou", vm.skin_iou},
                  {"val_body_iou", vm.body_iou},
                  {"val_skin_precision", vm.skin_precision},
                  {"val_skin_recall", vm.skin_recall}};
  save_checkpoint(final_path, *quantized, meta);

  nlohmann::json fm{{"val_skin_iou", vm.skin_iou},
                    {"val_body_iou", vm.body_iou},
                    {"val_skin_precision", vm.skin_precision},
                    {"val_skin_recall", vm.skin_recall},
                    {"phase", result.final_phase}};
  write_text(fs::path(out_dir) / "final_metrics.json", fm.dump(2) + "\n");
  std::cout << "final: val_skin_iou=" << vm.skin_iou << " val_body_iou=" << vm.body_iou
            << " val_skin_precision=" << vm.skin_precision
            << " val_skin_recall=" << vm.skin_recall << "\n";
  return 0;
}

int run_infer(const std::string& checkpoint, const std::string& image_path,
              const std::string& data_dir, const std::string& manifest_name,
              const std::string& out_dir, int stage_mode, real threshold) {
  CheckpointMeta meta;
  auto model = load_checkpoint(checkpoint, &meta);
  const bool two_stage = stage_mode == 0 ? meta.phase == "finetune" : stage_mode == 2;
  fs::create_directories(out_dir);
  const int input = model->config().input_size;

  auto infer_one = [&](const std::string& id, const Image& raw) {
    const Image img = (raw.h == input && raw.w == input) ? raw : resize_bilinear(raw, input, input);
    Tensor skin_map, body_map;
    if (two_stage) {
      const ForwardTrace tr = model->forward_two_stage(img);
      skin_map = tr.o2_skin;
      body_map = tr.o2_body;
    } else {
      auto [o_s, o_b] = model->forward_stage1(img);
      skin_map = o_s;
      body_map = o_b;
    }
    write_prediction(out_dir, id, "skin", skin_map, threshold);
    write_prediction(out_dir, id, "body", body_map, threshold);
  };

  int n = 0;
  if (!image_path.empty()) {
    infer_one(fs::path(image_path).stem().string(), read_ppm(image_path));
    ++n;
  } else {
    const Dataset ds = load_manifest(fs::path(data_dir) / manifest_name);
    for (const auto& desc : ds.items) {
      infer_one(desc.id, read_ppm(ds.root / desc.image_path));
      ++n;
    }
  }
  std::cout << "wrote predictions for " << n << " image(s) to " << out_dir << "\n";
  return 0;
}

int run_baseline(const std::string& method, const std::string& data_dir,
                 const std::string& manifest_name, const std::string& out_dir, int gmm_k,
                 real threshold) {
  const Dataset ds = load_manifest(fs::path(data_dir) / manifest_name);
  fs::create_directories(out_dir);
  int n = 0, degenerate = 0;
  for (const auto& desc : ds.items) {
    const Image img = read_ppm(ds.root / desc.image_path);
    Tensor prob;
    if (method == "threshold") {
      prob = threshold_classify(img).to_tensor();
    } else {
      const Mask init = threshold_classify(img);
      try {
        prob = gmm_skin_probability(img, init, gmm_k);
      } catch (const ValidationError& e) {
        // Degenerate initialization: report and fall back to the rule mask.
        std::cerr << "sample " << desc.id << ": " << e.what() << "\n";
        ++degenerate;
        prob = init.to_tensor();
      }
    }
    write_prediction(out_dir, desc.id, "skin", prob, threshold);
    ++n;
  }
  std::cout << "baseline '" << method << "' wrote " << n << " prediction(s) to " << out_dir;
  if (degenerate) std::cout << " (" << degenerate << " degenerate GMM initialization(s))";
  std::cout << "\n";
  return 0;
}

int run_eval(const std::string& pred_dir, const std::string& data_dir,
             const std::string& manifest_name, const std::string& method,
             const std::string& report_path, const std::string& curve_prefix, real threshold,
             const std::vector<real>& sweep_thresholds) {
  const Dataset ds = load_manifest(fs::path(data_dir) / manifest_name);
  LabeledSet skin_set, body_set;
  PredictionMap skin_preds, body_preds;
  std::vector<std::string> missing_skin, missing_body;
  int body_mask_count = 0, body_pred_count = 0;
  for (const auto& desc : ds.items) {
    if (desc.flags.skin) {
      skin_set.ids.push_back(desc.id);
      skin_set.masks[desc.id] = read_mask(ds.root / desc.skin_mask_path);
      if (auto p = read_prediction(pred_dir, desc.id, "skin"))
        skin_preds[desc.id] = std::move(*p);
      else
        missing_skin.push_back(desc.id);
    }
    if (desc.flags.body) {
      ++body_mask_count;
      if (auto p = read_prediction(pred_dir, desc.id, "body")) {
        ++body_pred_count;
        body_set.ids.push_back(desc.id);
        body_set.masks[desc.id] = read_mask(ds.root / desc.body_mask_path);
        body_preds[desc.id] = std::move(*p);
      } else {
        missing_body.push_back(desc.id);
      }
    }
  }
  if (!missing_skin.empty()) {
    std::string msg = "missing skin predictions for:";
    for (const auto& id : missing_skin) msg += " " + id;
    throw ValidationError(msg);
  }
  // The body task is optional (baselines emit skin only) but must be
  // complete when present at all.
  if (body_pred_count > 0 && body_pred_count < body_mask_count) {
    std::string msg = "missing body predictions for:";
    for (const auto& id : missing_body) msg += " " + id;
    throw ValidationError(msg);
  }

  // Ground-truth masks may be stored at a different resolution than the
  // predictions; evaluate at the prediction resolution.
  auto align = [&](LabeledSet& set, PredictionMap& preds) {
    for (auto& id : set.ids) {
      const Tensor& p = preds.at(id);
      Mask& m = set.masks.at(id);
      if (m.h != p.dim(0) || m.w != p.dim(1)) m = resize_nearest(m, p.dim(0), p.dim(1));
    }
  };
  align(skin_set, skin_preds);
  align(body_set, body_preds);

  EvalReport report;
  report.method = method.empty() ? fs::path(pred_dir).filename().string() : method;
  report.dataset = (fs::path(data_dir) / manifest_name).string();
  report.threshold = threshold;
  report.skin = evaluate_task(skin_preds, skin_set, threshold, sweep_thresholds);
  if (!body_set.ids.empty())
    report.body = evaluate_task(body_preds, body_set, threshold, sweep_thresholds);
  save_report(report_path, report);
  if (!curve_prefix.empty()) {
    save_curve_csv(curve_prefix + "_skin_curve.csv", report.skin->curve);
    if (report.body) save_curve_csv(curve_prefix + "_body_curve.csv", report.body->curve);
  }
  std::cout << "method " << report.method << ": skin mean IoU " << report.skin->mean_iou;
  if (report.body) std::cout << ", body mean IoU " << report.body->mean_iou;
  std::cout << " (" << report_path << ")\n";
  return 0;
}

int run_compare(const std::vector<std::string>& report_paths, const std::string& out_path,
                const std::string& task) {
  std::vector<EvalReport> reports;
  for (const auto& p : report_paths) reports.push_back(load_report(p));
  const auto rows = compare_reports(reports, task == "body");
  const std::string text = comparison_to_text(rows, task);
  if (!out_path.empty()) write_text(out_path, text);
  std::cout << text;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  init_runtime();
  CLI::App app{"Semi-supervised dual-task skin/body segmentation toolkit"};
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset with exact masks");
  std::string s_out;
  int s_count = 400, s_size = 64, s_val = 80, s_minf = 1, s_maxf = 3;
  double s_fraction = 0.5, s_distractor = 0.5;
  std::uint64_t s_seed = 1;
  synth->add_option("--out", s_out, "output directory")->required();
  synth->add_option("--count", s_count, "training sample count");
  synth->add_option("--size", s_size, "image size (pixels)");
  synth->add_option("--skin-fraction", s_fraction, "fraction of training samples with skin labels")
      ->check(CLI::Range(std::nextafter(0.0, 1.0), std::nextafter(1.0, 0.0)));
  synth->add_option("--val-count", s_val, "dual-labeled validation sample count");
  synth->add_option("--seed", s_seed, "generator seed");
  synth->add_option("--distractor-rate", s_distractor, "background distractor budget fraction");
  synth->add_option("--min-figures", s_minf, "minimum figures per scene");
  synth->add_option("--max-figures", s_maxf, "maximum figures per scene");

  // train
  auto* tr = app.add_subcommand("train", "Train the dual-task network");
  std::string t_data, t_out, t_config;
  std::vector<std::string> t_sets;
  bool t_stage1_only = false, t_no_mg = false, t_no_crf = false, t_no_wce = false,
       t_no_gs = false, t_scratch = false;
  std::optional<std::uint64_t> t_seed;
  tr->add_option("--data", t_data, "dataset directory (train/val manifests)")->required();
  tr->add_option("--out", t_out, "run output directory")->required();
  tr->add_option("--config", t_config, "run config JSON");
  tr->add_option("--set", t_sets, "override, e.g. training.stage1_epochs=4")->take_all();
  tr->add_flag("--stage1-only", t_stage1_only, "stop after stage-1 pretraining");
  tr->add_flag("--no-mutual-guidance", t_no_mg, "train single-stage throughout");
  tr->add_flag("--no-crf", t_no_crf, "disable the pairwise-consistency loss");
  tr->add_flag("--no-wce", t_no_wce, "disable the skin-in-body consistency loss");
  tr->add_flag("--no-gradient-stop", t_no_gs, "let stage-2 gradients reach stage-1 outputs");
  tr->add_flag("--from-scratch", t_scratch, "run two-stage training from epoch 0");
  tr->add_option("--seed", t_seed, "training seed");

  // infer
  auto* inf = app.add_subcommand("infer", "Run a checkpoint on images");
  std::string i_ckpt, i_image, i_data, i_manifest = "val_manifest.txt", i_out;
  bool i_single = false, i_two = false;
  double i_threshold = 0.5;
  inf->add_option("--checkpoint", i_ckpt, "checkpoint file")->required();
  inf->add_option("--image", i_image, "single input image (PPM)");
  inf->add_option("--data", i_data, "dataset directory");
  inf->add_option("--manifest", i_manifest, "manifest name inside --data");
  inf->add_option("--out", i_out, "output directory")->required();
  inf->add_flag("--single-stage", i_single, "use stage-1 outputs");
  inf->add_flag("--two-stage", i_two, "use stage-2 outputs");
  inf->add_option("--threshold", i_threshold, "binarization threshold");

  // baseline
  auto* bl = app.add_subcommand("baseline", "Run a classical skin baseline");
  std::string b_method, b_data, b_manifest = "val_manifest.txt", b_out;
  int b_k = 4;
  double b_threshold = 0.5;
  bl->add_option("--method", b_method, "threshold | gmm")
      ->required()
      ->check(CLI::IsMember({"threshold", "gmm"}));
  bl->add_option("--data", b_data, "dataset directory")->required();
  bl->add_option("--manifest", b_manifest, "manifest name inside --data");
  bl->add_option("--out", b_out, "output directory")->required();
  bl->add_option("--gmm-k", b_k, "components per class");
  bl->add_option("--threshold", b_threshold, "binarization threshold");

  // eval
  auto* ev = app.add_subcommand("eval", "Evaluate predictions against a labeled manifest");
  std::string e_pred, e_data, e_manifest = "val_manifest.txt", e_method, e_report, e_curves;
  double e_threshold = 0.5;
  ev->add_option("--pred", e_pred, "predictions directory")->required();
  ev->add_option("--data", e_data, "dataset directory")->required();
  ev->add_option("--manifest", e_manifest, "manifest name inside --data");
  ev->add_option("--method", e_method, "method name for the report");
  ev->add_option("--report", e_report, "output report path (JSON)")->required();
  ev->add_option("--curves", e_curves, "output path prefix for curve CSVs");
  ev->add_option("--threshold", e_threshold, "operating threshold");

  // compare
  auto* cp = app.add_subcommand("compare", "Merge reports into a comparison grid");
  std::vector<std::string> c_reports;
  std::string c_out, c_task = "skin";
  cp->add_option("--reports", c_reports, "report files")->required()->take_all();
  cp->add_option("--out", c_out, "output grid path");
  cp->add_option("--task", c_task, "skin | body")->check(CLI::IsMember({"skin", "body"}));

  try {
    app.parse(argc, argv);
    if (synth->parsed())
      return run_synth(s_out, s_count, s_size, s_fraction, s_val, s_seed, s_distractor, s_minf,
                       s_maxf);
    if (tr->parsed())
      return run_train(t_data, t_out, t_config, t_sets, t_stage1_only, t_no_mg, t_no_crf, t_no_wce,
                       t_no_gs, t_scratch, t_seed);
    if (inf->parsed()) {
      if (i_image.empty() == i_data.empty())
        throw ValidationError("infer needs exactly one of --image or --data");
      const int mode = i_single ? 1 : (i_two ? 2 : 0);
      return run_infer(i_ckpt, i_image, i_data, i_manifest, i_out, mode, i_threshold);
    }
    if (bl->parsed()) return run_baseline(b_method, b_data, b_manifest, b_out, b_k, b_threshold);
    if (ev->parsed()) {
      RunConfig defaults;
      return run_eval(e_pred, e_data, e_manifest, e_method, e_report, e_curves, e_threshold,
                      defaults.sweep_thresholds);
    }
    if (cp->parsed()) return run_compare(c_reports, c_out, c_task);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const InputError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const RuntimeAbort& e) {
    std::cerr << "abort: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "unexpected error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
