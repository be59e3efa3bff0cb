#include "skinseg/run_config.hpp"

#include <json.hpp>

#include "skinseg/errors.hpp"

namespace skinseg {

using nlohmann::json;

RunConfig::RunConfig() {
  // crop_size 0 means "match the model input size"; resolved by cmd_train.
  training.augment.crop_size = 0;
  for (int i = 1; i <= 19; ++i) sweep_thresholds.push_back(i * 0.05);
}

namespace {

json to_json_obj(const RunConfig& c) {
  return json{
      {"model",
       {{"input_size", c.model.input_size},
        {"base_channels", c.model.base_channels},
        {"depth", c.model.depth},
        {"guidance_channel_ratio", c.model.guidance_channel_ratio},
        {"initial_guidance_skin", c.model.initial_guidance_skin},
        {"initial_guidance_body", c.model.initial_guidance_body}}},
      {"loss",
       {{"lambda1", c.training.loss.lambda1},
        {"lambda2", c.training.loss.lambda2},
        {"crf_sigma_color", c.training.loss.crf_sigma_color},
        {"crf_sigma_pos", c.training.loss.crf_sigma_pos},
        {"crf_radius", c.training.loss.crf_radius},
        {"wce_pairing",
         c.training.loss.wce_pairing == LossConfig::WcePairing::matched_stage ? "matched_stage"
                                                                              : "all_pairs"},
        {"epsilon", c.training.loss.epsilon}}},
      {"training",
       {{"learning_rate", c.training.learning_rate},
        {"beta1", c.training.beta1},
        {"beta2", c.training.beta2},
        {"batch_size", c.training.batch_size},
        {"stage1_epochs", c.training.stage1_epochs},
        {"finetune_epochs", c.training.finetune_epochs},
        {"grad_stop", c.training.grad_stop},
        {"mutual_guidance", c.training.mutual_guidance},
        {"from_scratch", c.training.from_scratch},
        {"use_augment", c.training.use_augment},
        {"seed", c.training.seed}}},
      {"augment",
       {{"flip_probability", c.training.augment.flip_probability},
        {"scale_min", c.training.augment.scale_min},
        {"scale_max", c.training.augment.scale_max},
        {"crop_size", c.training.augment.crop_size}}},
      {"evaluation", {{"threshold", c.eval_threshold}, {"sweep_thresholds", c.sweep_thresholds}}}};
}

void from_json_obj(const json& j, RunConfig& c) {
  const json& m = j.at("model");
  c.model.input_size = m.at("input_size").get<int>();
  c.model.base_channels = m.at("base_channels").get<int>();
  c.model.depth = m.at("depth").get<int>();
  c.model.guidance_channel_ratio = m.at("guidance_channel_ratio").get<real>();
  c.model.initial_guidance_skin = m.value("initial_guidance_skin", "zero");
  c.model.initial_guidance_body = m.value("initial_guidance_body", "zero");
  const json& l = j.at("loss");
  c.training.loss.lambda1 = l.at("lambda1").get<real>();
  c.training.loss.lambda2 = l.at("lambda2").get<real>();
  c.training.loss.crf_sigma_color = l.at("crf_sigma_color").get<real>();
  c.training.loss.crf_sigma_pos = l.at("crf_sigma_pos").get<real>();
  c.training.loss.crf_radius = l.at("crf_radius").get<int>();
  const std::string pairing = l.value("wce_pairing", "matched_stage");
  if (pairing == "matched_stage")
    c.training.loss.wce_pairing = LossConfig::WcePairing::matched_stage;
  else if (pairing == "all_pairs")
    c.training.loss.wce_pairing = LossConfig::WcePairing::all_pairs;
  else
    throw ValidationError("unknown wce_pairing '" + pairing + "'");
  c.training.loss.epsilon = l.at("epsilon").get<real>();
  const json& t = j.at("training");
  c.training.learning_rate = t.at("learning_rate").get<real>();
  c.training.beta1 = t.at("beta1").get<real>();
  c.training.beta2 = t.at("beta2").get<real>();
  c.training.batch_size = t.at("batch_size").get<int>();
  c.training.stage1_epochs = t.at("stage1_epochs").get<int>();
  c.training.finetune_epochs = t.at("finetune_epochs").get<int>();
  c.training.grad_stop = t.at("grad_stop").get<bool>();
  c.training.mutual_guidance = t.at("mutual_guidance").get<bool>();
  c.training.from_scratch = t.value("from_scratch", false);
  c.training.use_augment = t.value("use_augment", true);
  c.training.seed = t.at("seed").get<std::uint64_t>();
  const json& a = j.at("augment");
  c.training.augment.flip_probability = a.at("flip_probability").get<real>();
  c.training.augment.scale_min = a.at("scale_min").get<real>();
  c.training.augment.scale_max = a.at("scale_max").get<real>();
  c.training.augment.crop_size = a.at("crop_size").get<int>();
  const json& e = j.at("evaluation");
  c.eval_threshold = e.at("threshold").get<real>();
  c.sweep_thresholds = e.at("sweep_thresholds").get<std::vector<real>>();
}

}  // namespace

std::string run_config_to_json(const RunConfig& cfg) { return to_json_obj(cfg).dump(2) + "\n"; }

RunConfig run_config_from_json(const std::string& text) {
  RunConfig cfg;
  try {
    from_json_obj(json::parse(text), cfg);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("bad run config: ") + e.what());
  }
  return cfg;
}

void apply_override(RunConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos)
    throw ValidationError("override must look like section.key=value: " + assignment);
  const std::string path = assignment.substr(0, eq);
  const std::string value = assignment.substr(eq + 1);
  const auto dot = path.find('.');
  if (dot == std::string::npos)
    throw ValidationError("override key must be section.key: " + assignment);
  json j = to_json_obj(cfg);
  const std::string section = path.substr(0, dot), key = path.substr(dot + 1);
  if (!j.contains(section) || !j.at(section).contains(key))
    throw ValidationError("unknown config key '" + path + "'");
  json& slot = j[section][key];
  try {
    if (slot.is_string())
      slot = value;
    else
      slot = json::parse(value);
  } catch (const json::exception&) {
    throw ValidationError("cannot parse override value for '" + path + "': " + value);
  }
  try {
    from_json_obj(j, cfg);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("bad override: ") + e.what());
  }
}

}  // namespace skinseg
