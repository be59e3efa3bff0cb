#include "skinseg/network.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <sstream>

#include "skinseg/errors.hpp"

namespace skinseg {

using nlohmann::json;

namespace {
constexpr real kBnMomentum = 0.9;
}

void ModelConfig::validate() const {
  if (depth < 1) throw ValidationError("model depth must be >= 1");
  if (input_size < 8 || input_size % (1 << depth) != 0)
    throw ValidationError("input_size must be >= 8 and divisible by 2^depth");
  if (base_channels < 1) throw ValidationError("base_channels must be >= 1");
  if (guidance_channel_ratio <= 0 || guidance_channel_ratio > 1)
    throw ValidationError("guidance_channel_ratio must be in (0,1]");
}

Model::Model(ModelConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  encoder_ = make_encoder("encoder", 3, cfg_.base_channels);
  guidance_encoder_ = make_encoder("guidance_encoder", 1, cfg_.guidance_base());
  dec_skin_ = make_decoder("decoder_skin");
  dec_body_ = make_decoder("decoder_body");
  e_skin_ = Tensor({cfg_.input_size, cfg_.input_size});
  e_body_ = Tensor({cfg_.input_size, cfg_.input_size});
  register_params();
}

Model::ConvBn Model::make_convbn(const std::string& name, int cin, int cout) {
  ConvBn b;
  b.w = ad::Param(name + ".w", Tensor({cout, cin, 3, 3}));
  b.gamma = ad::Param(name + ".gamma", Tensor({cout}, 1.0));
  b.beta = ad::Param(name + ".beta", Tensor({cout}));
  b.bn.running_mean = Tensor({cout});
  b.bn.running_var = Tensor({cout}, 1.0);
  return b;
}

Model::EncoderP Model::make_encoder(const std::string& prefix, int in_ch, int base) {
  EncoderP enc;
  for (int level = 0; level <= cfg_.depth; ++level) {
    const int cout = base << level;
    const int cin = level == 0 ? in_ch : base << (level - 1);
    const std::string ln = prefix + ".l" + std::to_string(level);
    enc.levels.push_back({make_convbn(ln + ".c0", cin, cout), make_convbn(ln + ".c1", cout, cout)});
  }
  return enc;
}

Model::DecoderP Model::make_decoder(const std::string& prefix) {
  DecoderP dec;
  int cur = cfg_.bottleneck_channels() + cfg_.guidance_bottleneck_channels();
  for (int t = 0; t < cfg_.depth; ++t) {
    const int level = cfg_.depth - 1 - t;
    const int ct = cfg_.base_channels << level;
    const std::string un = prefix + ".up" + std::to_string(t);
    DecoderP::Up up{make_convbn(un + ".reduce", cur, ct), make_convbn(un + ".c0", 2 * ct, ct),
                    make_convbn(un + ".c1", ct, ct)};
    dec.ups.push_back(std::move(up));
    cur = ct;
  }
  dec.head_w = ad::Param(prefix + ".head.w", Tensor({1, cfg_.base_channels, 1, 1}));
  dec.head_b = ad::Param(prefix + ".head.b", Tensor({1}));
  return dec;
}

void Model::register_params() {
  params_.clear();
  state_.clear();
  auto add_block = [&](ConvBn& b) {
    params_.push_back(&b.w);
    params_.push_back(&b.gamma);
    params_.push_back(&b.beta);
    state_.emplace_back(b.w.name, &b.w.value);
    state_.emplace_back(b.gamma.name, &b.gamma.value);
    state_.emplace_back(b.beta.name, &b.beta.value);
    state_.emplace_back(b.w.name.substr(0, b.w.name.size() - 2) + ".running_mean", &b.bn.running_mean);
    state_.emplace_back(b.w.name.substr(0, b.w.name.size() - 2) + ".running_var", &b.bn.running_var);
  };
  auto add_encoder = [&](EncoderP& e) {
    for (auto& lvl : e.levels)
      for (auto& b : lvl) add_block(b);
  };
  auto add_decoder = [&](DecoderP& d) {
    for (auto& up : d.ups) {
      add_block(up.reduce);
      add_block(up.c0);
      add_block(up.c1);
    }
    params_.push_back(&d.head_w);
    params_.push_back(&d.head_b);
    state_.emplace_back(d.head_w.name, &d.head_w.value);
    state_.emplace_back(d.head_b.name, &d.head_b.value);
  };
  add_encoder(encoder_);
  add_encoder(guidance_encoder_);
  add_decoder(dec_skin_);
  add_decoder(dec_body_);
  state_.emplace_back("initial_guidance.skin", &e_skin_);
  state_.emplace_back("initial_guidance.body", &e_body_);
}

void Model::init_params(Rng& rng) {
  for (ad::Param* p : params_) {
    if (p->value.shape.size() == 4) {
      const int fan_in = p->value.dim(1) * p->value.dim(2) * p->value.dim(3);
      const real std = std::sqrt(2.0 / fan_in);
      for (auto& v : p->value.data) v = rng.normal() * std;
    } else if (p->name.ends_with(".gamma")) {
      p->value.fill(1.0);
    } else {
      p->value.fill(0.0);
    }
    p->grad = Tensor(p->value.shape);
  }
  auto reset_bn = [&](EncoderP& e) {
    for (auto& lvl : e.levels)
      for (auto& b : lvl) {
        b.bn.running_mean.fill(0.0);
        b.bn.running_var.fill(1.0);
      }
  };
  reset_bn(encoder_);
  reset_bn(guidance_encoder_);
  for (DecoderP* d : {&dec_skin_, &dec_body_})
    for (auto& up : d->ups)
      for (ConvBn* b : {&up.reduce, &up.c0, &up.c1}) {
        b->bn.running_mean.fill(0.0);
        b->bn.running_var.fill(1.0);
      }
}

void Model::zero_grads() {
  for (ad::Param* p : params_) p->zero_grad();
}

void Model::freeze_encoder() {
  for (auto& lvl : encoder_.levels)
    for (auto& b : lvl) {
      b.w.trainable = false;
      b.gamma.trainable = false;
      b.beta.trainable = false;
    }
}

void Model::set_initial_guidance(Tensor e_skin, Tensor e_body) {
  const std::vector<int> want{cfg_.input_size, cfg_.input_size};
  if (e_skin.shape != want || e_body.shape != want)
    throw ValidationError("initial guidance maps must match the model input size");
  e_skin_ = std::move(e_skin);
  e_body_ = std::move(e_body);
}

ad::NodeP Model::run_block(ad::Graph& g, ConvBn& b, ad::NodeP x) {
  auto y = ad::conv2d(g, x, b.w, nullptr);
  y = ad::batchnorm(g, y, b.gamma, b.beta, b.bn, kBnMomentum);
  return ad::relu(g, y);
}

Model::FeatNodes Model::run_encoder(ad::Graph& g, EncoderP& enc, ad::NodeP x, bool keep_skips) {
  FeatNodes out;
  ad::NodeP h = x;
  for (int level = 0; level <= cfg_.depth; ++level) {
    if (level > 0) h = ad::maxpool2(g, h);
    h = run_block(g, enc.levels[static_cast<std::size_t>(level)][0], h);
    h = run_block(g, enc.levels[static_cast<std::size_t>(level)][1], h);
    if (keep_skips && level < cfg_.depth) out.skips.push_back(h);
  }
  out.bottleneck = h;
  return out;
}

Model::FeatNodes Model::encode_nodes(ad::Graph& g, ad::NodeP image) {
  if (image->value.shape.size() != 4 || image->value.dim(1) != 3 ||
      image->value.dim(2) != cfg_.input_size || image->value.dim(3) != cfg_.input_size)
    throw ValidationError("encode: image must be {N,3," + std::to_string(cfg_.input_size) + "," +
                          std::to_string(cfg_.input_size) + "}");
  return run_encoder(g, encoder_, image, true);
}

ad::NodeP Model::decode_nodes(ad::Graph& g, Branch branch, const FeatNodes& feat, ad::NodeP guidance) {
  if (guidance->value.shape.size() != 4 || guidance->value.dim(1) != 1 ||
      guidance->value.dim(2) != cfg_.input_size || guidance->value.dim(3) != cfg_.input_size)
    throw ValidationError("decode: guidance must be {N,1,input,input}");
  auto gfeat = run_encoder(g, guidance_encoder_, guidance, false);
  DecoderP& dec = branch == Branch::skin ? dec_skin_ : dec_body_;
  ad::NodeP h = ad::concat_channels(g, feat.bottleneck, gfeat.bottleneck);
  for (int t = 0; t < cfg_.depth; ++t) {
    const int level = cfg_.depth - 1 - t;
    auto& up = dec.ups[static_cast<std::size_t>(t)];
    h = ad::upsample2(g, h);
    h = run_block(g, up.reduce, h);
    h = ad::concat_channels(g, h, feat.skips[static_cast<std::size_t>(level)]);
    h = run_block(g, up.c0, h);
    h = run_block(g, up.c1, h);
  }
  auto logits = ad::conv2d(g, h, dec.head_w, &dec.head_b);
  return ad::sigmoid(g, logits);
}

ad::NodeP Model::default_stage1_guidance(ad::Graph& g, const Tensor& map, int n) {
  return g.constant(expand_guidance(map, n));
}

Model::Stage1Nodes Model::forward_stage1_nodes(ad::Graph& g, ad::NodeP image,
                                               ad::NodeP guidance_into_skin,
                                               ad::NodeP guidance_into_body) {
  const std::string outer_scope = g.use_scope;
  g.use_scope = "stage1";
  const int n = image->value.dim(0);
  Stage1Nodes s;
  s.feat = encode_nodes(g, image);
  // Cross-assigned initial signals: the skin branch is guided by the
  // body-side signal and vice versa.
  ad::NodeP gs = guidance_into_skin ? guidance_into_skin : default_stage1_guidance(g, e_body_, n);
  ad::NodeP gb = guidance_into_body ? guidance_into_body : default_stage1_guidance(g, e_skin_, n);
  s.o_skin = decode_nodes(g, Branch::skin, s.feat, gs);
  s.o_body = decode_nodes(g, Branch::body, s.feat, gb);
  g.use_scope = outer_scope;
  return s;
}

Model::TwoStageNodes Model::forward_two_stage_nodes(ad::Graph& g, ad::NodeP image, ad::NodeP g2_skin,
                                                    ad::NodeP g2_body, bool grad_stop) {
  Stage1Nodes s1 = forward_stage1_nodes(g, image);
  if (!g2_skin) g2_skin = grad_stop ? ad::detach(g, s1.o_body) : s1.o_body;
  if (!g2_body) g2_body = grad_stop ? ad::detach(g, s1.o_skin) : s1.o_skin;
  return forward_two_stage_from(g, s1, g2_skin, g2_body);
}

Model::TwoStageNodes Model::forward_two_stage_from(ad::Graph& g, const Stage1Nodes& s1,
                                                   ad::NodeP g2_skin, ad::NodeP g2_body) {
  TwoStageNodes t;
  t.s1 = s1;
  const std::string outer_scope = g.use_scope;
  g.use_scope = "stage2";
  t.g2_skin = g2_skin;
  t.g2_body = g2_body;
  t.o2_skin = decode_nodes(g, Branch::skin, s1.feat, g2_skin);
  t.o2_body = decode_nodes(g, Branch::body, s1.feat, g2_body);
  g.use_scope = outer_scope;
  return t;
}

Tensor Model::expand_guidance(const Tensor& map, int n) {
  if (map.shape.size() != 2) throw ValidationError("guidance map must be rank 2");
  const int h = map.dim(0), w = map.dim(1);
  Tensor out({n, 1, h, w});
  for (int i = 0; i < n; ++i)
    std::copy(map.data.begin(), map.data.end(),
              out.data.begin() + static_cast<std::size_t>(i) * map.numel());
  return out;
}

namespace {

Tensor slice_map(const Tensor& t, int i) {
  const int h = t.dim(2), w = t.dim(3);
  Tensor out({h, w});
  std::copy(t.ptr() + static_cast<std::size_t>(i) * h * w,
            t.ptr() + static_cast<std::size_t>(i + 1) * h * w, out.ptr());
  return out;
}

Tensor image_batch(const Image& img) { return img.to_tensor(); }

}  // namespace

FeatureMap Model::encode(const Image& img) {
  if (img.h != cfg_.input_size || img.w != cfg_.input_size)
    throw ValidationError("encode: image size must equal the configured input size");
  ad::Graph g;
  auto feat = encode_nodes(g, g.constant(image_batch(img)));
  FeatureMap out;
  out.bottleneck = feat.bottleneck->value;
  for (auto& s : feat.skips) out.skips.push_back(s->value);
  return out;
}

Tensor Model::decode(Branch branch, const FeatureMap& feat, const Tensor& guidance) {
  ad::Graph g;
  FeatNodes fn;
  fn.bottleneck = g.constant(feat.bottleneck);
  for (auto& s : feat.skips) fn.skips.push_back(g.constant(s));
  Tensor gmap = guidance.shape.size() == 2 ? expand_guidance(guidance, 1) : guidance;
  auto out = decode_nodes(g, branch, fn, g.constant(std::move(gmap)));
  return slice_map(out->value, 0);
}

std::pair<Tensor, Tensor> Model::forward_stage1(
    const Image& img, std::optional<std::pair<Tensor, Tensor>> initial_guidance) {
  ad::Graph g;
  auto image = g.constant(image_batch(img));
  ad::NodeP gs, gb;
  if (initial_guidance) {
    // (e_skin, e_body) override; cross-assignment as in the default path.
    gs = g.constant(expand_guidance(initial_guidance->second, 1));
    gb = g.constant(expand_guidance(initial_guidance->first, 1));
  }
  auto s = forward_stage1_nodes(g, image, gs, gb);
  return {slice_map(s.o_skin->value, 0), slice_map(s.o_body->value, 0)};
}

ForwardTrace Model::forward_two_stage(const Image& img, std::optional<Tensor> override_g2_skin,
                                      std::optional<Tensor> override_g2_body, bool grad_stop) {
  ad::Graph g;
  auto image = g.constant(image_batch(img));
  ad::NodeP g2s, g2b;
  if (override_g2_skin) {
    if (override_g2_skin->shape != std::vector<int>{cfg_.input_size, cfg_.input_size})
      throw ValidationError("stage-2 guidance override must match the input size");
    g2s = g.constant(expand_guidance(*override_g2_skin, 1));
  }
  if (override_g2_body) {
    if (override_g2_body->shape != std::vector<int>{cfg_.input_size, cfg_.input_size})
      throw ValidationError("stage-2 guidance override must match the input size");
    g2b = g.constant(expand_guidance(*override_g2_body, 1));
  }
  auto t = forward_two_stage_nodes(g, image, g2s, g2b, grad_stop);
  ForwardTrace tr;
  tr.o_skin = slice_map(t.s1.o_skin->value, 0);
  tr.o_body = slice_map(t.s1.o_body->value, 0);
  tr.o2_skin = slice_map(t.o2_skin->value, 0);
  tr.o2_body = slice_map(t.o2_body->value, 0);
  tr.g2_skin = slice_map(t.g2_skin->value, 0);
  tr.g2_body = slice_map(t.g2_body->value, 0);
  tr.grad_stop = grad_stop;
  return tr;
}

Model::BatchOut Model::forward_batch(const Tensor& images, bool two_stage) {
  ad::Graph g;
  auto image = g.constant(images);
  BatchOut out;
  if (two_stage) {
    auto t = forward_two_stage_nodes(g, image);
    out.o_skin = t.s1.o_skin->value;
    out.o_body = t.s1.o_body->value;
    out.o2_skin = t.o2_skin->value;
    out.o2_body = t.o2_body->value;
  } else {
    auto s = forward_stage1_nodes(g, image);
    out.o_skin = s.o_skin->value;
    out.o_body = s.o_body->value;
  }
  return out;
}

// --- checkpoint I/O --------------------------------------------------------

std::string model_config_to_json(const ModelConfig& cfg) {
  json j{{"input_size", cfg.input_size},
         {"base_channels", cfg.base_channels},
         {"depth", cfg.depth},
         {"guidance_channel_ratio", cfg.guidance_channel_ratio},
         {"initial_guidance_skin", cfg.initial_guidance_skin},
         {"initial_guidance_body", cfg.initial_guidance_body}};
  return j.dump();
}

ModelConfig model_config_from_json(const std::string& text) {
  const json j = json::parse(text);
  ModelConfig cfg;
  cfg.input_size = j.at("input_size").get<int>();
  cfg.base_channels = j.at("base_channels").get<int>();
  cfg.depth = j.at("depth").get<int>();
  cfg.guidance_channel_ratio = j.at("guidance_channel_ratio").get<real>();
  cfg.initial_guidance_skin = j.value("initial_guidance_skin", "zero");
  cfg.initial_guidance_body = j.value("initial_guidance_body", "zero");
  return cfg;
}

void save_checkpoint(const std::filesystem::path& path, const Model& model,
                     const CheckpointMeta& meta) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write checkpoint " + path.string());
  json mj{{"config", json::parse(model_config_to_json(model.config()))},
          {"epoch", meta.epoch},
          {"phase", meta.phase},
          {"seed", meta.seed},
          {"metrics", meta.metrics}};
  out << "SKINSEG-CKPT v1\n" << mj.dump() << "\n";
  std::size_t total = 0;
  for (auto& [name, t] : model.state()) {
    out << "tensor " << name << " " << t->shape.size();
    for (int d : t->shape) out << " " << d;
    out << "\n";
    total += t->numel();
  }
  out << "DATA " << total << "\n";
  std::vector<float> buf;
  for (auto& [name, t] : model.state()) {
    buf.resize(t->numel());
    for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = static_cast<float>((*t)[i]);
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * 4));
  }
  if (!out) throw InputError("failed writing checkpoint " + path.string());
}

std::unique_ptr<Model> load_checkpoint(const std::filesystem::path& path, CheckpointMeta* meta) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open checkpoint " + path.string());
  std::string line;
  std::getline(in, line);
  if (line != "SKINSEG-CKPT v1") throw InputError(path.string() + ": not a checkpoint file");
  std::getline(in, line);
  const json mj = json::parse(line);
  ModelConfig cfg = model_config_from_json(mj.at("config").dump());
  auto model = std::make_unique<Model>(cfg);
  if (meta) {
    meta->epoch = mj.at("epoch").get<int>();
    meta->phase = mj.at("phase").get<std::string>();
    meta->seed = mj.at("seed").get<std::uint64_t>();
    meta->metrics.clear();
    for (auto& [k, v] : mj.at("metrics").items()) meta->metrics[k] = v.get<real>();
  }

  std::vector<std::pair<std::string, std::vector<int>>> index;
  std::size_t total = 0;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string kind;
    ls >> kind;
    if (kind == "DATA") {
      ls >> total;
      break;
    }
    if (kind != "tensor") throw InputError(path.string() + ": malformed index line: " + line);
    std::string name;
    int rank = 0;
    ls >> name >> rank;
    std::vector<int> dims(static_cast<std::size_t>(rank));
    for (auto& d : dims) ls >> d;
    index.emplace_back(name, dims);
  }
  const auto& state = model->state();
  if (index.size() != state.size())
    throw InputError(path.string() + ": tensor count mismatch with model layout");
  std::vector<float> buf;
  std::size_t seen = 0;
  for (std::size_t i = 0; i < state.size(); ++i) {
    const auto& [name, tensor_ptr] = state[i];
    if (index[i].first != name || index[i].second != tensor_ptr->shape)
      throw InputError(path.string() + ": tensor '" + index[i].first +
                       "' does not match model layout entry '" + name + "'");
    buf.resize(tensor_ptr->numel());
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * 4));
    if (in.gcount() != static_cast<std::streamsize>(buf.size() * 4))
      throw InputError(path.string() + ": truncated tensor data");
    for (std::size_t k = 0; k < buf.size(); ++k) (*tensor_ptr)[k] = buf[k];
    seen += buf.size();
  }
  if (seen != total) throw InputError(path.string() + ": data size mismatch");
  return model;
}

}  // namespace skinseg
