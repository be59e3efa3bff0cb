#include "skinseg/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <unordered_set>

#include "skinseg/errors.hpp"

namespace skinseg {

std::vector<int> Dataset::indices_with_skin() const {
  std::vector<int> out;
  for (std::size_t i = 0; i < items.size(); ++i)
    if (items[i].flags.skin) out.push_back(static_cast<int>(i));
  return out;
}

std::vector<int> Dataset::indices_with_body() const {
  std::vector<int> out;
  for (std::size_t i = 0; i < items.size(); ++i)
    if (items[i].flags.body) out.push_back(static_cast<int>(i));
  return out;
}

Dataset load_manifest(const std::filesystem::path& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw InputError("cannot open manifest " + manifest_path.string());
  Dataset ds;
  ds.root = manifest_path.parent_path();
  std::unordered_set<std::string> seen;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    std::istringstream ls(line);
    SampleDesc d;
    std::string skin, body;
    if (!(ls >> d.id)) continue;  // blank line
    if (!(ls >> d.image_path >> skin >> body))
      throw ValidationError(manifest_path.string() + ":" + std::to_string(lineno) +
                            ": expected 'id image skin_mask body_mask' ('-' for absent)");
    if (!seen.insert(d.id).second)
      throw ValidationError("duplicate sample id '" + d.id + "' in " + manifest_path.string());
    if (skin != "-") {
      d.skin_mask_path = skin;
      d.flags.skin = true;
    }
    if (body != "-") {
      d.body_mask_path = body;
      d.flags.body = true;
    }
    if (!d.flags.skin && !d.flags.body)
      throw ValidationError("sample '" + d.id + "' has neither mask");
    for (const std::string& rel : {d.image_path, d.skin_mask_path, d.body_mask_path}) {
      if (rel.empty()) continue;
      if (!std::filesystem::exists(ds.root / rel))
        throw InputError("sample '" + d.id + "': missing file " + (ds.root / rel).string());
    }
    ds.items.push_back(std::move(d));
  }
  return ds;
}

std::size_t Sample::containment_violations() const {
  if (!skin_mask || !body_mask) return 0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < skin_mask->v.size(); ++i)
    if (skin_mask->v[i] && !body_mask->v[i]) ++n;
  return n;
}

Sample load_sample(const Dataset& ds, const SampleDesc& desc, int working_size,
                   bool strict_containment) {
  if (working_size < 8) throw ValidationError("working size must be >= 8");
  Sample s;
  s.id = desc.id;
  s.flags = desc.flags;
  Image raw = read_ppm(ds.root / desc.image_path);
  auto load_mask = [&](const std::string& rel) {
    Mask m = read_mask(ds.root / rel);
    if (m.h != raw.h || m.w != raw.w)
      throw ValidationError("sample '" + desc.id + "': mask " + rel + " is " +
                            std::to_string(m.w) + "x" + std::to_string(m.h) +
                            " but image is " + std::to_string(raw.w) + "x" +
                            std::to_string(raw.h));
    return resize_nearest(m, working_size, working_size);
  };
  s.image = resize_bilinear(raw, working_size, working_size);
  if (desc.flags.skin) s.skin_mask = load_mask(desc.skin_mask_path);
  if (desc.flags.body) s.body_mask = load_mask(desc.body_mask_path);
  if (strict_containment && s.containment_violations() > 0)
    throw ValidationError("sample '" + desc.id + "': skin mask is not contained in body mask");
  return s;
}

void AugmentConfig::validate() const {
  if (flip_probability < 0 || flip_probability > 1)
    throw ValidationError("flip_probability must be in [0,1]");
  if (scale_min <= 0 || scale_min > scale_max)
    throw ValidationError("scale range must satisfy 0 < min <= max");
  if (crop_size < 1) throw ValidationError("crop_size must be positive");
}

AugmentDraw draw_augment(const AugmentConfig& cfg, int src_size, Rng& rng) {
  cfg.validate();
  AugmentDraw d;
  d.flip = rng.bernoulli(cfg.flip_probability);
  d.scale = rng.uniform(cfg.scale_min, cfg.scale_max);
  const int scaled = static_cast<int>(std::lround(src_size * d.scale));
  const int slack = scaled - cfg.crop_size;
  if (slack > 0) {
    d.off_y = static_cast<int>(rng.uniform_int(0, slack));
    d.off_x = static_cast<int>(rng.uniform_int(0, slack));
  }
  return d;
}

Sample apply_augment(const Sample& s, const AugmentDraw& d, int crop_size) {
  const int scaled = static_cast<int>(std::lround(s.image.h * d.scale));
  if (crop_size > scaled)
    throw ValidationError("crop size " + std::to_string(crop_size) +
                          " exceeds scaled image size " + std::to_string(scaled));
  if (d.off_y < 0 || d.off_x < 0 || d.off_y + crop_size > scaled || d.off_x + crop_size > scaled)
    throw ValidationError("augmentation crop offset out of range");

  Sample out;
  out.id = s.id;
  out.flags = s.flags;

  Image scaled_img = d.scale == 1.0 && scaled == s.image.h
                         ? s.image
                         : resize_bilinear(s.image, scaled, scaled);
  Image img(crop_size, crop_size);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < crop_size; ++y)
      for (int x = 0; x < crop_size; ++x) {
        const int sx = d.flip ? d.off_x + crop_size - 1 - x : d.off_x + x;
        img.at(c, y, x) = scaled_img.at(c, d.off_y + y, sx);
      }
  out.image = std::move(img);

  auto transform_mask = [&](const Mask& m) {
    Mask sm = d.scale == 1.0 && scaled == m.h ? m : resize_nearest(m, scaled, scaled);
    Mask cm(crop_size, crop_size);
    for (int y = 0; y < crop_size; ++y)
      for (int x = 0; x < crop_size; ++x) {
        const int sx = d.flip ? d.off_x + crop_size - 1 - x : d.off_x + x;
        cm.at(y, x) = sm.at(d.off_y + y, sx);
      }
    return cm;
  };
  if (s.skin_mask) out.skin_mask = transform_mask(*s.skin_mask);
  if (s.body_mask) out.body_mask = transform_mask(*s.body_mask);
  return out;
}

Sample augment(const Sample& s, const AugmentConfig& cfg, Rng& rng) {
  if (s.image.h != s.image.w) throw ValidationError("augment expects square samples");
  const AugmentDraw d = draw_augment(cfg, s.image.h, rng);
  return apply_augment(s, d, cfg.crop_size);
}

void BatchScheduler::Pool::reshuffle(Rng& rng) {
  order = ids;
  rng.shuffle(order);
  cursor = 0;
}

int BatchScheduler::Pool::take(Rng& rng) {
  if (cursor >= order.size()) reshuffle(rng);
  return order[cursor++];
}

BatchScheduler::BatchScheduler(std::vector<int> skin_pool, std::vector<int> body_pool,
                               int batch_size, std::uint64_t seed)
    : batch_size_(batch_size), rng_(seed) {
  if (skin_pool.empty() || body_pool.empty())
    throw ValidationError("batch scheduler requires non-empty skin and body pools");
  if (batch_size < 1) throw ValidationError("batch size must be positive");
  skin_.ids = std::move(skin_pool);
  body_.ids = std::move(body_pool);
  skin_.reshuffle(rng_);
  body_.reshuffle(rng_);
}

std::vector<int> BatchScheduler::next(bool& is_skin) {
  is_skin = (emitted_ % 2) == 0;
  Pool& pool = is_skin ? skin_ : body_;
  std::vector<int> batch(static_cast<std::size_t>(batch_size_));
  for (auto& b : batch) b = pool.take(rng_);
  ++emitted_;
  return batch;
}

}  // namespace skinseg
