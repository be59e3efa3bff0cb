#include "skinseg/synthgen.hpp"

#include <cmath>
#include <fstream>

#include "skinseg/errors.hpp"

namespace skinseg {

void SceneParams::validate() const {
  if (image_size < 32) throw ValidationError("scene image_size must be >= 32");
  if (skin_tone_palette.empty() || clothing_palette.empty())
    throw ValidationError("palettes must be non-empty");
  if (min_figures < 1 || max_figures < min_figures || max_figures > 3)
    throw ValidationError("figure count must satisfy 1 <= min <= max <= 3");
  if (background_distractor_rate < 0 || background_distractor_rate > 1)
    throw ValidationError("background_distractor_rate must be in [0,1]");
  if (lighting_tint_strength < 0 || lighting_tint_strength > 1)
    throw ValidationError("lighting_tint_strength must be in [0,1]");
}

namespace {

bool inside(const EllipseSpec& e, real y, real x) {
  const real dy = (y - e.cy) / e.ry;
  const real dx = (x - e.cx) / e.rx;
  return dy * dy + dx * dx <= 1.0;
}

void paint_ellipse(Mask& m, const EllipseSpec& e) {
  const int y0 = std::max(0, static_cast<int>(std::floor(e.cy - e.ry)));
  const int y1 = std::min(m.h - 1, static_cast<int>(std::ceil(e.cy + e.ry)));
  const int x0 = std::max(0, static_cast<int>(std::floor(e.cx - e.rx)));
  const int x1 = std::min(m.w - 1, static_cast<int>(std::ceil(e.cx + e.rx)));
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x)
      if (inside(e, y + 0.5, x + 0.5)) m.at(y, x) = 1;
}

bool intersects(const Mask& m, const EllipseSpec& e) {
  const int y0 = std::max(0, static_cast<int>(std::floor(e.cy - e.ry)));
  const int y1 = std::min(m.h - 1, static_cast<int>(std::ceil(e.cy + e.ry)));
  const int x0 = std::max(0, static_cast<int>(std::floor(e.cx - e.rx)));
  const int x1 = std::min(m.w - 1, static_cast<int>(std::ceil(e.cx + e.rx)));
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x)
      if (m.at(y, x) && inside(e, y + 0.5, x + 0.5)) return true;
  return false;
}

struct Figure {
  EllipseSpec torso, head, arm_l, arm_r, hand_l, hand_r, face, hair;
  int tone_index = 0;
  Rgb skin_tone, cloth_tone, hair_tone;
};

Figure make_figure(const SceneParams& p, Rng& rng, real cx_frac) {
  const real s = p.image_size;
  Figure f;
  const real cx = cx_frac * s + rng.uniform(-0.04, 0.04) * s;
  const real cy = rng.uniform(0.52, 0.62) * s;
  const real torso_rx = rng.uniform(0.10, 0.15) * s;
  const real torso_ry = rng.uniform(0.16, 0.24) * s;
  f.torso = {cy + torso_ry * 0.55, cx, torso_ry, torso_rx};
  const real head_r = rng.uniform(0.07, 0.10) * s;
  const real head_cy = f.torso.cy - f.torso.ry - head_r * 0.65;
  f.head = {head_cy, cx, head_r, head_r * rng.uniform(0.85, 1.0)};
  // Face: head minus a hair cap; implemented as a slightly lowered inner
  // ellipse so a hair crescent remains body-only.
  f.face = {head_cy + head_r * 0.22, cx, head_r * 0.78, f.head.rx * 0.88};
  f.hair = f.head;
  const real arm_ry = torso_ry * rng.uniform(0.72, 0.9);
  const real arm_rx = torso_rx * rng.uniform(0.32, 0.45);
  const real arm_dx = torso_rx + arm_rx * 0.7;
  f.arm_l = {f.torso.cy + torso_ry * 0.1, cx - arm_dx, arm_ry, arm_rx};
  f.arm_r = {f.torso.cy + torso_ry * 0.1, cx + arm_dx, arm_ry, arm_rx};
  // Hands/forearms: exposed skin at the lower end of each arm.
  f.hand_l = {f.arm_l.cy + arm_ry * 0.62, f.arm_l.cx, arm_ry * 0.38, arm_rx * 0.95};
  f.hand_r = {f.arm_r.cy + arm_ry * 0.62, f.arm_r.cx, arm_ry * 0.38, arm_rx * 0.95};
  f.tone_index = static_cast<int>(rng.uniform_int(0, static_cast<int>(p.skin_tone_palette.size()) - 1));
  f.skin_tone = p.skin_tone_palette[static_cast<std::size_t>(f.tone_index)];
  f.cloth_tone =
      p.clothing_palette[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(p.clothing_palette.size()) - 1))];
  f.hair_tone = {rng.uniform(0.05, 0.2), rng.uniform(0.04, 0.16), rng.uniform(0.03, 0.12)};
  return f;
}

}  // namespace

Scene generate_scene(const SceneParams& params, Rng& rng) {
  params.validate();
  const int s = params.image_size;

  for (int attempt = 0; attempt < 100; ++attempt) {
    Scene sc;
    sc.image = Image(s, s);
    sc.skin = Mask(s, s);
    sc.body = Mask(s, s);

    // Background: vertical gradient between two muted tones plus noise.
    const Rgb bg_top = {rng.uniform(0.35, 0.75), rng.uniform(0.35, 0.75), rng.uniform(0.35, 0.75)};
    const Rgb bg_bot = {rng.uniform(0.25, 0.65), rng.uniform(0.25, 0.65), rng.uniform(0.25, 0.65)};
    for (int y = 0; y < s; ++y) {
      const real t = static_cast<real>(y) / (s - 1);
      for (int x = 0; x < s; ++x)
        for (int c = 0; c < 3; ++c)
          sc.image.at(c, y, x) = bg_top[static_cast<std::size_t>(c)] * (1 - t) +
                                 bg_bot[static_cast<std::size_t>(c)] * t;
    }

    const int n_fig = static_cast<int>(rng.uniform_int(params.min_figures, params.max_figures));
    sc.info.n_figures = n_fig;
    std::vector<Figure> figures;
    for (int i = 0; i < n_fig; ++i) {
      const real cx_frac = n_fig == 1 ? 0.5 : 0.25 + 0.5 * static_cast<real>(i) / (n_fig - 1);
      figures.push_back(make_figure(params, rng, cx_frac));
      sc.info.figure_tone.push_back(figures.back().tone_index);
    }

    // Body silhouettes first so distractors can avoid them.
    for (const Figure& f : figures)
      for (const EllipseSpec* e : {&f.torso, &f.head, &f.arm_l, &f.arm_r}) paint_ellipse(sc.body, *e);
    if (sc.body.count() == 0) continue;  // degenerate placement, retry

    // Skin-colored distractor blobs outside every body region.
    const int budget = static_cast<int>(std::lround(params.background_distractor_rate * 5.0));
    for (int i = 0; i < budget; ++i) {
      const Rgb tone = params.skin_tone_palette[static_cast<std::size_t>(
          rng.uniform_int(0, static_cast<int>(params.skin_tone_palette.size()) - 1))];
      for (int tries = 0; tries < 50; ++tries) {
        EllipseSpec blob{rng.uniform(0.08, 0.92) * s, rng.uniform(0.08, 0.92) * s,
                         rng.uniform(0.03, 0.07) * s, rng.uniform(0.03, 0.07) * s};
        if (intersects(sc.body, blob)) continue;
        Mask tmp(s, s);
        paint_ellipse(tmp, blob);
        for (int y = 0; y < s; ++y)
          for (int x = 0; x < s; ++x)
            if (tmp.at(y, x))
              for (int c = 0; c < 3; ++c) sc.image.at(c, y, x) = tone[static_cast<std::size_t>(c)];
        sc.info.distractors.push_back(blob);
        break;
      }
    }

    // Paint figures in order; a later figure's clothing over-paints earlier
    // skin, so the skin mask is cleared/set along with the image.
    for (const Figure& f : figures) {
      auto paint_color = [&](const EllipseSpec& e, const Rgb& tone, bool is_skin) {
        Mask tmp(s, s);
        paint_ellipse(tmp, e);
        for (int y = 0; y < s; ++y)
          for (int x = 0; x < s; ++x)
            if (tmp.at(y, x)) {
              for (int c = 0; c < 3; ++c) sc.image.at(c, y, x) = tone[static_cast<std::size_t>(c)];
              sc.skin.at(y, x) = is_skin && sc.body.at(y, x) ? 1 : 0;
            }
      };
      paint_color(f.torso, f.cloth_tone, false);
      paint_color(f.arm_l, f.cloth_tone, false);
      paint_color(f.arm_r, f.cloth_tone, false);
      paint_color(f.hair, f.hair_tone, false);
      paint_color(f.face, f.skin_tone, true);
      paint_color(f.hand_l, f.skin_tone, true);
      paint_color(f.hand_r, f.skin_tone, true);
    }
    if (sc.skin.count() == 0) continue;

    // Per-pixel noise and a global lighting tint.
    const Rgb tint = {rng.uniform(0.85, 1.0), rng.uniform(0.85, 1.0), rng.uniform(0.85, 1.0)};
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < s; ++y)
        for (int x = 0; x < s; ++x) {
          real v = sc.image.at(c, y, x);
          v += rng.uniform(-params.pixel_noise, params.pixel_noise);
          v *= 1.0 - params.lighting_tint_strength +
               params.lighting_tint_strength * tint[static_cast<std::size_t>(c)];
          sc.image.at(c, y, x) = v < 0 ? 0 : (v > 1 ? 1 : v);
        }

    return sc;
  }
  throw RuntimeAbort("scene generation failed to place a non-degenerate figure in 100 attempts");
}

GenerateSummary generate_dataset(const SceneParams& params, int count, real skin_label_fraction,
                                 int val_count, const std::filesystem::path& out_dir) {
  params.validate();
  if (count < 2) throw ValidationError("dataset count must be >= 2");
  if (!(skin_label_fraction > 0 && skin_label_fraction < 1))
    throw ValidationError("skin_label_fraction must be in (0,1)");
  if (val_count < 1) throw ValidationError("val_count must be >= 1");

  std::error_code ec;
  std::filesystem::create_directories(out_dir / "images", ec);
  std::filesystem::create_directories(out_dir / "masks", ec);
  if (!std::filesystem::exists(out_dir / "images") || !std::filesystem::exists(out_dir / "masks"))
    throw InputError("cannot create output directory " + out_dir.string());

  // Rounding toward skin: any fractional sample goes to the skin pool.
  const int n_skin = static_cast<int>(std::ceil(count * skin_label_fraction - 1e-9));

  GenerateSummary sum;
  sum.train_manifest = out_dir / "train_manifest.txt";
  sum.val_manifest = out_dir / "val_manifest.txt";
  std::ofstream train_out(sum.train_manifest), val_out(sum.val_manifest);
  if (!train_out || !val_out) throw InputError("cannot write manifests in " + out_dir.string());
  train_out << "# id image skin_mask body_mask\n";
  val_out << "# id image skin_mask body_mask\n";

  char name[64];
  for (int i = 0; i < count + val_count; ++i) {
    const bool is_val = i >= count;
    if (is_val)
      std::snprintf(name, sizeof name, "val_%05d", i - count);
    else
      std::snprintf(name, sizeof name, "train_%05d", i);
    Rng rng(Rng::mix(params.seed, static_cast<std::uint64_t>(i)));
    Scene sc = generate_scene(params, rng);
    const std::string img_rel = std::string("images/") + name + ".ppm";
    write_ppm(out_dir / img_rel, sc.image);
    const std::string skin_rel = std::string("masks/") + name + "_skin.pgm";
    const std::string body_rel = std::string("masks/") + name + "_body.pgm";
    if (is_val) {
      write_mask(out_dir / skin_rel, sc.skin);
      write_mask(out_dir / body_rel, sc.body);
      val_out << name << " " << img_rel << " " << skin_rel << " " << body_rel << "\n";
      ++sum.validation;
    } else if (i < n_skin) {
      write_mask(out_dir / skin_rel, sc.skin);
      train_out << name << " " << img_rel << " " << skin_rel << " -\n";
      ++sum.train_skin;
    } else {
      write_mask(out_dir / body_rel, sc.body);
      train_out << name << " " << img_rel << " - " << body_rel << "\n";
      ++sum.train_body;
    }
  }
  return sum;
}

}  // namespace skinseg
