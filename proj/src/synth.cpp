#include <algorithm>
#include <array>
#include <cmath>
#include <system_error>

#include "secap/data.hpp"
#include "secap/errors.hpp"
#include "secap/random.hpp"
#include "secap/rten.hpp"

namespace secap {

namespace {

// Appearance code layout: upper-body rgb, lower-body rgb, hair rgb, stripe
// frequency, stripe phase, body width. All coordinates in [0, 1].
constexpr std::size_t kLatentDim = 12;
constexpr double kTwoPi = 6.283185307179586476925286766559;

using Rgb = std::array<double, 3>;

struct ViewStyle {
  double squash;      // vertical foreshortening of the figure
  double head_extra;  // head share grows when seen from above
  Rgb tint;
  double tint_mix;
  Rgb background;
  int first_camera;
};

ViewStyle style_for(View v, double s) {
  switch (v) {
    case View::Aerial: return {1.0 - 0.4 * s, 0.12 * s, {0.55, 0.6, 0.75}, 0.3 * s, {0.52, 0.52, 0.5}, 3};
    case View::GroundOblique: return {1.0 - 0.15 * s, 0.04 * s, {0.7, 0.55, 0.4}, 0.15 * s, {0.42, 0.4, 0.36}, 5};
    case View::GroundFrontal: break;
  }
  return {1.0, 0.0, {0.0, 0.0, 0.0}, 0.0, {0.36, 0.45, 0.32}, 1};
}

std::vector<View> views_for(std::size_t num_views) {
  if (num_views == 1) return {View::GroundFrontal};
  if (num_views == 2) return {View::Aerial, View::GroundFrontal};
  return {View::Aerial, View::GroundFrontal, View::GroundOblique};
}

double distance(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

std::vector<std::vector<double>> identity_codes(std::size_t n, std::uint64_t seed) {
  Rng rng(derive_seed(seed, "identities"));
  std::vector<std::vector<double>> codes;
  std::size_t attempts = 0;
  while (codes.size() < n) {
    if (++attempts > 1000000)
      throw ConfigError("cannot place " + std::to_string(n) + " identities with the required separation");
    std::vector<double> c(kLatentDim);
    for (auto& v : c) v = rng.uniform();
    bool ok = true;
    for (const auto& other : codes)
      if (distance(c, other) < kSynthIdentityMargin) {
        ok = false;
        break;
      }
    if (ok) codes.push_back(std::move(c));
  }
  return codes;
}

std::vector<double> jittered(const std::vector<double>& code, Rng& rng) {
  // Per-coordinate bound a gives a jitter norm of at most a * sqrt(dim) = margin / 5.
  const double a = kSynthIdentityMargin / (5.0 * std::sqrt(static_cast<double>(kLatentDim)));
  std::vector<double> out(code);
  for (auto& v : out) v = std::clamp(v + rng.uniform(-a, a), 0.0, 1.0);
  return out;
}

Tensor<float> render(const std::vector<double>& z, View view, const SynthConfig& cfg, Rng& rng) {
  const std::size_t h = cfg.height, w = cfg.width;
  const ViewStyle st = style_for(view, cfg.view_strength);
  auto tinted = [&](Rgb c) {
    for (std::size_t i = 0; i < 3; ++i) c[i] = (1.0 - st.tint_mix) * c[i] + st.tint_mix * st.tint[i];
    return c;
  };
  const Rgb upper = tinted({z[0], z[1], z[2]});
  const Rgb lower = tinted({z[3], z[4], z[5]});
  const Rgb hair = tinted({z[6], z[7], z[8]});
  const double stripes = 2.0 + 4.0 * z[9];
  const double phase = z[10];
  const double half_width = (0.45 + 0.3 * z[11]) * 0.5 * static_cast<double>(w);

  const double dy = rng.uniform(-2.0, 2.0), dx = rng.uniform(-2.0, 2.0);
  const double brightness = rng.uniform(0.9, 1.1);
  const double fig_h = 0.9 * static_cast<double>(h) * st.squash;
  const double top = 0.5 * (static_cast<double>(h) - fig_h) + dy;
  const double head_end = 0.18 + st.head_extra;
  const double torso_end = head_end + (0.55 - 0.18) * (1.0 - head_end) / (1.0 - 0.18);
  const double cx = 0.5 * static_cast<double>(w) + dx;

  Tensor<float> img({3, h, w});
  auto px = img.data();
  for (std::size_t y = 0; y < h; ++y) {
    const double fy = (static_cast<double>(y) + 0.5 - top) / fig_h;
    for (std::size_t x = 0; x < w; ++x) {
      const double off = static_cast<double>(x) + 0.5 - cx;
      Rgb c = st.background;
      const double shade = 0.9 + 0.2 * static_cast<double>(y) / static_cast<double>(h);
      for (auto& v : c) v *= shade;
      if (fy >= 0.0 && fy < head_end) {
        if (std::abs(off) < 0.5 * half_width) c = hair;
      } else if (fy >= head_end && fy < torso_end) {
        if (std::abs(off) < half_width) {
          const double band = 0.75 + 0.25 * std::sin(kTwoPi * (stripes * (fy - head_end) / (torso_end - head_end) + phase));
          c = {upper[0] * band, upper[1] * band, upper[2] * band};
        }
      } else if (fy >= torso_end && fy < 1.0) {
        const double a = std::abs(off);
        if (a < 0.85 * half_width && a > 0.12 * half_width) c = lower;
      }
      for (std::size_t ch = 0; ch < 3; ++ch)
        px[(ch * h + y) * w + x] = static_cast<float>(std::clamp(c[ch] * brightness + 0.03 * rng.normal(), 0.0, 1.0));
    }
  }
  return img;
}

}  // namespace

void SynthConfig::validate() const {
  if (num_ids == 0 || images_per_id_per_view == 0 || num_views == 0 || height == 0 || width == 0)
    throw ConfigError("synthetic corpus counts and image size must all be >= 1");
  if (num_views > 3) throw ConfigError("at most 3 views (aerial, ground-frontal, ground-oblique)");
  if (test_fraction < 0.0 || test_fraction > 1.0) throw ConfigError("test_fraction must lie in [0, 1]");
}

std::vector<SynthSample> synthesize(const SynthConfig& cfg) {
  cfg.validate();
  const auto codes = identity_codes(cfg.num_ids, cfg.seed);
  const auto views = views_for(cfg.num_views);
  const auto num_test =
      static_cast<std::size_t>(std::lround(cfg.test_fraction * static_cast<double>(cfg.num_ids)));
  const std::size_t first_test = cfg.num_ids - num_test;

  std::vector<SynthSample> out;
  auto emit = [&](std::int64_t id, View view, std::size_t j, bool test, const std::vector<double>& base) {
    const ViewStyle st = style_for(view, cfg.view_strength);
    SynthSample s;
    s.record.identity = id;
    s.record.view = view;
    s.record.camera = st.first_camera + static_cast<int>(j % 2);
    s.record.frame = static_cast<std::int64_t>(j);
    s.record.path = std::string(test ? "test/" : "train/") +
                    format_image_name({id, s.record.camera, s.record.frame}, "rten");
    Rng rng(derive_seed(cfg.seed, s.record.path));
    s.latent = jittered(base, rng);
    s.image = render(s.latent, view, cfg, rng);
    out.push_back(std::move(s));
  };

  for (std::size_t id = 0; id < cfg.num_ids; ++id)
    for (View v : views)
      for (std::size_t j = 0; j < cfg.images_per_id_per_view; ++j)
        emit(static_cast<std::int64_t>(id), v, j, id >= first_test, codes[id]);

  Rng drng(derive_seed(cfg.seed, "distractors"));
  for (std::size_t j = 0; j < cfg.distractors; ++j) {
    std::vector<double> code(kLatentDim);
    for (auto& v : code) v = drng.uniform();
    emit(-1, views[j % views.size()], j, true, code);
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.record.path < b.record.path; });
  return out;
}

Manifest generate_synthetic(const SynthConfig& cfg, const std::filesystem::path& out_dir) {
  const auto samples = synthesize(cfg);
  std::error_code ec;
  for (const char* sub : {"train", "test"}) {
    std::filesystem::create_directories(out_dir / sub, ec);
    if (ec) throw IoError("cannot create " + (out_dir / sub).string() + ": " + ec.message());
  }
  Manifest m;
  m.num_views = cfg.num_views;
  m.channels = 3;
  m.height = cfg.height;
  m.width = cfg.width;
  for (const auto& s : samples) {
    write_rten(out_dir / s.record.path, s.image);
    m.records.push_back(s.record);
  }
  m.normalize();
  write_manifest(out_dir / "manifest.tsv", m);
  return m;
}

}  // namespace secap
