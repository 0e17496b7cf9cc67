#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <ostream>
#include <set>

#include "secap/data.hpp"
#include "secap/errors.hpp"

namespace secap {

namespace {

constexpr std::size_t kCell = 8;
constexpr std::size_t kBins = 9;
constexpr double kPi = 3.14159265358979323846;

double euclidean(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw DimensionError("descriptor lengths differ");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

}  // namespace

std::vector<double> hog_descriptor(const Tensor<float>& image) {
  if (image.rank() != 3) throw DimensionError("hog_descriptor expects [C,H,W], got " + shape_str(image.shape()));
  const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  const auto src = image.data();
  std::vector<double> gray(h * w, 0.0);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t i = 0; i < h * w; ++i) gray[i] += src[ch * h * w + i] / static_cast<double>(c);

  const std::size_t ch_rows = std::max<std::size_t>(1, h / kCell);
  const std::size_t ch_cols = std::max<std::size_t>(1, w / kCell);
  std::vector<double> cells(ch_rows * ch_cols * kBins, 0.0);
  auto at = [&](std::size_t y, std::size_t x) { return gray[y * w + x]; };
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const double gx = at(y, std::min(x + 1, w - 1)) - at(y, x > 0 ? x - 1 : 0);
      const double gy = at(std::min(y + 1, h - 1), x) - at(y > 0 ? y - 1 : 0, x);
      const double mag = std::hypot(gx, gy);
      if (mag == 0.0) continue;
      double angle = std::atan2(gy, gx) * 180.0 / kPi;
      if (angle < 0.0) angle += 180.0;
      if (angle >= 180.0) angle -= 180.0;
      // Linear vote between the two nearest bin centres (10, 30, ..., 170).
      const double pos = angle / (180.0 / kBins) - 0.5;
      const double lo = std::floor(pos);
      const double frac = pos - lo;
      const auto b0 = static_cast<std::size_t>((static_cast<long>(lo) + static_cast<long>(kBins)) % kBins);
      const std::size_t b1 = (b0 + 1) % kBins;
      const std::size_t cy = std::min(y / kCell, ch_rows - 1), cx = std::min(x / kCell, ch_cols - 1);
      double* hist = &cells[(cy * ch_cols + cx) * kBins];
      hist[b0] += mag * (1.0 - frac);
      hist[b1] += mag * frac;
    }

  const std::size_t bh = std::min<std::size_t>(2, ch_rows), bw = std::min<std::size_t>(2, ch_cols);
  std::vector<double> out;
  out.reserve((ch_rows - bh + 1) * (ch_cols - bw + 1) * bh * bw * kBins);
  std::vector<double> block;
  for (std::size_t by = 0; by + bh <= ch_rows; ++by)
    for (std::size_t bx = 0; bx + bw <= ch_cols; ++bx) {
      block.clear();
      for (std::size_t y = by; y < by + bh; ++y)
        for (std::size_t x = bx; x < bx + bw; ++x)
          block.insert(block.end(), &cells[(y * ch_cols + x) * kBins], &cells[(y * ch_cols + x) * kBins] + kBins);
      double ss = 0.0;
      for (double v : block) ss += v * v;
      const double norm = std::sqrt(ss + 1e-10);
      for (double v : block) out.push_back(v / norm);
    }
  return out;
}

std::vector<std::size_t> select_representatives(const std::vector<std::vector<double>>& descriptors,
                                                std::size_t count) {
  const std::size_t n = descriptors.size();
  count = std::min(count, n);
  if (count == 0) return {};

  std::vector<double> dist(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) dist[i * n + j] = dist[j * n + i] = euclidean(descriptors[i], descriptors[j]);

  const std::size_t k = std::min<std::size_t>(3, n - 1);
  std::vector<std::vector<bool>> adj(n, std::vector<bool>(n, false));
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < n; ++i) {
    order.resize(n);
    std::iota(order.begin(), order.end(), 0);
    order.erase(order.begin() + static_cast<std::ptrdiff_t>(i));
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return dist[i * n + a] < dist[i * n + b]; });
    for (std::size_t j = 0; j < k; ++j) adj[i][order[j]] = adj[order[j]][i] = true;
  }

  std::vector<std::vector<std::size_t>> components;
  std::vector<bool> seen(n, false);
  for (std::size_t s = 0; s < n; ++s) {
    if (seen[s]) continue;
    std::vector<std::size_t> comp{s}, stack{s};
    seen[s] = true;
    while (!stack.empty()) {
      const std::size_t u = stack.back();
      stack.pop_back();
      for (std::size_t v = 0; v < n; ++v)
        if (adj[u][v] && !seen[v]) {
          seen[v] = true;
          comp.push_back(v);
          stack.push_back(v);
        }
    }
    std::sort(comp.begin(), comp.end());
    components.push_back(std::move(comp));
  }
  std::stable_sort(components.begin(), components.end(),
                   [](const auto& a, const auto& b) { return a.size() > b.size(); });

  // Sum of distances to the rest of the image's own cluster; the medoid minimizes it.
  std::vector<double> score(n, 0.0);
  for (const auto& comp : components)
    for (std::size_t i : comp)
      for (std::size_t j : comp) score[i] += dist[i * n + j];

  std::vector<std::size_t> picked;
  for (const auto& comp : components) {
    if (picked.size() == count) break;
    std::size_t best = comp.front();
    for (std::size_t i : comp)
      if (score[i] < score[best]) best = i;
    picked.push_back(best);
  }
  if (picked.size() < count) {
    std::vector<std::size_t> rest;
    for (std::size_t i = 0; i < n; ++i)
      if (std::find(picked.begin(), picked.end(), i) == picked.end()) rest.push_back(i);
    std::stable_sort(rest.begin(), rest.end(), [&](std::size_t a, std::size_t b) { return score[a] < score[b]; });
    for (std::size_t i = 0; picked.size() < count; ++i) picked.push_back(rest[i]);
  }
  return picked;
}

std::vector<SampleRecord> select_queries(const std::vector<SampleRecord>& records, std::size_t per_view,
                                         const ImageLoader& load, std::ostream* warnings) {
  std::map<std::int64_t, std::map<View, std::vector<SampleRecord>>> groups;
  std::set<View> views;
  for (const auto& r : records) {
    if (r.is_distractor()) continue;
    groups[r.identity][r.view].push_back(r);
    views.insert(r.view);
  }

  std::vector<SampleRecord> out;
  for (auto& [id, by_view] : groups)
    for (View v : views) {
      auto it = by_view.find(v);
      if (it == by_view.end()) {
        if (warnings)
          *warnings << "warning: identity " << id << " has no " << to_string(v) << " image; skipped\n";
        continue;
      }
      auto& group = it->second;
      std::sort(group.begin(), group.end(), [](const auto& a, const auto& b) { return a.path < b.path; });
      std::vector<std::vector<double>> desc;
      desc.reserve(group.size());
      for (const auto& r : group) desc.push_back(hog_descriptor(load(r)));
      for (std::size_t i : select_representatives(desc, per_view)) out.push_back(group[i]);
    }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.path < b.path; });
  return out;
}

}  // namespace secap
