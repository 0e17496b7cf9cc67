#include <algorithm>
#include <cmath>
#include <map>

#include "secap/data.hpp"
#include "secap/errors.hpp"
#include "secap/random.hpp"

namespace secap {

std::vector<SampleRecord> pk_sample(const std::vector<SampleRecord>& records, std::size_t p, std::size_t k,
                                    std::uint64_t seed) {
  if (p == 0 || k == 0) throw ContractError("pk_sample needs P >= 1 and K >= 1");
  std::map<std::int64_t, std::vector<std::size_t>> by_id;
  for (std::size_t i = 0; i < records.size(); ++i)
    if (!records[i].is_distractor()) by_id[records[i].identity].push_back(i);
  if (by_id.size() < p)
    throw ContractError("pk_sample: P=" + std::to_string(p) + " but only " + std::to_string(by_id.size()) +
                        " identities available");

  std::vector<const std::vector<std::size_t>*> ids;
  for (const auto& [id, members] : by_id) ids.push_back(&members);

  Rng rng(seed);
  for (std::size_t i = 0; i < p; ++i) std::swap(ids[i], ids[i + rng.below(ids.size() - i)]);

  std::vector<SampleRecord> batch;
  batch.reserve(p * k);
  for (std::size_t i = 0; i < p; ++i) {
    std::vector<std::size_t> pool = *ids[i];
    const std::size_t take = std::min(k, pool.size());
    for (std::size_t j = 0; j < take; ++j) std::swap(pool[j], pool[j + rng.below(pool.size() - j)]);
    for (std::size_t j = 0; j < take; ++j) batch.push_back(records[pool[j]]);
    // Short identities: every image once, then draws with replacement.
    for (std::size_t j = take; j < k; ++j) batch.push_back(records[pool[rng.below(pool.size())]]);
  }
  return batch;
}

Tensor<float> augment(const Tensor<float>& image, const AugmentPolicy& policy, std::uint64_t seed,
                      AugmentTrace* trace) {
  if (image.rank() != 3) throw DimensionError("augment expects [C,H,W], got " + shape_str(image.shape()));
  AugmentTrace local;
  AugmentTrace& tr = trace ? *trace : local;
  tr = AugmentTrace{};
  if (!policy.enabled) return Tensor<float>(image.shape(), std::vector<float>(image.data().begin(), image.data().end()));

  const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2), pad = policy.pad;
  Rng rng(seed);
  tr.crop_y = rng.below(2 * pad + 1);
  tr.crop_x = rng.below(2 * pad + 1);
  tr.jitter.resize(c);
  for (auto& j : tr.jitter) j = rng.uniform(policy.jitter_lo, policy.jitter_hi);

  Tensor<float> out(image.shape());
  const auto src = image.data();
  auto dst = out.data();
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < h; ++y) {
      // Row y of the crop is row (y + crop_y - pad) of the source, zero outside.
      const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + tr.crop_y) - static_cast<std::ptrdiff_t>(pad);
      for (std::size_t x = 0; x < w; ++x) {
        const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(x + tr.crop_x) - static_cast<std::ptrdiff_t>(pad);
        float v = 0.0f;
        if (sy >= 0 && sx >= 0 && sy < static_cast<std::ptrdiff_t>(h) && sx < static_cast<std::ptrdiff_t>(w))
          v = src[(ch * h + static_cast<std::size_t>(sy)) * w + static_cast<std::size_t>(sx)];
        dst[(ch * h + y) * w + x] = static_cast<float>(v * tr.jitter[ch]);
      }
    }

  if (rng.uniform() < policy.erase_prob) {
    const double total = static_cast<double>(h * w);
    for (int attempt = 0; attempt < 100 && !tr.erased; ++attempt) {
      const double area = rng.uniform(policy.erase_area_lo, policy.erase_area_hi) * total;
      const double aspect =
          std::exp(rng.uniform(std::log(policy.erase_aspect_lo), std::log(policy.erase_aspect_hi)));
      const auto eh = static_cast<std::size_t>(std::lround(std::sqrt(area * aspect)));
      const auto ew = static_cast<std::size_t>(std::lround(std::sqrt(area / aspect)));
      const double frac = static_cast<double>(eh * ew) / total;
      if (eh == 0 || ew == 0 || eh > h || ew > w || frac < policy.erase_area_lo || frac > policy.erase_area_hi)
        continue;
      tr.erased = true;
      tr.erase_h = eh;
      tr.erase_w = ew;
      tr.erase_y = rng.below(h - eh + 1);
      tr.erase_x = rng.below(w - ew + 1);
    }
    if (tr.erased)
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t y = tr.erase_y; y < tr.erase_y + tr.erase_h; ++y)
          for (std::size_t x = tr.erase_x; x < tr.erase_x + tr.erase_w; ++x)
            dst[(ch * h + y) * w + x] = static_cast<float>(rng.uniform());
  }
  return out;
}

}  // namespace secap
