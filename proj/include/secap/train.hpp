#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "secap/checkpoint.hpp"
#include "secap/data.hpp"
#include "secap/model.hpp"

namespace secap {

// Cosine decay from lr_max at step `warmup` to lr_min at step `total`, with an
// optional linear ramp before it. Both endpoints are hit exactly.
double cosine_lr(std::size_t step, std::size_t total, double lr_max, double lr_min, std::size_t warmup = 0);

struct TrainConfig {
  std::size_t epochs = 120;
  double lr_max = 8e-3;
  double lr_min = 1.6e-6;
  std::size_t warmup_steps = 0;
  std::size_t p = 16;
  std::size_t k = 4;
  std::uint64_t seed = 0;
  LossWeights weights;
  double momentum = 0.9;
  double weight_decay = 0.0;
  AugmentPolicy augment;
  // Checkpoints land in out_dir/model.secap every `checkpoint_every` epochs
  // and after the last one; an empty out_dir disables them.
  std::filesystem::path out_dir;
  std::size_t checkpoint_every = 20;

  void validate() const;
};

struct EpochStats {
  std::size_t epoch = 0;  // 1-based
  double total = 0, id_g = 0, tri_g = 0, id_l = 0, tri_l = 0, view = 0, orth = 0;
  double lr = 0;  // learning rate of the epoch's last step

  std::string log_line() const;
};

// Contiguous classifier labels for the identities present in `records`.
std::map<std::int64_t, std::int64_t> identity_labels(const std::vector<SampleRecord>& records);

std::size_t steps_per_epoch(std::size_t num_images, std::size_t p, std::size_t k);

// Runs P x K mini-batch SGD over `records`. Each finished epoch is appended to
// the returned history and, when `log` is set, printed as one line. Throws
// NumericError on a non-finite loss.
std::vector<EpochStats> train(SecapModel<float>& model, const std::vector<SampleRecord>& records,
                              const ImageLoader& load, const TrainConfig& cfg, std::ostream* log = nullptr);

}  // namespace secap
