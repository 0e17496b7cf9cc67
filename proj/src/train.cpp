#include "secap/train.hpp"

#include <cmath>
#include <cstdio>
#include <ostream>

#include "secap/errors.hpp"
#include "secap/optim.hpp"
#include "secap/random.hpp"

namespace secap {

namespace {

constexpr double kPi = 3.14159265358979323846;

double value_or_zero(const Tensor<float>& t) { return t.defined() ? static_cast<double>(t.item()) : 0.0; }

}  // namespace

double cosine_lr(std::size_t step, std::size_t total, double lr_max, double lr_min, std::size_t warmup) {
  if (step < warmup) return lr_max * static_cast<double>(step + 1) / static_cast<double>(warmup);
  if (total <= warmup || step >= total) return step >= total ? lr_min : lr_max;
  const double t = static_cast<double>(step - warmup) / static_cast<double>(total - warmup);
  const double w = 0.5 * (1.0 + std::cos(kPi * t));
  return w * lr_max + (1.0 - w) * lr_min;
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (!(lr_min <= lr_max) || lr_min < 0.0) throw ConfigError("need 0 <= lr_min <= lr_max");
  if (p < 1 || k < 1) throw ConfigError("P and K must be >= 1");
  if (k < 2) throw ConfigError("K must be >= 2 for triplet mining");
}

std::string EpochStats::log_line() const {
  char buf[320];
  std::snprintf(buf, sizeof buf,
                "epoch=%zu loss_total=%.6f loss_id_g=%.6f loss_tri_g=%.6f loss_id_l=%.6f loss_tri_l=%.6f "
                "loss_view=%.6f loss_orth=%.6f lr=%.6g",
                epoch, total, id_g, tri_g, id_l, tri_l, view, orth, lr);
  return buf;
}

std::map<std::int64_t, std::int64_t> identity_labels(const std::vector<SampleRecord>& records) {
  std::map<std::int64_t, std::int64_t> labels;
  for (const auto& r : records)
    if (!r.is_distractor()) labels.emplace(r.identity, 0);
  std::int64_t next = 0;
  for (auto& [id, label] : labels) label = next++;
  return labels;
}

std::size_t steps_per_epoch(std::size_t num_images, std::size_t p, std::size_t k) {
  const std::size_t batch = p * k;
  return std::max<std::size_t>(1, (num_images + batch - 1) / batch);
}

std::vector<EpochStats> train(SecapModel<float>& model, const std::vector<SampleRecord>& records,
                              const ImageLoader& load, const TrainConfig& cfg, std::ostream* log) {
  cfg.validate();
  const auto labels = identity_labels(records);
  if (labels.size() != model.config().num_ids)
    throw ConfigError("model has " + std::to_string(model.config().num_ids) + " identity classes but the data has " +
                      std::to_string(labels.size()));
  if (labels.size() < 2) throw ConfigError("training needs at least 2 identities");
  if (cfg.p > labels.size())
    throw ConfigError("P=" + std::to_string(cfg.p) + " exceeds the " + std::to_string(labels.size()) +
                      " training identities");
  if (!cfg.out_dir.empty()) {
    std::error_code ec;
    std::filesystem::create_directories(cfg.out_dir, ec);
    if (ec) throw IoError("cannot create " + cfg.out_dir.string() + ": " + ec.message());
  }

  const std::size_t per_epoch = steps_per_epoch(records.size(), cfg.p, cfg.k);
  const std::size_t total_steps = per_epoch * cfg.epochs;
  Sgd<float> sgd(model.parameters(), {cfg.momentum, cfg.weight_decay});
  const std::size_t num_views = model.config().num_views;

  CheckpointMeta meta;
  meta.model = model.config();
  meta.weights = cfg.weights;
  meta.seed = cfg.seed;
  auto checkpoint = [&](std::size_t epoch) {
    if (cfg.out_dir.empty()) return;
    meta.epoch = epoch;
    save_checkpoint(cfg.out_dir / "model.secap", model, meta);
  };

  std::vector<EpochStats> history;
  std::size_t step = 0;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    EpochStats stats;
    stats.epoch = epoch;
    for (std::size_t s = 0; s < per_epoch; ++s, ++step) {
      const std::uint64_t step_seed = derive_seed(cfg.seed, static_cast<std::uint64_t>(step));
      const auto batch = pk_sample(records, cfg.p, cfg.k, step_seed);
      std::vector<Tensor<float>> images;
      std::vector<std::int64_t> ids, views;
      images.reserve(batch.size());
      for (std::size_t i = 0; i < batch.size(); ++i) {
        images.push_back(augment(load(batch[i]), cfg.augment, derive_seed(step_seed, static_cast<std::uint64_t>(i))));
        ids.push_back(labels.at(batch[i].identity));
        views.push_back(view_label(batch[i].view, num_views));
      }

      const auto out = model.forward(make_batch<float>(images));
      const auto parts = model.losses(out, ids, views);
      const auto loss = total_loss(parts, cfg.weights);
      const double value = loss.item();
      if (!std::isfinite(value))
        throw NumericError("non-finite loss " + std::to_string(value) + " at epoch " + std::to_string(epoch) +
                           " step " + std::to_string(step));
      backward(loss);
      const double lr = cosine_lr(step, total_steps, cfg.lr_max, cfg.lr_min, cfg.warmup_steps);
      sgd.step(lr);

      stats.total += value;
      stats.id_g += value_or_zero(parts.id_global);
      stats.tri_g += value_or_zero(parts.tri_global);
      stats.id_l += value_or_zero(parts.id_local);
      stats.tri_l += value_or_zero(parts.tri_local);
      stats.view += value_or_zero(parts.view);
      stats.orth += value_or_zero(parts.orth);
      stats.lr = lr;
    }
    const double n = static_cast<double>(per_epoch);
    for (double* v : {&stats.total, &stats.id_g, &stats.tri_g, &stats.id_l, &stats.tri_l, &stats.view, &stats.orth})
      *v /= n;
    history.push_back(stats);
    if (log) *log << stats.log_line() << std::endl;
    if (cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0 && epoch != cfg.epochs) checkpoint(epoch);
  }
  checkpoint(cfg.epochs);
  return history;
}

}  // namespace secap
