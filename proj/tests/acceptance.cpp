// Acceptance suite: one PASS/FAIL line per criterion. Exit status is nonzero
// when any criterion fails.

#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>

#include "oracles.hpp"
#include "secap/cli.hpp"
#include "secap/encoder.hpp"
#include "secap/evaluation.hpp"
#include "secap/lfrm.hpp"
#include "secap/model_check.hpp"
#include "secap/objectives.hpp"
#include "secap/pipeline.hpp"
#include "secap/prm.hpp"
#include "secap/train.hpp"

using namespace secap;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

int failures = 0;

void verdict(int n, bool pass, const std::string& detail) {
  if (!pass) ++failures;
  std::cout << (pass ? "PASS" : "FAIL") << " criterion " << n << ": " << detail << std::endl;
}

std::string fmt(double v, int precision = 4) {
  std::ostringstream s;
  s << std::setprecision(precision) << v;
  return s.str();
}

template <class T>
bool bit_equal(const Tensor<T>& a, const Tensor<T>& b) {
  return a.shape() == b.shape() && std::memcmp(a.data().data(), b.data().data(), a.numel() * sizeof(T)) == 0;
}

Tensor<double> random_tensor(Shape shape, std::uint64_t seed) {
  Rng rng(seed);
  Tensor<double> t(std::move(shape));
  for (auto& v : t.data()) v = rng.uniform(-1.0, 1.0);
  return t;
}

// 1. Gradient correctness.
void gradients() {
  const auto t0 = Clock::now();
  double worst = 0.0;
  std::string where;
  std::size_t coords = 0;
  for (PrmVariant variant : {PrmVariant::Attn, PrmVariant::Add, PrmVariant::Cat}) {
    for (bool olp : {false, true}) {
      ModelCheckOptions opts;
      opts.variant = variant;
      opts.olp = olp;
      const auto res = model_grad_check(opts);
      coords += res.coords_checked;
      if (res.max_rel_error >= worst) {
        worst = res.max_rel_error;
        where = std::string(to_string(variant)) + (olp ? "+olp " : " ") + res.worst_param;
      }
    }
  }
  const double secs = seconds_since(t0);
  verdict(1, worst < 1e-4 && secs < 300.0,
          "max relative error " + fmt(worst, 3) + " (" + where + ") over " + std::to_string(coords) +
              " coordinates, 6 configurations, " + fmt(secs, 3) + " s; need < 1e-4 and < 300 s");
}

// 2. Residual identities.
void residuals() {
  bool ok = true;
  std::vector<std::string> broken;
  auto expect = [&](bool cond, const std::string& what) {
    if (!cond) broken.push_back(what);
    ok = ok && cond;
  };

  {
    ParameterStore<double> store;
    Rng rng(4);
    EncoderBlock<double> block(store, "b", EncoderConfig::toy(), rng);
    block.zero_output();
    const auto x = random_tensor({2, 10, 64}, 11);
    expect(bit_equal(block(x), x), "encoder block");
  }
  for (PrmVariant variant : {PrmVariant::Attn, PrmVariant::Add, PrmVariant::Cat}) {
    ParameterStore<double> store;
    Rng rng(6);
    PromptRecalibration<double> prm(store, 8, 16, 4, 4, variant, true, rng);
    prm.zero_outputs();
    const auto out = prm(random_tensor({4, 16}, 7));
    bool same = true;
    for (std::size_t n = 0; n < 4; ++n) same = same && bit_equal(reshape(slice(out, 0, n, 1), {8, 16}), prm.bank().prompts);
    expect(same, "prompt re-calibration (" + std::string(to_string(variant)) + ")");
  }
  const auto fp = random_tensor({2, 8, 16}, 1), fl = random_tensor({2, 6, 16}, 2);
  {
    ParameterStore<double> store;
    Rng rng(8);
    LocalRefinement<double> lfrm(store, 16, 4, 4, rng);
    for (auto& block : lfrm.blocks()) {
      block.zero_outputs();
      const auto [p2, l2] = block(fp, fl);
      expect(bit_equal(p2, fp) && bit_equal(l2, fl), "two-way block");
    }
    lfrm.fusion().ffn.zero_output();
    bool zero = true;
    for (double v : lfrm(fp, fl).data()) zero = zero && v == 0.0;
    expect(zero, "fusion output");
  }
  std::string detail = "encoder block, prompt re-calibration (attn/add/cat), both two-way blocks, fusion zero";
  for (const auto& b : broken) detail += "; broken: " + b;
  verdict(2, ok, detail + "; bit-exact");
}

// 3. Metric oracle equivalence.
struct Instance {
  Tensor<double> dist;
  RetrievalMeta q, g;
};

Instance random_instance(Rng& rng) {
  const std::size_t nq = 1 + rng.below(20), ng = 1 + rng.below(100);
  const std::int64_t ids = 1 + static_cast<std::int64_t>(rng.below(6));
  const bool coarse = rng.below(3) == 0;
  Instance in{Tensor<double>({nq, ng}), {}, {}};
  for (std::size_t i = 0; i < nq; ++i) {
    in.q.ids.push_back(static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(ids))));
    in.q.cameras.push_back(static_cast<int>(rng.below(3)));
  }
  for (std::size_t j = 0; j < ng; ++j) {
    const bool distractor = rng.below(5) == 0;
    in.g.ids.push_back(distractor ? -1 : static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(ids))));
    in.g.cameras.push_back(static_cast<int>(rng.below(3)));
  }
  for (auto& v : in.dist.data()) v = coarse ? static_cast<double>(rng.below(4)) * 0.5 : rng.uniform(0.0, 2.0);
  return in;
}

void metric_oracle() {
  Rng rng(2024);
  double worst = 0.0;
  int compared = 0, invalid = 0, mismatched = 0;
  std::size_t excluded = 0, distractors = 0;
  for (int t = 0; t < 1000; ++t) {
    const auto in = random_instance(rng);
    for (auto id : in.g.ids) distractors += id < 0;
    EvalReport fast, slow;
    bool fast_threw = false, slow_threw = false;
    try {
      fast = cmc_map(in.dist, in.q, in.g);
    } catch (const ProtocolError&) {
      fast_threw = true;
    }
    try {
      slow = oracle_cmc_map(in.dist, in.q, in.g);
    } catch (const ProtocolError&) {
      slow_threw = true;
    }
    if (fast_threw || slow_threw) {
      mismatched += fast_threw != slow_threw;
      ++invalid;
      continue;
    }
    ++compared;
    excluded += fast.num_excluded;
    mismatched += fast.num_queries != slow.num_queries || fast.num_excluded != slow.num_excluded;
    worst = std::max({worst, std::abs(fast.rank1 - slow.rank1), std::abs(fast.mAP - slow.mAP)});
  }
  const RetrievalMeta q{{0}, {1}};
  const auto hand = cmc_map(Tensor<double>({1, 3}, {0.1, 0.2, 0.3}), q, {{0, 1, 0}, {2, 2, 3}});
  const bool ok = worst <= 1e-12 && mismatched == 0 && std::abs(hand.mAP - 0.8333) <= 1e-4;
  verdict(3, ok,
          "max |fast - oracle| " + fmt(worst, 3) + " on " + std::to_string(compared) + " instances (" +
              std::to_string(invalid) + " with no valid query, " + std::to_string(distractors) + " distractors, " +
              std::to_string(excluded) + " queries excluded by camera), " + std::to_string(mismatched) +
              " count mismatches; [match, non, match] mAP " + fmt(hand.mAP, 6) + "; need <= 1e-12 and 0.8333 +- 1e-4");
}

// 4. Loss unit values.
void losses() {
  ParameterStore<double> store;
  Rng rng(1);
  nn::Linear<double> head(store, "h", 4, 2, rng);
  head.zero();
  const std::vector<std::int64_t> labels{0, 1, 1};
  const double ce = id_ce_loss(random_tensor({3, 4}, 2), labels, head).item();

  const double orth = orthogonality_loss(Tensor<double>({1, 2}, {1, 2}), Tensor<double>({1, 2}, {3, -4})).item();

  Rng trng(17);
  double worst = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t ids = 2 + trng.below(3);
    std::vector<std::int64_t> y;
    for (std::size_t i = 0; i < ids; ++i)
      for (int k = 0; k < 2; ++k) y.push_back(static_cast<std::int64_t>(i));
    while (y.size() < 8 && trng.uniform() < 0.5) y.push_back(static_cast<std::int64_t>(trng.below(ids)));
    const std::size_t d = 1 + trng.below(5);
    std::vector<std::vector<double>> pts(y.size(), std::vector<double>(d));
    Tensor<double> x({y.size(), d});
    for (std::size_t i = 0; i < y.size(); ++i)
      for (std::size_t j = 0; j < d; ++j) x.data()[i * d + j] = pts[i][j] = trng.uniform(-2, 2);
    worst = std::max(worst, std::abs(soft_triplet_loss(x, y).item() - oracle::soft_triplet(pts, y)));
  }
  const bool ok = std::abs(ce - std::log(2.0)) <= 1e-6 && orth == 11.0 && worst <= 1e-10;
  verdict(4, ok,
          "uniform 2-class CE " + fmt(ce, 12) + " (ln 2 = " + fmt(std::log(2.0), 12) + "), orthogonality " +
              fmt(orth, 17) + ", soft triplet max |loss - enumeration| " + fmt(worst, 3) +
              " over 200 micro-batches; need ln 2 +- 1e-6, exactly 11, <= 1e-10");
}

// 5. Schedule endpoints.
void schedule() {
  bool ok = true;
  std::string detail;
  for (std::size_t total : {std::size_t{240}, std::size_t{1000}}) {
    const double first = cosine_lr(0, total, 8e-3, 1.6e-6), last = cosine_lr(total, total, 8e-3, 1.6e-6);
    ok = ok && first == 8e-3 && last == 1.6e-6;
    detail += "T=" + std::to_string(total) + ": lr(0)=" + fmt(first, 17) + " lr(T)=" + fmt(last, 17) + "; ";
  }
  verdict(5, ok, detail + "need 8e-3 and 1.6e-6 exactly");
}

// Criterion corpus: 64 identities, 2 views, 8 images per identity and view.
struct Corpus {
  std::vector<SampleRecord> train, test;
  std::map<std::string, Tensor<float>> images;
  ImageLoader loader() const {
    return [this](const SampleRecord& r) { return images.at(r.path); };
  }
};

Corpus make_corpus() {
  SynthConfig sc;
  sc.num_ids = 64;
  sc.images_per_id_per_view = 8;
  sc.seed = 1;
  Corpus c;
  for (auto& s : synthesize(sc)) {
    (s.record.path.rfind("train/", 0) == 0 ? c.train : c.test).push_back(s.record);
    c.images.emplace(s.record.path, std::move(s.image));
  }
  return c;
}

// Mean orthogonality loss over held-out batches of 64.
double held_out_orthogonality(const SecapModel<float>& model, const Corpus& c) {
  NoGradGuard guard;
  const auto load = c.loader();
  double total = 0.0;
  std::size_t batches = 0;
  for (std::size_t b = 0; b < c.test.size(); b += 64) {
    std::vector<Tensor<float>> images;
    for (std::size_t i = b; i < std::min(c.test.size(), b + 64); ++i) images.push_back(load(c.test[i]));
    const auto out = model.forward(make_batch<float>(images));
    total += orthogonality_loss(out.encoder.x_inv, out.encoder.view_feat).item();
    ++batches;
  }
  return total / static_cast<double>(batches);
}

struct CrossView {
  double rank1 = 0, mAP = 0;
};

CrossView cross_view(const SecapModel<float>& model, const Corpus& c) {
  const auto results = evaluate_protocols(model, c.test, c.loader(), {Protocol::AerialToGround, Protocol::GroundToAerial});
  return {(results[0].report.rank1 + results[1].report.rank1) / 2, (results[0].report.mAP + results[1].report.mAP) / 2};
}

// The toy preset: default SGD and cosine schedule, no augmentation.
TrainConfig toy_preset(std::uint64_t seed) {
  TrainConfig tc;
  tc.epochs = 30;
  tc.seed = seed;
  tc.augment.enabled = false;
  return tc;
}

struct Run {
  CrossView init, final;
  double orth_init = 0, orth_final = 0, seconds = 0;
};

Run train_and_score(const Corpus& c, const std::string& ablation, std::uint64_t seed, bool orth) {
  ModelConfig mc = ModelConfig::toy(32);
  mc.ablation = Ablation::parse(ablation);
  mc.seed = seed;
  SecapModel<float> model(mc);
  Run r;
  const auto t0 = Clock::now();
  r.init = cross_view(model, c);
  if (orth) r.orth_init = held_out_orthogonality(model, c);
  train(model, c.train, c.loader(), toy_preset(seed));
  r.final = cross_view(model, c);
  r.seconds = seconds_since(t0);
  if (orth) r.orth_final = held_out_orthogonality(model, c);
  return r;
}

// 6, 7 and 9 share the full-model runs.
void training_criteria() {
  const Corpus c = make_corpus();
  const double chance = 1.0 / 32.0;

  std::map<std::string, std::vector<Run>> runs;
  for (std::uint64_t seed : {0, 1, 2})
    for (const char* ablation : {"none", "no-prm", "baseline"}) {
      const bool full = std::string(ablation) == "none";
      runs[ablation].push_back(train_and_score(c, ablation, seed, full && seed == 0));
      const auto& r = runs[ablation].back();
      std::cout << "  " << ablation << " seed " << seed << ": cross-view rank1 " << fmt(r.final.rank1) << " mAP "
                << fmt(r.final.mAP) << " (init rank1 " << fmt(r.init.rank1) << " mAP " << fmt(r.init.mAP) << ", "
                << fmt(r.seconds, 3) << " s)" << std::endl;
    }

  const Run& main_run = runs["none"][0];
  verdict(6, main_run.final.rank1 >= 3 * chance && main_run.seconds < 900.0,
          "cross-view rank-1 " + fmt(main_run.final.rank1) + " after 30 epochs (untrained " +
              fmt(main_run.init.rank1) + ", chance " + fmt(chance) + "), " + fmt(main_run.seconds, 3) +
              " s; need >= " + fmt(3 * chance) + " and < 900 s");

  auto mean_map = [&](const std::string& name) {
    double s = 0.0;
    for (const auto& r : runs[name]) s += r.final.mAP;
    return s / static_cast<double>(runs[name].size());
  };
  const double full = mean_map("none"), no_prm = mean_map("no-prm"), base = mean_map("baseline");
  verdict(7, full >= no_prm && full >= base,
          "mean cross-view mAP over seeds 0-2: full " + fmt(full) + ", no-prm " + fmt(no_prm) + ", baseline " +
              fmt(base) + "; need full >= both");

  verdict(9, main_run.orth_final < main_run.orth_init,
          "held-out orthogonality loss " + fmt(main_run.orth_init, 6) + " at init, " + fmt(main_run.orth_final, 6) +
              " after training; need lower after");
}

// 8. Determinism through the command-line tool.
struct Cli {
  int code;
  std::string out;
};

Cli cli(std::vector<std::string> args) {
  args.insert(args.begin(), "secap");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void determinism() {
  const fs::path root = fs::temp_directory_path() / "secap_acceptance";
  fs::remove_all(root);
  const auto manifest = (root / "data" / "manifest.tsv").string();
  bool ok = cli({"gen-data", "--out", (root / "data").string(), "--ids", "64", "--per-view", "8", "--seed", "1"}).code ==
            kExitOk;
  std::string ckpt[2], report[2];
  for (int i = 0; i < 2; ++i) {
    const auto dir = root / ("run" + std::to_string(i));
    ok = ok && cli({"train", "--manifest", manifest, "--out", dir.string(), "--epochs", "3", "--seed", "5"}).code ==
                   kExitOk;
    ckpt[i] = slurp(dir / "model.secap");
    const auto ev = cli({"eval", "--checkpoint", (dir / "model.secap").string(), "--manifest", manifest});
    ok = ok && ev.code == kExitOk;
    report[i] = ev.out;
  }
  ok = ok && !ckpt[0].empty() && ckpt[0] == ckpt[1] && !report[0].empty() && report[0] == report[1];
  verdict(8, ok,
          "two 3-epoch training runs with identical flags: checkpoints " + std::to_string(ckpt[0].size()) + " bytes, " +
              (ckpt[0] == ckpt[1] ? "identical" : "different") + "; eval reports " +
              (report[0] == report[1] ? "identical" : "different"));
  fs::remove_all(root);
}

}  // namespace

int main() {
  const auto t0 = Clock::now();
  try {
    gradients();
    residuals();
    metric_oracle();
    losses();
    schedule();
    determinism();
    training_criteria();
  } catch (const std::exception& e) {
    std::cout << "FAIL acceptance suite aborted: " << e.what() << std::endl;
    return 1;
  }
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << " in "
            << fmt(seconds_since(t0), 4) << " s" << std::endl;
  return failures == 0 ? 0 : 1;
}
