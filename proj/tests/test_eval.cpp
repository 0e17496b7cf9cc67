#include <cmath>
#include <map>
#include <numeric>

#include "doctest.h"
#include "secap/errors.hpp"
#include "secap/evaluation.hpp"
#include "secap/random.hpp"

using namespace secap;

namespace {

Tensor<double> dist_of(std::size_t nq, std::size_t ng, std::vector<double> v) {
  return Tensor<double>({nq, ng}, std::move(v));
}

struct Instance {
  Tensor<double> dist;
  RetrievalMeta q, g;
};

// Small random retrieval problem with distractors, shared cameras and
// occasional tied distances.
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

bool same_report(const EvalReport& a, const EvalReport& b, double tol) {
  return std::abs(a.rank1 - b.rank1) <= tol && std::abs(a.mAP - b.mAP) <= tol && a.num_queries == b.num_queries &&
         a.num_gallery == b.num_gallery && a.num_excluded == b.num_excluded;
}

}  // namespace

TEST_CASE("cosine distance examples") {
  const Tensor<float> q({3, 2}, std::vector<float>{1, 0, 0, 2, -3, 0});
  const Tensor<float> g({1, 2}, std::vector<float>{5, 0});
  const auto d = distance_matrix(q, g);
  REQUIRE(d.shape() == Shape{3, 1});
  CHECK(d.data()[0] == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(d.data()[1] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(d.data()[2] == doctest::Approx(2.0).epsilon(1e-12));

  Rng rng(2);
  Tensor<float> a({7, 5}), b({9, 5});
  for (auto& v : a.data()) v = static_cast<float>(rng.uniform(-1, 1));
  for (auto& v : b.data()) v = static_cast<float>(rng.uniform(-1, 1));
  const auto ab = distance_matrix(a, b);
  for (double v : ab.data()) {
    CHECK(v >= 0.0);
    CHECK(v <= 2.0);
  }
  CHECK_THROWS_AS(distance_matrix(a, Tensor<float>({2, 4})), DimensionError);
}

TEST_CASE("rank-1 and mAP by hand") {
  RetrievalMeta q{{0}, {1}};

  // Single correct match ranked first.
  auto one = cmc_map(dist_of(1, 2, {0.1, 0.5}), q, {{0, 1}, {2, 2}});
  CHECK(one.rank1 == 1.0);
  CHECK(one.mAP == 1.0);

  // Ranked pattern [match, non, match].
  auto rep = cmc_map(dist_of(1, 3, {0.1, 0.2, 0.3}), q, {{0, 1, 0}, {2, 2, 3}});
  CHECK(rep.rank1 == 1.0);
  CHECK(rep.mAP == doctest::Approx(0.8333).epsilon(1e-4 / 0.8333));
  CHECK(rep.mAP == doctest::Approx((1.0 + 2.0 / 3.0) / 2.0).epsilon(1e-15));

  // Distractor ranked first is a miss.
  auto dis = cmc_map(dist_of(1, 2, {0.1, 0.2}), q, {{-1, 0}, {2, 2}});
  CHECK(dis.rank1 == 0.0);
  CHECK(dis.mAP == 0.5);

  // The only same-identity entry shares the query's camera: excluded.
  RetrievalMeta two{{0, 1}, {1, 1}};
  auto ex = cmc_map(dist_of(2, 3, {0.1, 0.2, 0.3, 0.3, 0.2, 0.1}), two, {{0, 1, 1}, {1, 2, 3}});
  CHECK(ex.num_excluded == 1);
  CHECK(ex.num_queries == 2);
  CHECK(ex.rank1 == 1.0);
  CHECK(ex.mAP == 1.0);
  // Without the camera rule the entry counts.
  auto kept = cmc_map(dist_of(2, 3, {0.1, 0.2, 0.3, 0.3, 0.2, 0.1}), two, {{0, 1, 1}, {1, 2, 3}}, {false});
  CHECK(kept.num_excluded == 0);

  // A same-camera same-identity entry is removed, not counted as a miss.
  auto skip = cmc_map(dist_of(1, 3, {0.1, 0.2, 0.3}), q, {{0, 0, 1}, {1, 2, 2}});
  CHECK(skip.rank1 == 1.0);
  CHECK(skip.mAP == 1.0);

  // Ties resolve to the lower gallery index.
  auto tie = cmc_map(dist_of(1, 2, {0.4, 0.4}), q, {{1, 0}, {2, 2}});
  CHECK(tie.rank1 == 0.0);
  CHECK(tie.mAP == 0.5);

  CHECK(rep.to_json().find("\"mAP\": 0.833333") != std::string::npos);
}

TEST_CASE("scoring errors") {
  RetrievalMeta q{{0}, {1}};
  // Distractor-only gallery.
  CHECK_THROWS_AS(cmc_map(dist_of(1, 2, {0.1, 0.2}), q, {{-1, -1}, {2, 3}}), ProtocolError);
  CHECK_THROWS_AS(oracle_cmc_map(dist_of(1, 2, {0.1, 0.2}), q, {{-1, -1}, {2, 3}}), ProtocolError);
  CHECK_THROWS_AS(cmc_map(dist_of(1, 1, {0.1}), {{-1}, {1}}, {{0}, {2}}), ContractError);
  CHECK_THROWS_AS(cmc_map(dist_of(1, 2, {0.1, 0.2}), q, {{0}, {2}}), DimensionError);
  CHECK_THROWS_AS(cmc_map(dist_of(1, 1, {0.1}), q, RetrievalMeta{}), ProtocolError);
}

TEST_CASE("scorer agrees with the rank-counting oracle") {
  Rng rng(2024);
  int compared = 0, both_invalid = 0;
  for (int t = 0; t < 1000; ++t) {
    const auto in = random_instance(rng);
    const ValidityRule rule{rng.below(4) != 0};
    bool fast_threw = false, slow_threw = false;
    EvalReport fast, slow;
    try {
      fast = cmc_map(in.dist, in.q, in.g, rule);
    } catch (const ProtocolError&) {
      fast_threw = true;
    }
    try {
      slow = oracle_cmc_map(in.dist, in.q, in.g, rule);
    } catch (const ProtocolError&) {
      slow_threw = true;
    }
    REQUIRE(fast_threw == slow_threw);
    if (fast_threw) {
      ++both_invalid;
      continue;
    }
    ++compared;
    CHECK(same_report(fast, slow, 1e-12));
    CHECK(fast.rank1 <= 1.0);
    CHECK(fast.mAP <= 1.0);
    CHECK(fast.mAP >= 0.0);
  }
  CHECK(compared > 900);
  MESSAGE("oracle comparisons: " << compared << ", all-invalid instances: " << both_invalid);
}

TEST_CASE("scoring depends on ranks only") {
  Rng rng(77);
  for (int t = 0; t < 100; ++t) {
    auto in = random_instance(rng);
    for (auto& v : in.dist.data()) v = rng.uniform(0.0, 2.0);  // no ties
    EvalReport base;
    try {
      base = cmc_map(in.dist, in.q, in.g);
    } catch (const ProtocolError&) {
      continue;
    }

    // Strictly increasing transform.
    Tensor<double> warped(in.dist.shape());
    for (std::size_t i = 0; i < in.dist.numel(); ++i) warped.data()[i] = std::exp(3.0 * in.dist.data()[i]) - 7.0;
    CHECK(same_report(base, cmc_map(warped, in.q, in.g), 1e-12));

    // Gallery permutation.
    const std::size_t nq = in.q.ids.size(), ng = in.g.ids.size();
    std::vector<std::size_t> perm(ng);
    std::iota(perm.begin(), perm.end(), 0);
    for (std::size_t i = ng; i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);
    RetrievalMeta g2;
    Tensor<double> d2({nq, ng});
    for (std::size_t j = 0; j < ng; ++j) {
      g2.ids.push_back(in.g.ids[perm[j]]);
      g2.cameras.push_back(in.g.cameras[perm[j]]);
      for (std::size_t i = 0; i < nq; ++i) d2.data()[i * ng + j] = in.dist.data()[i * ng + perm[j]];
    }
    CHECK(same_report(base, cmc_map(d2, in.q, g2), 1e-12));
  }

  // Matches occupying the top ranks give perfect scores.
  RetrievalMeta q{{0, 1}, {1, 1}}, g{{0, 0, 1, -1, 2}, {2, 3, 2, 2, 2}};
  auto perfect = cmc_map(dist_of(2, 5, {0.1, 0.2, 0.5, 0.6, 0.7, 0.5, 0.6, 0.1, 0.7, 0.8}), q, g);
  CHECK(perfect.rank1 == 1.0);
  CHECK(perfect.mAP == 1.0);
}

TEST_CASE("feature extraction") {
  ModelConfig cfg = ModelConfig::toy(3);
  SecapModel<float> model(cfg);
  const auto& e = cfg.encoder;

  std::map<std::string, Tensor<float>> images;
  std::vector<SampleRecord> records;
  Rng rng(5);
  for (int i = 0; i < 5; ++i) {
    Tensor<float> img({e.channels, e.image_h, e.image_w});
    for (auto& v : img.data()) v = static_cast<float>(rng.uniform());
    const std::string path = "img" + std::to_string(i);
    images.emplace(path, img);
    records.push_back({path, i % 3, 1 + i % 2, i % 2 ? View::Aerial : View::GroundFrontal, i});
  }
  // Record 5 repeats the image of record 0.
  images.emplace("dup", images.at("img0"));
  records.push_back({"dup", 0, 4, View::Aerial, 9});
  auto load = [&](const SampleRecord& r) { return images.at(r.path); };

  const auto all = extract_features(model, records, load, 64);
  const auto single = extract_features(model, records, load, 1);
  REQUIRE(all.features.shape() == Shape{6, 2 * e.embed_dim});
  CHECK(model.feature_dim() == 2 * e.embed_dim);
  CHECK(all.ids == std::vector<std::int64_t>{0, 1, 2, 0, 1, 0});
  CHECK(all.paths.back() == "dup");
  double worst = 0.0;
  for (std::size_t i = 0; i < all.features.numel(); ++i)
    worst = std::max(worst, std::abs(static_cast<double>(all.features.data()[i] - single.features.data()[i])));
  CHECK(worst <= 1e-5);
  const std::size_t dim = 2 * e.embed_dim;
  for (std::size_t j = 0; j < dim; ++j) CHECK(all.features.data()[j] == all.features.data()[5 * dim + j]);

  // Extraction records nothing for backpropagation and leaves the model unchanged.
  const auto again = extract_features(model, records, load, 4);
  for (std::size_t i = 0; i < all.features.numel(); ++i) CHECK(again.features.data()[i] == all.features.data()[i]);

  const auto d = distance_matrix(all, all);
  CHECK(d.data()[5] == doctest::Approx(0.0).epsilon(1e-6));

  CHECK_THROWS_AS(extract_features(model, records, load, 0), ContractError);

  ModelConfig no_lfrm = cfg;
  no_lfrm.ablation.lfrm = false;
  SecapModel<float> short_model(no_lfrm);
  CHECK(short_model.feature_dim() == e.embed_dim);
}
