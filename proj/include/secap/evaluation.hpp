#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "secap/data.hpp"
#include "secap/model.hpp"

namespace secap {

struct FeatureSet {
  std::vector<std::string> paths;
  std::vector<std::int64_t> ids;
  std::vector<int> cameras;
  std::vector<View> views;
  Tensor<float> features;  // [N, D]

  std::size_t size() const { return ids.size(); }
};

// Inference features (no augmentation, no tape), `batch_size` images at a time.
template <class T>
FeatureSet extract_features(const SecapModel<T>& model, const std::vector<SampleRecord>& records,
                            const ImageLoader& load, std::size_t batch_size = 64);

// Cosine distance 1 - q.g between L2-normalized rows, in [0, 2].
Tensor<double> distance_matrix(const Tensor<float>& query, const Tensor<float>& gallery);
inline Tensor<double> distance_matrix(const FeatureSet& q, const FeatureSet& g) {
  return distance_matrix(q.features, g.features);
}

struct RetrievalMeta {
  std::vector<std::int64_t> ids;
  std::vector<int> cameras;

  static RetrievalMeta of(const FeatureSet& f) { return {f.ids, f.cameras}; }
  static RetrievalMeta of(const std::vector<SampleRecord>& records);
};

struct ValidityRule {
  // Gallery entries sharing both identity and camera with the query are ignored.
  bool drop_same_camera = true;
};

struct EvalReport {
  std::string protocol;
  double rank1 = 0.0;
  double mAP = 0.0;
  std::size_t num_queries = 0;   // queries handed in
  std::size_t num_gallery = 0;
  std::size_t num_excluded = 0;  // queries left without a valid match

  std::string to_json() const;
};

// Per query the gallery is ranked by ascending distance, ties by gallery
// index. Distractors (id -1) stay in the ranking as negatives. Rank-1 and mAP
// average over queries with at least one valid match; if none has one a
// ProtocolError is raised.
EvalReport cmc_map(const Tensor<double>& dist, const RetrievalMeta& query, const RetrievalMeta& gallery,
                   const ValidityRule& rule = {}, std::string protocol = "");

// Direct re-computation by rank counting, for verification on small inputs.
EvalReport oracle_cmc_map(const Tensor<double>& dist, const RetrievalMeta& query, const RetrievalMeta& gallery,
                          const ValidityRule& rule = {}, std::string protocol = "");

}  // namespace secap
