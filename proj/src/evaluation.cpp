#include "secap/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "secap/errors.hpp"
#include "secap/parallel.hpp"

namespace secap {

template <class T>
FeatureSet extract_features(const SecapModel<T>& model, const std::vector<SampleRecord>& records,
                            const ImageLoader& load, std::size_t batch_size) {
  if (batch_size == 0) throw ContractError("batch_size must be positive");
  NoGradGuard no_grad;
  FeatureSet fs;
  const std::size_t dim = model.feature_dim();
  std::vector<float> rows;
  rows.reserve(records.size() * dim);
  for (std::size_t start = 0; start < records.size(); start += batch_size) {
    const std::size_t n = std::min(batch_size, records.size() - start);
    std::vector<Tensor<float>> images;
    images.reserve(n);
    for (std::size_t i = start; i < start + n; ++i) {
      const auto& r = records[i];
      images.push_back(load(r));
      fs.paths.push_back(r.path);
      fs.ids.push_back(r.identity);
      fs.cameras.push_back(r.camera);
      fs.views.push_back(r.view);
    }
    const auto emb = model.embedding(model.forward(make_batch<T>(images)));
    for (T v : emb.data()) rows.push_back(static_cast<float>(v));
  }
  fs.features = Tensor<float>({records.size(), dim}, std::move(rows));
  return fs;
}

Tensor<double> distance_matrix(const Tensor<float>& query, const Tensor<float>& gallery) {
  if (query.rank() != 2 || gallery.rank() != 2 || query.dim(1) != gallery.dim(1))
    throw DimensionError("distance_matrix needs [Nq,D] and [Ng,D], got " + shape_str(query.shape()) + " and " +
                         shape_str(gallery.shape()));
  const std::size_t d = query.dim(1);
  auto normalized = [d](const Tensor<float>& t) {
    std::vector<double> out(t.data().begin(), t.data().end());
    for (std::size_t r = 0; r < t.dim(0); ++r) {
      double ss = 0.0;
      for (std::size_t j = 0; j < d; ++j) ss += out[r * d + j] * out[r * d + j];
      const double inv = ss > 0.0 ? 1.0 / std::sqrt(ss) : 0.0;
      for (std::size_t j = 0; j < d; ++j) out[r * d + j] *= inv;
    }
    return out;
  };
  const auto q = normalized(query), g = normalized(gallery);
  const std::size_t nq = query.dim(0), ng = gallery.dim(0);
  Tensor<double> dist({nq, ng});
  auto out = dist.data();
  parallel_for(nq, ng * d, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i)
      for (std::size_t j = 0; j < ng; ++j) {
        double dot = 0.0;
        for (std::size_t k = 0; k < d; ++k) dot += q[i * d + k] * g[j * d + k];
        out[i * ng + j] = std::clamp(1.0 - dot, 0.0, 2.0);
      }
  });
  return dist;
}

RetrievalMeta RetrievalMeta::of(const std::vector<SampleRecord>& records) {
  RetrievalMeta m;
  for (const auto& r : records) {
    m.ids.push_back(r.identity);
    m.cameras.push_back(r.camera);
  }
  return m;
}

std::string EvalReport::to_json() const {
  char buf[256];
  std::snprintf(buf, sizeof buf,
                "{\"protocol\": \"%s\", \"rank1\": %.6f, \"mAP\": %.6f, \"num_queries\": %zu, \"num_gallery\": %zu, "
                "\"num_excluded\": %zu}",
                protocol.c_str(), rank1, mAP, num_queries, num_gallery, num_excluded);
  return buf;
}

EvalReport cmc_map(const Tensor<double>& dist, const RetrievalMeta& query, const RetrievalMeta& gallery,
                   const ValidityRule& rule, std::string protocol) {
  const std::size_t nq = query.ids.size(), ng = gallery.ids.size();
  if (nq == 0 || ng == 0) throw ProtocolError("cmc_map needs at least one query and one gallery entry");
  if (dist.rank() != 2 || dist.dim(0) != nq || dist.dim(1) != ng || query.cameras.size() != nq ||
      gallery.cameras.size() != ng)
    throw DimensionError("cmc_map: distance " + shape_str(dist.shape()) + " does not match " +
                         std::to_string(nq) + " queries x " + std::to_string(ng) + " gallery");
  for (auto id : query.ids)
    if (id < 0) throw ContractError("distractor used as a query");
  const auto d = dist.data();

  std::vector<double> ap(nq, 0.0);
  std::vector<char> hit(nq, 0), valid(nq, 0);
  parallel_for(nq, ng * 16, [&](std::size_t begin, std::size_t end) {
    std::vector<std::size_t> order(ng);
    for (std::size_t i = begin; i < end; ++i) {
      const double* row = d.data() + i * ng;
      std::iota(order.begin(), order.end(), 0);
      std::stable_sort(order.begin(), order.end(), [row](std::size_t a, std::size_t b) { return row[a] < row[b]; });
      std::size_t rank = 0, matches = 0;
      double precision_sum = 0.0;
      bool first = true;
      for (std::size_t j : order) {
        const bool same_id = gallery.ids[j] == query.ids[i];
        if (rule.drop_same_camera && same_id && gallery.cameras[j] == query.cameras[i]) continue;
        ++rank;
        if (first) hit[i] = same_id;
        first = false;
        if (same_id) {
          ++matches;
          precision_sum += static_cast<double>(matches) / static_cast<double>(rank);
        }
      }
      if (matches > 0) {
        valid[i] = 1;
        ap[i] = precision_sum / static_cast<double>(matches);
      }
    }
  });

  EvalReport rep;
  rep.protocol = std::move(protocol);
  rep.num_queries = nq;
  rep.num_gallery = ng;
  std::size_t counted = 0;
  for (std::size_t i = 0; i < nq; ++i) {
    if (!valid[i]) continue;
    ++counted;
    rep.rank1 += hit[i];
    rep.mAP += ap[i];
  }
  rep.num_excluded = nq - counted;
  if (counted == 0) throw ProtocolError("no query has a valid gallery match");
  rep.rank1 /= static_cast<double>(counted);
  rep.mAP /= static_cast<double>(counted);
  return rep;
}

template FeatureSet extract_features<float>(const SecapModel<float>&, const std::vector<SampleRecord>&,
                                            const ImageLoader&, std::size_t);
template FeatureSet extract_features<double>(const SecapModel<double>&, const std::vector<SampleRecord>&,
                                             const ImageLoader&, std::size_t);

}  // namespace secap
