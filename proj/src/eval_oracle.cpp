// Reference scorer: every quantity is recomputed from its definition with
// plain loops. Nothing here is shared with cmc_map.
#include "secap/errors.hpp"
#include "secap/evaluation.hpp"

namespace secap {

EvalReport oracle_cmc_map(const Tensor<double>& dist, const RetrievalMeta& query, const RetrievalMeta& gallery,
                          const ValidityRule& rule, std::string protocol) {
  const std::size_t nq = query.ids.size(), ng = gallery.ids.size();
  if (nq == 0 || ng == 0) throw ProtocolError("oracle: empty query or gallery");
  if (dist.rank() != 2 || dist.dim(0) != nq || dist.dim(1) != ng)
    throw DimensionError("oracle: distance shape mismatch");

  auto kept = [&](std::size_t i, std::size_t j) {
    return !(rule.drop_same_camera && gallery.ids[j] == query.ids[i] && gallery.cameras[j] == query.cameras[i]);
  };
  auto before = [&](std::size_t i, std::size_t a, std::size_t b) {
    const double da = dist.data()[i * ng + a], db = dist.data()[i * ng + b];
    return da < db || (da == db && a < b);
  };

  double rank1_sum = 0.0, ap_sum = 0.0;
  std::size_t counted = 0;
  for (std::size_t i = 0; i < nq; ++i) {
    // 1-based rank of every kept gallery entry.
    std::vector<std::size_t> rank(ng, 0);
    for (std::size_t j = 0; j < ng; ++j) {
      if (!kept(i, j)) continue;
      rank[j] = 1;
      for (std::size_t o = 0; o < ng; ++o)
        if (o != j && kept(i, o) && before(i, o, j)) ++rank[j];
    }
    std::size_t relevant = 0;
    for (std::size_t j = 0; j < ng; ++j)
      if (rank[j] > 0 && gallery.ids[j] == query.ids[i]) ++relevant;
    if (relevant == 0) continue;
    ++counted;

    double ap = 0.0;
    for (std::size_t j = 0; j < ng; ++j) {
      if (rank[j] == 0 || gallery.ids[j] != query.ids[i]) continue;
      std::size_t matches_up_to = 0;
      for (std::size_t o = 0; o < ng; ++o)
        if (rank[o] > 0 && rank[o] <= rank[j] && gallery.ids[o] == query.ids[i]) ++matches_up_to;
      ap += static_cast<double>(matches_up_to) / static_cast<double>(rank[j]);
      if (rank[j] == 1) rank1_sum += 1.0;
    }
    ap_sum += ap / static_cast<double>(relevant);
  }
  if (counted == 0) throw ProtocolError("oracle: no query has a valid gallery match");

  EvalReport rep;
  rep.protocol = std::move(protocol);
  rep.rank1 = rank1_sum / static_cast<double>(counted);
  rep.mAP = ap_sum / static_cast<double>(counted);
  rep.num_queries = nq;
  rep.num_gallery = ng;
  rep.num_excluded = nq - counted;
  return rep;
}

}  // namespace secap
