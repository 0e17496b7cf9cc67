#include "secap/pipeline.hpp"

#include <unordered_map>

#include "secap/errors.hpp"

namespace secap {

std::vector<ProtocolResult> evaluate_protocols(const SecapModel<float>& model, const std::vector<SampleRecord>& test,
                                               const ImageLoader& load, const std::vector<Protocol>& protocols,
                                               std::size_t queries_per_view, std::ostream* warnings) {
  if (test.empty()) throw ProtocolError("no test records");
  const auto designated = select_queries(test, queries_per_view, load, warnings);
  const FeatureSet all = extract_features(model, test, load);
  std::unordered_map<std::string, std::size_t> row;
  for (std::size_t i = 0; i < all.size(); ++i) row.emplace(all.paths[i], i);

  const std::size_t d = all.features.dim(1);
  auto gather = [&](const std::vector<SampleRecord>& records) {
    Tensor<float> out({records.size(), d});
    for (std::size_t i = 0; i < records.size(); ++i) {
      const std::size_t r = row.at(records[i].path);
      std::copy_n(all.features.data().begin() + static_cast<std::ptrdiff_t>(r * d), d,
                  out.data().begin() + static_cast<std::ptrdiff_t>(i * d));
    }
    return out;
  };

  std::vector<ProtocolResult> results;
  for (Protocol p : protocols) {
    ProtocolResult res;
    res.split = build_protocol(test, p, designated);
    const auto dist = distance_matrix(gather(res.split.query), gather(res.split.gallery));
    res.report = cmc_map(dist, RetrievalMeta::of(res.split.query), RetrievalMeta::of(res.split.gallery), {},
                         std::string(to_string(p)));
    results.push_back(std::move(res));
  }
  return results;
}

}  // namespace secap
