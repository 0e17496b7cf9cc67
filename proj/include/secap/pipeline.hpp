#pragma once

#include <iosfwd>
#include <vector>

#include "secap/data.hpp"
#include "secap/evaluation.hpp"

namespace secap {

inline const std::vector<Protocol> kAllProtocols{Protocol::AerialToGround, Protocol::GroundToAerial,
                                                 Protocol::GroundToAerialGround};

struct ProtocolResult {
  ProtocolSplit split;
  EvalReport report;
};

// Selects `queries_per_view` representative queries per identity and view
// from the test records, extracts every test feature once, and scores each
// protocol. Protocols that cannot be built (e.g. a one-view corpus) raise
// ProtocolError.
std::vector<ProtocolResult> evaluate_protocols(const SecapModel<float>& model, const std::vector<SampleRecord>& test,
                                               const ImageLoader& load, const std::vector<Protocol>& protocols,
                                               std::size_t queries_per_view = 2, std::ostream* warnings = nullptr);

}  // namespace secap
