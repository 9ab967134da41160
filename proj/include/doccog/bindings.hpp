#pragma once

// Native surface for host-language bindings. A binding package wraps these
// two calls and nothing else; everything here forwards to the engine so the
// bound results are the native results.

#include <cstddef>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "doccog/document.hpp"
#include "doccog/error.hpp"
#include "doccog/reward.hpp"
#include "doccog/supervision.hpp"
#include "doccog/vsc.hpp"

namespace doccog {

/// Immutable after construction; score() touches no shared state, so one
/// scorer may be called from several threads at once.
class BoundScorer {
 public:
  BoundScorer(std::map<std::string, Document> docs, RewardWeights weights = {}, bool gated = false)
      : docs_(std::move(docs)), weights_(weights), gated_(gated) {}

  RewardBreakdown score(const RolloutRecord& record, const GoldReference& gold) const {
    auto it = docs_.find(record.doc_id);
    if (it == docs_.end()) throw Error("E_UNKNOWN_DOC", "no document '" + record.doc_id + "'");
    return composite_reward(record, it->second, gold, weights_, gated_);
  }

  std::vector<RewardBreakdown> score_batch(const std::vector<RolloutRecord>& records,
                                           const std::vector<GoldReference>& golds) const {
    if (records.size() != golds.size()) throw Error("E_GOLD", "records and gold references differ in count");
    std::vector<RewardBreakdown> out;
    out.reserve(records.size());
    for (std::size_t i = 0; i < records.size(); ++i) out.push_back(score(records[i], golds[i]));
    return out;
  }

  const RewardWeights& weights() const { return weights_; }
  bool gated() const { return gated_; }

 private:
  std::map<std::string, Document> docs_;
  RewardWeights weights_;
  bool gated_;
};

/// Supervision map as nested rows, the shape host code expects.
inline std::vector<std::vector<double>> bound_supervision(const std::vector<OcrLine>& lines, double page_w,
                                                          double page_h, std::size_t grid_h, std::size_t grid_w) {
  const GridMap m = build_supervision_map(lines, page_w, page_h, grid_h, grid_w);
  std::vector<std::vector<double>> rows(m.height, std::vector<double>(m.width));
  for (std::size_t u = 0; u < m.height; ++u) {
    for (std::size_t v = 0; v < m.width; ++v) rows[u][v] = m.at(u, v);
  }
  return rows;
}

}  // namespace doccog
