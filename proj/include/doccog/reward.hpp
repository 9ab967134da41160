#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "doccog/document.hpp"
#include "doccog/error.hpp"
#include "doccog/numeric.hpp"
#include "doccog/schema.hpp"
#include "doccog/text_match.hpp"
#include "doccog/vsc.hpp"

namespace doccog {

/// Coefficients of the auxiliary reward terms; r_ans carries weight 1.
struct RewardWeights {
  double lambda_q = 0.20;
  double lambda_v = 0.20;
  double lambda_s = 0.20;
  double lambda_r = 0.50;

  double max_total() const { return exact_sum({1.0, lambda_q, lambda_v, lambda_s, lambda_r}); }
};

/// Mixture used by answer_reward: F1-dominant convex combination.
struct AnswerMix {
  double f1 = 0.5;
  double recall = 0.25;
  double fuzzy = 0.25;
};

struct RewardConfig {
  AnswerMix answer_mix;
  double qa_operator_bonus = 0.2;
  double gated_floor = 1e-6;
};

struct GoldReference {
  std::vector<std::string> answers;
  std::optional<std::string> analysis_ref;
  std::optional<std::vector<std::string>> gold_regions;  // aligned to region-bearing steps
  std::optional<Operator> first_op;                      // Select when absent
  double tau = 0.8;
};

struct RewardBreakdown {
  double r_ans = 0;
  double r_qa = 0;
  double r_vsc = 0;
  double r_str = 0;
  double r_reg = 0;  // length-normalized geometric form
  double reg_log_sum = 0;
  bool reg_empty = false;
  double total = 0;

  friend bool operator==(const RewardBreakdown&, const RewardBreakdown&) = default;
};

/// Weighted total, rounded once (order-independent, exact for 2.10).
inline double combine_reward(double r_ans, double r_qa, double r_vsc, double r_str, double r_reg,
                             const RewardWeights& w) {
  return exact_sum({r_ans, w.lambda_q * r_qa, w.lambda_v * r_vsc, w.lambda_s * r_str, w.lambda_r * r_reg});
}

// -- r_ans -------------------------------------------------------------------

inline double answer_score(std::string_view pred, std::string_view gold, const AnswerMix& mix = {}) {
  const TokenOverlap o = token_overlap(pred, gold);
  return exact_sum({mix.f1 * o.f1, mix.recall * o.recall, mix.fuzzy * fuzzy_similarity(pred, gold)});
}

/// Best mixed score over all acceptable answers.
inline double answer_reward(std::string_view pred, const GoldReference& gold, const AnswerMix& mix = {}) {
  double best = 0.0;
  for (const auto& a : gold.answers) best = std::max(best, answer_score(pred, a, mix));
  return std::clamp(best, 0.0, 1.0);
}

inline double best_answer_f1(std::string_view pred, const GoldReference& gold) {
  double best = 0.0;
  for (const auto& a : gold.answers) best = std::max(best, token_f1(pred, a));
  return best;
}

// -- r_qa --------------------------------------------------------------------

inline bool mentions_operator(std::string_view text, Operator op) {
  const std::string name = normalize_answer(to_string(op));
  for (const auto& tok : answer_tokens(text)) {
    if (tok == name) return true;
  }
  return false;
}

inline bool mentions_any_operator_or_region(std::string_view text) {
  for (const auto& tok : answer_tokens(text)) {
    for (Operator op : kAllOperators) {
      if (tok == normalize_answer(to_string(op))) return true;
    }
    for (RegionType t : kAllRegionTypes) {
      // punctuation is deleted by normalization, so key_value reads keyvalue
      if (tok == normalize_answer(to_string(t))) return true;
    }
  }
  return false;
}

/// With a reference analysis: token F1 against it, plus a bonus when the
/// analysis names the gold first operator, clamped to 1. Without one: 1
/// when the analysis is non-empty and names an operator or region label.
inline double qa_reward(std::string_view analysis, const GoldReference& gold, const RewardConfig& cfg = {}) {
  if (gold.analysis_ref) {
    double score = token_f1(analysis, *gold.analysis_ref);
    if (mentions_operator(analysis, gold.first_op.value_or(Operator::Select))) score += cfg.qa_operator_bonus;
    return std::clamp(score, 0.0, 1.0);
  }
  return !normalize_answer(analysis).empty() && mentions_any_operator_or_region(analysis) ? 1.0 : 0.0;
}

// -- r_vsc -------------------------------------------------------------------

/// Mean of four sub-scores: argument schema, ordering, region consistency
/// and diversity.
inline double vsc_score(const ValidationReport& report) {
  const auto steps = static_cast<double>(report.count("steps"));
  if (steps == 0) return 0.0;
  const double schema = static_cast<double>(report.count("args_ok")) / steps;
  const double ordering = static_cast<double>(report.count("ordering_ok")) / steps;
  const std::size_t refs = report.count("region_refs");
  const double region = refs == 0 ? 1.0 : static_cast<double>(report.count("region_resolved")) / static_cast<double>(refs);
  return exact_sum({schema, ordering, region, report.diversity}) / 4.0;
}

inline double vsc_reward(const RolloutRecord& record, const Document* doc) {
  if (!record.trace) return 0.0;
  return vsc_score(validate_schema(*record.trace, doc));
}

// -- r_str -------------------------------------------------------------------

/// Fraction of four format checks passed; 0 when raw is not a JSON object.
inline double structure_reward(std::string_view raw) {
  const json j = json::parse(raw, nullptr, /*allow_exceptions=*/false);
  if (j.is_discarded() || !j.is_object()) return 0.0;
  int passed = 0;
  auto qa = j.find("question_analysis");
  passed += qa != j.end() && qa->is_string();
  auto vsc = j.find("vsc");
  const bool vsc_ok = vsc != j.end() && vsc->is_array() && !vsc->empty();
  passed += vsc_ok;
  auto ans = j.find("answer");
  passed += ans != j.end() && ans->is_string();
  bool steps_ok = vsc_ok;
  if (vsc_ok) {
    for (const auto& s : *vsc) {
      if (!s.is_object()) {
        steps_ok = false;
        break;
      }
      auto op = s.find("op");
      auto region = s.find("region");
      auto args = s.find("args");
      if (op == s.end() || !op->is_string() || region == s.end() || !region->is_string() || args == s.end() ||
          !args->is_object()) {
        steps_ok = false;
        break;
      }
    }
  }
  passed += steps_ok;
  return passed / 4.0;
}

// -- r_reg -------------------------------------------------------------------

struct RegionReward {
  double log_sum = 0.0;
  double r_tilde = 0.0;
  bool empty = false;
};

/// log r_reg = sum of log p_t; r~ = exp(log r_reg / N). An empty list gives
/// r~ = 0 with `empty` set. Throws E_PROB_RANGE for p outside (0, 1].
inline RegionReward region_reward(std::span<const double> probs) {
  if (probs.empty()) return {0.0, 0.0, true};
  std::vector<double> logs;
  logs.reserve(probs.size());
  for (double p : probs) {
    if (!(p > 0.0 && p <= 1.0)) throw Error("E_PROB_RANGE", "region probability " + format_g17(p) + " is outside (0, 1]");
    logs.push_back(std::log(p));
  }
  RegionReward r;
  r.log_sum = exact_sum(logs);
  r.r_tilde = std::exp(r.log_sum / static_cast<double>(probs.size()));
  return r;
}

inline RegionReward region_reward(const std::vector<double>& probs) {
  return region_reward(std::span<const double>(probs));
}

// -- composite ---------------------------------------------------------------

/// All five terms and their weighted total. With `gated`, steps whose region
/// differs from the aligned gold region contribute the floor probability
/// instead of p_t.
inline RewardBreakdown composite_reward(const RolloutRecord& record, const Document* doc, const GoldReference& gold,
                                        const RewardWeights& w = {}, bool gated = false,
                                        const RewardConfig& cfg = {}) {
  for (double p : record.region_probs) {
    if (!(p > 0.0 && p <= 1.0)) throw Error("E_PROB_RANGE", "region probability " + format_g17(p) + " is outside (0, 1]");
  }

  RewardBreakdown b;
  const Trace* t = record.trace ? &*record.trace : nullptr;
  b.r_ans = answer_reward(t ? t->answer : std::string_view{}, gold, cfg.answer_mix);
  b.r_qa = qa_reward(t ? t->question_analysis : std::string_view{}, gold, cfg);
  b.r_vsc = vsc_reward(record, doc);
  b.r_str = structure_reward(record.raw);

  if (t) {
    std::vector<double> probs = record.region_probs;
    if (!probs.empty() && probs.size() != count_region_bearing(*t)) {
      throw Error("E_PROB_COUNT", "record has " + std::to_string(probs.size()) + " region probabilities for " +
                                      std::to_string(count_region_bearing(*t)) + " region-bearing steps");
    }
    if (gated && gold.gold_regions && !probs.empty()) {
      std::size_t k = 0;
      for (const VscStep& s : t->vsc) {
        if (!is_region_bearing(s)) continue;
        const bool match = k < gold.gold_regions->size() && (*gold.gold_regions)[k] == s.region;
        if (!match) probs[k] = cfg.gated_floor;
        ++k;
      }
    }
    const RegionReward rr = region_reward(probs);
    b.r_reg = rr.r_tilde;
    b.reg_log_sum = rr.log_sum;
    b.reg_empty = rr.empty;
  } else {
    b.reg_empty = true;
  }
  b.total = combine_reward(b.r_ans, b.r_qa, b.r_vsc, b.r_str, b.r_reg, w);
  return b;
}

inline RewardBreakdown composite_reward(const RolloutRecord& record, const Document& doc, const GoldReference& gold,
                                        const RewardWeights& w = {}, bool gated = false,
                                        const RewardConfig& cfg = {}) {
  return composite_reward(record, &doc, gold, w, gated, cfg);
}

// -- rejection sampling ------------------------------------------------------

struct FilterDecision {
  bool retain = false;
  std::string reason;  // "structure", "schema" or "low_f1" when discarded

  friend bool operator==(const FilterDecision&, const FilterDecision&) = default;
};

/// Keeps a sample only if its format is fully compliant, its chain passes
/// validation and its answer reaches token F1 >= tau against some gold answer.
inline FilterDecision rejection_filter(const RolloutRecord& record, const Document* doc, const GoldReference& gold) {
  if (structure_reward(record.raw) != 1.0) return {false, "structure"};
  if (!record.trace || !validate_schema(*record.trace, doc).schema_ok) return {false, "schema"};
  if (best_answer_f1(record.trace->answer, gold) < gold.tau) return {false, "low_f1"};
  return {true, {}};
}

inline FilterDecision rejection_filter(const RolloutRecord& record, const Document& doc, const GoldReference& gold) {
  return rejection_filter(record, &doc, gold);
}

// -- wire forms --------------------------------------------------------------

/// Gold line: {"doc_id"?, "question"?, "answers": [str], "analysis_ref"?,
/// "gold_regions"?: [str], "first_op"?: str, "tau"?: number}.
inline GoldReference gold_from_json(const json& j) {
  if (!j.is_object()) throw Error("E_GOLD", "gold record must be a JSON object");
  GoldReference g;
  auto answers = j.find("answers");
  if (answers == j.end() || !answers->is_array() || answers->empty()) {
    throw Error("E_GOLD", "gold record needs a non-empty 'answers' array");
  }
  for (const auto& a : *answers) {
    if (!a.is_string()) throw Error("E_GOLD", "gold answers must be strings");
    g.answers.push_back(a.get<std::string>());
  }
  if (auto it = j.find("analysis_ref"); it != j.end() && !it->is_null()) {
    if (!it->is_string()) throw Error("E_GOLD", "'analysis_ref' must be a string");
    g.analysis_ref = it->get<std::string>();
  }
  if (auto it = j.find("gold_regions"); it != j.end() && !it->is_null()) {
    if (!it->is_array()) throw Error("E_GOLD", "'gold_regions' must be an array");
    std::vector<std::string> regions;
    for (const auto& r : *it) {
      if (!r.is_string()) throw Error("E_GOLD", "'gold_regions' entries must be strings");
      regions.push_back(r.get<std::string>());
    }
    g.gold_regions = std::move(regions);
  }
  if (auto it = j.find("first_op"); it != j.end() && !it->is_null()) {
    auto op = it->is_string() ? operator_from_string(it->get<std::string>()) : std::nullopt;
    if (!op) throw Error("E_GOLD", "'first_op' must name an operator");
    g.first_op = op;
  }
  if (auto it = j.find("tau"); it != j.end() && !it->is_null()) {
    if (!it->is_number()) throw Error("E_GOLD", "'tau' must be a number");
    g.tau = it->get<double>();
  }
  if (!(g.tau >= 0.0 && g.tau <= 1.0)) throw Error("E_GOLD", "'tau' must lie in [0, 1]");
  return g;
}

inline json breakdown_to_json(const RewardBreakdown& b) {
  return {{"r_ans", b.r_ans}, {"r_qa", b.r_qa}, {"r_vsc", b.r_vsc},
          {"r_str", b.r_str}, {"r_reg", b.r_reg}, {"total", b.total}};
}

}  // namespace doccog
