#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "doccog/document.hpp"
#include "doccog/error.hpp"
#include "doccog/exec.hpp"
#include "doccog/numeric.hpp"
#include "doccog/reward.hpp"
#include "doccog/rng.hpp"
#include "doccog/schema.hpp"
#include "doccog/vsc.hpp"

namespace doccog {

// -- program enumeration -------------------------------------------------------

/// The finite argument vocabulary chains are enumerated over.
struct ChainGrammar {
  std::vector<std::string> selectors;
  std::vector<std::optional<std::string>> key_hints;  // nullopt = no hint
  std::vector<ArgMap> filter_args;
  std::vector<ArgMap> compare_args;
  std::vector<ArgMap> aggregate_args;
};

/// Selectors: every region id plus every type label that resolves uniquely.
/// Key hints: none, plus every distinct row/col/region key. Filters: eq on
/// each distinct row_key / col_key. Compare: max, min. Aggregate: sum, concat.
inline ChainGrammar default_grammar(const Document& doc) {
  ChainGrammar g;
  std::map<RegionType, std::size_t> type_counts;
  for (const Region& r : doc.regions) {
    g.selectors.push_back(r.id);
    ++type_counts[r.type];
  }
  for (RegionType t : kAllRegionTypes) {
    auto it = type_counts.find(t);
    const std::string label(to_string(t));
    if (it != type_counts.end() && it->second == 1 &&
        std::find(g.selectors.begin(), g.selectors.end(), label) == g.selectors.end()) {
      g.selectors.push_back(label);
    }
  }

  std::set<std::string> row_keys, col_keys, region_keys;
  for (const Region& r : doc.regions) {
    if (r.key) region_keys.insert(*r.key);
    if (!r.cells) continue;
    for (const Cell& c : *r.cells) {
      if (c.row_key) row_keys.insert(*c.row_key);
      if (c.col_key) col_keys.insert(*c.col_key);
    }
  }
  g.key_hints.push_back(std::nullopt);
  for (const auto* keys : {&row_keys, &col_keys, &region_keys}) {
    for (const auto& k : *keys) {
      if (std::find(g.key_hints.begin(), g.key_hints.end(), std::optional<std::string>(k)) == g.key_hints.end()) {
        g.key_hints.emplace_back(k);
      }
    }
  }
  for (const auto& k : row_keys) g.filter_args.push_back({{"field", "row_key"}, {"cmp", "eq"}, {"value", k}});
  for (const auto& k : col_keys) g.filter_args.push_back({{"field", "col_key"}, {"cmp", "eq"}, {"value", k}});
  g.compare_args = {{{"metric", "max"}}, {{"metric", "min"}}};
  g.aggregate_args = {{{"fn", "sum"}}, {{"fn", "concat"}}};
  return g;
}

/// Every chain of 1..max_len steps built from the grammar that passes
/// validate_schema against `doc`. Non-Select steps echo the selector of the
/// most recent Select, so every step is region-bearing.
inline std::vector<std::vector<VscStep>> enumerate_chains(const Document& doc, const ChainGrammar& g,
                                                          std::size_t max_len = 3) {
  std::vector<VscStep> select_steps;
  for (const auto& sel : g.selectors) {
    for (const auto& hint : g.key_hints) {
      VscStep s{Operator::Select, sel, {}};
      if (hint) s.args["key"] = *hint;
      select_steps.push_back(std::move(s));
    }
  }
  std::vector<VscStep> other_steps;  // region filled in per chain
  other_steps.push_back({Operator::Read, {}, {}});
  for (const auto& a : g.filter_args) other_steps.push_back({Operator::Filter, {}, a});
  for (const auto& a : g.compare_args) other_steps.push_back({Operator::Compare, {}, a});
  for (const auto& a : g.aggregate_args) other_steps.push_back({Operator::Aggregate, {}, a});

  std::vector<std::vector<VscStep>> out;
  std::vector<VscStep> chain;
  auto extend = [&](auto&& self) -> void {
    if (!chain.empty()) {
      Trace t{"", chain, ""};
      if (validate_schema(t, &doc).schema_ok) out.push_back(chain);
    }
    if (chain.size() == max_len) return;
    for (const VscStep& s : select_steps) {
      chain.push_back(s);
      self(self);
      chain.pop_back();
    }
    if (chain.empty()) return;
    std::string live;
    for (const VscStep& s : chain) {
      if (s.op == Operator::Select) live = s.region;
    }
    for (VscStep s : other_steps) {
      s.region = live;
      chain.push_back(std::move(s));
      self(self);
      chain.pop_back();
    }
  };
  extend(extend);
  return out;
}

/// 64-bit FNV-1a, the ordering key for capping candidate lists.
inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

// -- policy ------------------------------------------------------------------

inline std::vector<double> softmax_probs(const std::vector<double>& logits) {
  if (logits.empty()) return {};
  const double top = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) p[i] = std::exp(logits[i] - top);
  const double z = exact_sum(p);
  for (double& x : p) x /= z;
  return p;
}

/// A_i = (r_i - mean) / std_pop; all zeros when std_pop < 1e-12.
inline std::vector<double> group_advantages(const std::vector<double>& rewards) {
  if (rewards.size() < 2) throw Error("E_GROUP_TOO_SMALL", "a rollout group needs at least 2 rewards");
  const double n = static_cast<double>(rewards.size());
  const double mean = exact_sum(rewards) / n;
  std::vector<double> centered(rewards.size());
  std::vector<double> squares(rewards.size());
  for (std::size_t i = 0; i < rewards.size(); ++i) {
    centered[i] = rewards[i] - mean;
    squares[i] = centered[i] * centered[i];
  }
  const double std_pop = std::sqrt(exact_sum(squares) / n);
  std::vector<double> adv(rewards.size(), 0.0);
  if (std_pop < 1e-12) return adv;
  for (std::size_t i = 0; i < rewards.size(); ++i) adv[i] = centered[i] / std_pop;
  return adv;
}

/// G i.i.d. draws from softmax(logits) by inverse CDF.
inline std::vector<std::size_t> sample_indices(const std::vector<double>& logits, std::size_t group, SeededRng& rng) {
  if (group < 2) throw Error("E_GROUP_TOO_SMALL", "group size must be at least 2");
  if (logits.empty()) throw Error("E_CONFIG", "policy has no candidates");
  const auto p = softmax_probs(logits);
  std::vector<std::size_t> out;
  out.reserve(group);
  for (std::size_t g = 0; g < group; ++g) {
    const double u = rng.uniform01();
    double acc = 0.0;
    std::size_t pick = p.size() - 1;
    for (std::size_t i = 0; i < p.size(); ++i) {
      acc += p[i];
      if (u < acc) {
        pick = i;
        break;
      }
    }
    out.push_back(pick);
  }
  return out;
}

inline std::vector<std::size_t> sample_rollouts(const std::vector<double>& logits, std::size_t group,
                                                std::uint64_t seed) {
  SeededRng rng(seed);
  return sample_indices(logits, group, rng);
}

/// logits += lr * sum_k A_k (onehot(k) - softmax(logits)), applied once.
inline std::vector<double> policy_update(const std::vector<double>& logits, const std::vector<std::size_t>& sampled,
                                         const std::vector<double>& advantages, double lr) {
  if (sampled.size() != advantages.size()) throw Error("E_CONFIG", "sampled indices and advantages differ in length");
  const auto p = softmax_probs(logits);
  std::vector<double> grad(logits.size(), 0.0);
  for (std::size_t k = 0; k < sampled.size(); ++k) {
    if (sampled[k] >= logits.size()) throw Error("E_CONFIG", "sampled index out of range");
    for (std::size_t i = 0; i < logits.size(); ++i) {
      grad[i] += advantages[k] * ((i == sampled[k] ? 1.0 : 0.0) - p[i]);
    }
  }
  std::vector<double> out = logits;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += lr * grad[i];
  return out;
}

// -- demo --------------------------------------------------------------------

struct GrpoQuestion {
  std::string id;
  std::string doc_id;
  std::string question;
  GoldReference gold;
  Trace gold_program;
};

struct Candidate {
  Trace trace;
  RolloutRecord record;
  RewardBreakdown reward;
};

struct CandidateSet {
  std::string question_id;
  std::string doc_id;
  std::vector<Candidate> programs;
  std::size_t best = 0;  // index of the reward-maximal program
};

inline constexpr double kMatchedRegionConfidence = 0.95;
inline constexpr double kUnmatchedRegionConfidence = 0.4;

inline std::vector<std::string> region_sequence(const Trace& t) {
  std::vector<std::string> out;
  for (const VscStep& s : t.vsc) {
    if (is_region_bearing(s)) out.push_back(s.region);
  }
  return out;
}

/// Reads "Select table (key Revenue), then Read table, then Aggregate sum".
inline std::string describe_chain(const std::vector<VscStep>& chain) {
  std::string out;
  for (std::size_t i = 0; i < chain.size(); ++i) {
    const VscStep& s = chain[i];
    if (i) out += ", then ";
    out += std::string(to_string(s.op)) + " " + s.region;
    for (const auto& [k, v] : s.args) out += " " + k + "=" + detail::arg_text(v);
  }
  return out;
}

/// Turns a chain into a scored candidate: the answer is what the executor
/// produces, and each region-bearing step gets a simulated confidence of
/// 0.95 when it matches the aligned gold region and 0.4 otherwise.
inline Candidate make_candidate(const Document& doc, const GrpoQuestion& q, const std::vector<VscStep>& chain,
                                const RewardWeights& w, bool gated) {
  Candidate c;
  c.trace.question_analysis = describe_chain(chain);
  c.trace.vsc = chain;
  c.trace.answer = run_chain(doc, c.trace).answer;
  const auto gold_regions = q.gold.gold_regions.value_or(region_sequence(q.gold_program));
  std::vector<double> probs;
  std::size_t k = 0;
  for (const VscStep& s : chain) {
    if (!is_region_bearing(s)) continue;
    probs.push_back(k < gold_regions.size() && gold_regions[k] == s.region ? kMatchedRegionConfidence
                                                                             : kUnmatchedRegionConfidence);
    ++k;
  }
  c.record = make_rollout(serialize_trace(c.trace), std::move(probs), q.question, doc.id);
  GoldReference gold = q.gold;
  if (!gold.gold_regions) gold.gold_regions = gold_regions;
  c.reward = composite_reward(c.record, doc, gold, w, gated);
  return c;
}

inline std::string op_signature(const std::vector<VscStep>& chain) {
  std::string sig;
  for (const VscStep& s : chain) {
    if (!sig.empty()) sig += '>';
    sig += to_string(s.op);
  }
  return sig;
}

/// The gold program plus (cap - 1) other schema-valid chains. Chains are
/// bucketed by operator signature; buckets and their members are ordered by
/// FNV-1a of the canonical text, and picks go round-robin over buckets so
/// the competitors cover different program shapes.
inline CandidateSet build_candidates(const Document& doc, const GrpoQuestion& q, const RewardWeights& w, bool gated,
                                     std::size_t cap = 6, std::size_t max_len = 3) {
  if (cap == 0) throw Error("E_CONFIG", "candidate cap must be at least 1");
  CandidateSet set;
  set.question_id = q.id;
  set.doc_id = doc.id;

  using Ranked = std::pair<std::uint64_t, std::vector<VscStep>>;
  std::map<std::string, std::vector<Ranked>> buckets;
  const std::string gold_key = serialize_trace(Trace{"", q.gold_program.vsc, ""});
  for (auto& chain : enumerate_chains(doc, default_grammar(doc), max_len)) {
    const std::string key = serialize_trace(Trace{"", chain, ""});
    if (key == gold_key) continue;
    buckets[op_signature(chain)].emplace_back(fnv1a(key), std::move(chain));
  }
  std::vector<std::pair<std::uint64_t, std::vector<Ranked>*>> order;
  for (auto& [sig, members] : buckets) {
    std::sort(members.begin(), members.end(), [](const Ranked& a, const Ranked& b) { return a.first < b.first; });
    order.emplace_back(fnv1a(sig), &members);
  }
  std::sort(order.begin(), order.end(), [](const auto& a, const auto& b) { return a.first < b.first; });

  set.programs.push_back(make_candidate(doc, q, q.gold_program.vsc, w, gated));
  for (std::size_t round = 0; set.programs.size() < cap; ++round) {
    bool any = false;
    for (auto& [hash, members] : order) {
      if (round >= members->size() || set.programs.size() >= cap) continue;
      set.programs.push_back(make_candidate(doc, q, (*members)[round].second, w, gated));
      any = true;
    }
    if (!any) break;
  }
  for (std::size_t i = 1; i < set.programs.size(); ++i) {
    if (set.programs[i].reward.total > set.programs[set.best].reward.total) set.best = i;
  }
  return set;
}

struct GrpoOptions {
  std::size_t group = 8;
  std::size_t iters = 300;
  double lr = 0.5;
  std::uint64_t seed = 1;
};

struct GrpoLogRow {
  std::size_t iter = 0;
  double mean_reward = 0.0;
  std::vector<double> p_best;  // per question
};

struct GrpoLog {
  std::vector<GrpoLogRow> rows;  // row 0 is the initial policy
  std::vector<std::vector<double>> final_logits;
  double max_abs_adv_mean = 0.0;   // worst |mean(A)| over non-degenerate groups
  double max_adv_std_error = 0.0;  // worst |std_pop(A) - 1| over non-degenerate groups
  std::size_t degenerate_groups = 0;
};

/// Sample -> score -> normalize -> update, for every question each
/// iteration. Logits start at zero; one seeded generator drives all draws.
inline GrpoLog run_grpo_demo(const std::vector<CandidateSet>& sets, const GrpoOptions& opt) {
  if (opt.group < 2) throw Error("E_GROUP_TOO_SMALL", "group size must be at least 2");
  if (!(opt.lr >= 0.0) || !std::isfinite(opt.lr)) throw Error("E_CONFIG", "learning rate must be finite and >= 0");
  SeededRng rng(opt.seed);
  GrpoLog log;
  std::vector<std::vector<double>> logits;
  for (const auto& s : sets) {
    if (s.programs.empty()) throw Error("E_CONFIG", "candidate set '" + s.question_id + "' is empty");
    logits.emplace_back(s.programs.size(), 0.0);
  }

  auto snapshot = [&](std::size_t iter, double mean_reward) {
    GrpoLogRow row{iter, mean_reward, {}};
    for (std::size_t q = 0; q < sets.size(); ++q) row.p_best.push_back(softmax_probs(logits[q])[sets[q].best]);
    log.rows.push_back(std::move(row));
  };

  {
    // Expected reward of the initial (uniform) policy.
    std::vector<double> expected;
    for (std::size_t q = 0; q < sets.size(); ++q) {
      const auto p = softmax_probs(logits[q]);
      for (std::size_t i = 0; i < p.size(); ++i) expected.push_back(p[i] * sets[q].programs[i].reward.total);
    }
    snapshot(0, sets.empty() ? 0.0 : exact_sum(expected) / static_cast<double>(sets.size()));
  }

  for (std::size_t it = 1; it <= opt.iters; ++it) {
    std::vector<double> all_rewards;
    for (std::size_t q = 0; q < sets.size(); ++q) {
      const auto idx = sample_indices(logits[q], opt.group, rng);
      std::vector<double> rewards;
      for (std::size_t k : idx) rewards.push_back(sets[q].programs[k].reward.total);
      const auto adv = group_advantages(rewards);

      std::vector<double> sq;
      for (double a : adv) sq.push_back(a * a);
      const double n = static_cast<double>(adv.size());
      const double mean = exact_sum(adv) / n;
      const double sd = std::sqrt(exact_sum(sq) / n - mean * mean);
      if (std::all_of(adv.begin(), adv.end(), [](double a) { return a == 0.0; })) {
        ++log.degenerate_groups;
      } else {
        log.max_abs_adv_mean = std::max(log.max_abs_adv_mean, std::fabs(mean));
        log.max_adv_std_error = std::max(log.max_adv_std_error, std::fabs(sd - 1.0));
      }

      logits[q] = policy_update(logits[q], idx, adv, opt.lr);
      all_rewards.insert(all_rewards.end(), rewards.begin(), rewards.end());
    }
    snapshot(it, all_rewards.empty() ? 0.0 : exact_sum(all_rewards) / static_cast<double>(all_rewards.size()));
  }
  log.final_logits = logits;
  return log;
}

/// CSV: iter,mean_reward,p_best_<question id>... with 17-digit floats.
inline std::string grpo_log_csv(const GrpoLog& log, const std::vector<CandidateSet>& sets) {
  std::string out = "iter,mean_reward";
  for (const auto& s : sets) out += ",p_best_" + s.question_id;
  out += '\n';
  for (const auto& row : log.rows) {
    out += std::to_string(row.iter) + "," + format_g17(row.mean_reward);
    for (double p : row.p_best) out += "," + format_g17(p);
    out += '\n';
  }
  return out;
}

}  // namespace doccog
