#pragma once

// Synthetic rollout corpus for the rejection filter. Every record is built
// with a known defect (or none), and the expected decision comes from the
// construction itself: token F1 is the rational 2k / (|pred| + |gold|) of
// the chosen counts, so the oracle never touches the library's matcher.

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "doccog/reward.hpp"
#include "doccog/rng.hpp"
#include "doccog/vsc.hpp"

namespace corpus {

using nlohmann::json;

struct Item {
  doccog::RolloutRecord record;
  doccog::GoldReference gold;
  json gold_json;
  std::string kind;
  bool expect_retain = false;
  std::string expect_reason;
};

inline const std::vector<std::string>& answer_words() {
  static const std::vector<std::string> w = {"alpha", "bravo", "charlie", "delta", "echo", "foxtrot",
                                             "golf", "hotel", "india", "juliet", "kilo", "lima"};
  return w;
}

inline const std::vector<std::string>& junk_words() {
  static const std::vector<std::string> w = {"zulu", "yankee", "xray", "whiskey", "victor", "uniform"};
  return w;
}

/// Valid chains, one per toy document, with their region-bearing counts.
inline json valid_chain(const std::string& doc_id) {
  if (doc_id == "invoice") {
    return json::array({{{"op", "Select"}, {"region", "inv_total"}, {"args", json::object()}},
                        {{"op", "Read"}, {"region", "inv_total"}, {"args", json::object()}}});
  }
  return json::array({{{"op", "Select"}, {"region", "table"}, {"args", {{"key", "Revenue"}}}},
                      {{"op", "Read"}, {"region", "table"}, {"args", json::object()}},
                      {{"op", "Aggregate"}, {"region", "table"}, {"args", {{"fn", "sum"}}}}});
}

struct Counts {
  std::size_t gold_len, shared, junk;
};

/// Shares `shared` of the gold words (re-cased, some with trailing
/// punctuation, which normalization removes) plus `junk` foreign words.
inline std::string make_prediction(const std::vector<std::string>& gold_words, const Counts& c, doccog::SeededRng& rng) {
  std::vector<std::string> toks(gold_words.begin(), gold_words.begin() + static_cast<std::ptrdiff_t>(c.shared));
  for (std::size_t j = 0; j < c.junk; ++j) toks.push_back(junk_words()[j % junk_words().size()]);
  for (std::size_t i = toks.size(); i > 1; --i) std::swap(toks[i - 1], toks[rng.next_u64() % i]);
  std::string out;
  for (std::size_t i = 0; i < toks.size(); ++i) {
    std::string t = toks[i];
    if (rng.uniform01() < 0.3) t[0] = static_cast<char>(t[0] - 'a' + 'A');
    if (rng.uniform01() < 0.2) t += ",";
    out += (i ? " " : "") + t;
  }
  return out;
}

/// F1 >= num/den, decided in integers.
inline bool f1_at_least(const Counts& c, long num, long den) {
  const long pred_len = static_cast<long>(c.shared + c.junk);
  if (c.shared == 0) return false;
  return 2L * static_cast<long>(c.shared) * den >= num * (pred_len + static_cast<long>(c.gold_len));
}

inline std::vector<Item> make_filter_corpus(std::size_t n, std::uint64_t seed) {
  doccog::SeededRng rng(seed);
  // (gold_len, shared, junk): the first three sit exactly on F1 = 0.8.
  const std::vector<Counts> graded = {{4, 4, 2}, {2, 2, 1}, {6, 6, 3}, {5, 4, 0}, {5, 4, 1}, {5, 4, 2},
                                      {3, 2, 0}, {4, 3, 0}, {6, 5, 1}, {8, 7, 1}, {3, 1, 0}, {6, 0, 2},
                                      {7, 6, 0}, {5, 5, 1}, {4, 2, 2}, {1, 1, 0}};
  std::vector<Item> items;
  for (std::size_t i = 0; i < n; ++i) {
    const std::string doc_id = i % 2 ? "invoice" : "annual_report";
    Item it;
    Counts counts{0, 0, 0};
    const std::size_t mode = i % 5;
    if (mode == 1 || mode == 2) {
      counts = graded[(i / 5 * 2 + (mode - 1)) % graded.size()];
    } else {
      counts.gold_len = 1 + rng.next_u64() % 6;
      counts.shared = counts.gold_len;
    }
    std::vector<std::string> gold_words = answer_words();
    for (std::size_t k = gold_words.size(); k > 1; --k) std::swap(gold_words[k - 1], gold_words[rng.next_u64() % k]);
    gold_words.resize(counts.gold_len);
    std::string gold_answer;
    for (const auto& w : gold_words) gold_answer += (gold_answer.empty() ? "" : " ") + w;

    json trace = {{"question_analysis", "Select the region, Read its value."},
                  {"vsc", valid_chain(doc_id)},
                  {"answer", make_prediction(gold_words, counts, rng)}};
    std::string raw;
    bool structure_ok = true, schema_ok = true;

    if (mode == 3) {
      structure_ok = false;
      switch ((i / 5) % 7) {
        case 0: raw = trace.dump().substr(0, trace.dump().size() / 2); it.kind = "truncated"; break;
        case 1: trace.erase("answer"); it.kind = "missing_answer"; break;
        case 2: trace["question_analysis"] = 42; it.kind = "analysis_not_string"; break;
        case 3: trace["vsc"] = json::array(); it.kind = "empty_chain"; break;
        case 4: trace["vsc"][0].erase("args"); it.kind = "step_without_args"; break;
        case 5: raw = "[]"; it.kind = "not_object"; break;
        default: trace["answer"] = nullptr; it.kind = "null_answer"; break;
      }
    } else if (mode == 4) {
      schema_ok = false;
      switch ((i / 5) % 7) {
        case 0: std::swap(trace["vsc"][0], trace["vsc"][1]); it.kind = "read_first"; break;
        case 1: trace["vsc"][0]["args"]["colour"] = "red"; it.kind = "unknown_arg"; break;
        case 2: trace["vsc"][1] = {{"op", "Aggregate"}, {"region", trace["vsc"][0]["region"]}, {"args", {{"fn", "sum"}}}};
          it.kind = "no_read"; break;
        case 3: trace["vsc"][0]["region"] = "sidebar"; it.kind = "unresolved_region"; break;
        case 4: trace["vsc"][1]["op"] = "Lookup"; it.kind = "unknown_op"; break;
        case 5: trace["vsc"].push_back({{"op", "Filter"}, {"region", trace["vsc"][0]["region"]},
                                        {"args", {{"field", "text"}, {"cmp", "lt"}, {"value", "lots"}}}});
          it.kind = "ordered_cmp_text"; break;
        default: trace["vsc"].push_back({{"op", "Compare"}, {"region", trace["vsc"][0]["region"]},
                                         {"args", {{"metric", "eq"}}}});
          it.kind = "eq_without_reference"; break;
      }
    } else {
      it.kind = mode == 0 ? "clean" : "graded_f1";
    }
    if (raw.empty()) raw = trace.dump();

    std::vector<double> probs;
    if (auto parsed = doccog::parse_trace(raw); parsed.ok()) {
      for (std::size_t k = 0; k < doccog::count_region_bearing(*parsed.trace); ++k) probs.push_back(rng.uniform(0.05, 1.0));
    }
    it.record = doccog::make_rollout(raw, probs, "synthetic question " + std::to_string(i), doc_id);
    it.gold_json = {{"doc_id", doc_id}, {"answers", json::array({gold_answer})}};
    if (i % 7 == 3) it.gold_json["answers"].push_back("lorem ipsum");  // an unrelated second answer
    it.gold = doccog::gold_from_json(it.gold_json);

    if (!structure_ok) {
      it.expect_reason = "structure";
    } else if (!schema_ok) {
      it.expect_reason = "schema";
    } else if (!f1_at_least(counts, 4, 5)) {
      it.expect_reason = "low_f1";
    }
    it.expect_retain = it.expect_reason.empty();
    items.push_back(std::move(it));
  }
  return items;
}

}  // namespace corpus
