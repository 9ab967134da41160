#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "doccog/grpo.hpp"
#include "doccog/io.hpp"

namespace fixtures {

inline std::filesystem::path data_dir() { return DOCCOG_DATA_DIR; }
inline std::filesystem::path golden_dir() { return DOCCOG_GOLDEN_DIR; }
inline std::filesystem::path toy_dir() { return data_dir() / "toy"; }

inline const std::map<std::string, doccog::Document>& toy_docs() {
  static const auto docs = doccog::load_documents_dir(toy_dir() / "docs");
  return docs;
}

inline const doccog::Document& annual_report() { return toy_docs().at("annual_report"); }
inline const doccog::Document& invoice() { return toy_docs().at("invoice"); }

inline std::vector<doccog::GrpoQuestion> toy_questions() {
  return doccog::load_grpo_questions(toy_dir() / "questions.jsonl");
}

inline doccog::Trace trace(std::vector<doccog::VscStep> steps, std::string answer = {},
                           std::string analysis = "Select the region, Read it.") {
  return {std::move(analysis), std::move(steps), std::move(answer)};
}

/// The enumeration grammar widened with every comparator, a numeric
/// filter literal, Compare eq references and a custom concat separator,
/// so the equivalence sweep exercises each operator branch.
inline doccog::ChainGrammar wide_grammar(const doccog::Document& doc) {
  using doccog::ArgMap;
  doccog::ChainGrammar g = doccog::default_grammar(doc);
  const std::vector<ArgMap> extra_filters = {
      {{"field", "row_key"}, {"cmp", "contains"}, {"value", "ev"}},
      {{"field", "col_key"}, {"cmp", "neq"}, {"value", "2023"}},
      {{"field", "text"}, {"cmp", "lt"}, {"value", 100.0}},
      {{"field", "text"}, {"cmp", "ge"}, {"value", "95"}},
      {{"field", "numeric"}, {"cmp", "le"}, {"value", "60"}},
      {{"field", "text"}, {"cmp", "gt"}, {"value", "1,000"}},
      {{"field", "key"}, {"cmp", "eq"}, {"value", "Total Due"}},
      {{"field", "currency"}, {"cmp", "eq"}, {"value", "EUR"}},
  };
  g.filter_args.insert(g.filter_args.end(), extra_filters.begin(), extra_filters.end());
  g.compare_args.push_back({{"metric", "eq"}, {"reference", "120"}});
  g.compare_args.push_back({{"metric", "eq"}, {"reference", 50.0}});
  g.aggregate_args.push_back({{"fn", "concat"}, {"sep", " | "}});
  return g;
}

}  // namespace fixtures
