#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "doccog/decimal.hpp"
#include "doccog/document.hpp"
#include "doccog/vsc.hpp"

namespace doccog {

// ---------------------------------------------------------------------------
// Per-operator argument schema
//
//   Select     key?: string            case-insensitive key hint
//   Read       (none)
//   Filter     field: string, cmp: contains|eq|neq|lt|le|gt|ge, value: string|number
//              (lt/le/gt/ge need a numeric value)
//   Compare    metric: eq|max|min, reference: string|number (eq only, required)
//   Aggregate  fn: sum|concat, sep?: string (concat only)
// ---------------------------------------------------------------------------

inline constexpr std::string_view kComparators[] = {"contains", "eq", "neq", "lt", "le", "gt", "ge"};
inline constexpr std::string_view kMetrics[] = {"eq", "max", "min"};
inline constexpr std::string_view kAggregators[] = {"sum", "concat"};

inline bool is_ordered_comparator(std::string_view cmp) {
  return cmp == "lt" || cmp == "le" || cmp == "gt" || cmp == "ge";
}

inline bool arg_is_numeric(const ArgValue& v) {
  if (std::holds_alternative<double>(v)) return true;
  return parse_decimal(std::get<std::string>(v)).has_value();
}

/// Violations of the argument schema of one step (codes E_ARG_*,
/// E_SELECTOR_EMPTY). `path` is the step path, e.g. "$.vsc[2]".
inline std::vector<Violation> check_step_args(const VscStep& step, const std::string& path) {
  std::vector<Violation> out;
  auto add = [&](const char* code, const std::string& field, std::string msg) {
    out.push_back({code, path + (field.empty() ? "" : ".args." + field), std::move(msg)});
  };

  struct Spec {
    std::string_view name;
    bool required;
    bool string_only;
  };
  std::vector<Spec> specs;
  switch (step.op) {
    case Operator::Select: specs = {{"key", false, true}}; break;
    case Operator::Read: break;
    case Operator::Filter: specs = {{"field", true, true}, {"cmp", true, true}, {"value", true, false}}; break;
    case Operator::Compare: specs = {{"metric", true, true}, {"reference", false, false}}; break;
    case Operator::Aggregate: specs = {{"fn", true, true}, {"sep", false, true}}; break;
  }

  for (const auto& [key, value] : step.args) {
    const Spec* spec = nullptr;
    for (const auto& s : specs) {
      if (s.name == key) spec = &s;
    }
    if (!spec) {
      add("E_ARG_UNKNOWN", key, "argument '" + key + "' is not accepted by " + std::string(to_string(step.op)));
      continue;
    }
    if (spec->string_only && !std::holds_alternative<std::string>(value)) {
      add("E_ARG_TYPE", key, "argument '" + key + "' must be a string");
    }
  }
  for (const auto& s : specs) {
    if (s.required && !step.args.count(std::string(s.name))) {
      add("E_ARG_MISSING", std::string(s.name), "required argument '" + std::string(s.name) + "' is missing");
    }
  }

  auto str_arg = [&](const char* name) -> std::optional<std::string> {
    auto it = step.args.find(name);
    if (it == step.args.end()) return std::nullopt;
    if (const auto* s = std::get_if<std::string>(&it->second)) return *s;
    return std::nullopt;
  };
  auto one_of = [](const std::string& v, const auto& allowed) {
    for (std::string_view a : allowed) {
      if (a == v) return true;
    }
    return false;
  };

  switch (step.op) {
    case Operator::Select:
      if (step.region.empty()) {
        out.push_back({"E_SELECTOR_EMPTY", path + ".region", "Select needs a non-empty region selector"});
      }
      if (auto key = str_arg("key"); key && key->empty()) add("E_ARG_VALUE", "key", "key hint must be non-empty");
      break;
    case Operator::Read: break;
    case Operator::Filter: {
      if (auto f = str_arg("field"); f && f->empty()) add("E_ARG_VALUE", "field", "field name must be non-empty");
      auto cmp = str_arg("cmp");
      if (cmp && !one_of(*cmp, kComparators)) add("E_ARG_VALUE", "cmp", "unknown comparator '" + *cmp + "'");
      auto value = step.args.find("value");
      if (cmp && is_ordered_comparator(*cmp) && value != step.args.end() && !arg_is_numeric(value->second)) {
        add("E_ARG_VALUE", "value", "comparator '" + *cmp + "' needs a numeric literal");
      }
      break;
    }
    case Operator::Compare: {
      auto metric = str_arg("metric");
      if (metric && !one_of(*metric, kMetrics)) add("E_ARG_VALUE", "metric", "unknown metric '" + *metric + "'");
      const bool has_ref = step.args.count("reference") > 0;
      if (metric && *metric == "eq" && !has_ref) {
        add("E_ARG_MISSING", "reference", "metric 'eq' needs a reference value");
      }
      if (metric && *metric != "eq" && has_ref) {
        add("E_ARG_VALUE", "reference", "only metric 'eq' takes a reference");
      }
      break;
    }
    case Operator::Aggregate: {
      auto fn = str_arg("fn");
      if (fn && !one_of(*fn, kAggregators)) add("E_ARG_VALUE", "fn", "unknown aggregate '" + *fn + "'");
      if (fn && *fn != "concat" && step.args.count("sep")) add("E_ARG_VALUE", "sep", "only concat takes a separator");
      break;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Region selectors: exact region id first, then a region type label that
// matches exactly one region. Anything else does not resolve.
// ---------------------------------------------------------------------------

struct SelectorResolution {
  std::optional<std::size_t> region_index;
  std::string error_code;  // E_REGION_UNRESOLVED when unresolved
  std::string message;
};

inline SelectorResolution resolve_selector(const Document& doc, std::string_view selector) {
  for (std::size_t i = 0; i < doc.regions.size(); ++i) {
    if (doc.regions[i].id == selector) return {i, {}, {}};
  }
  if (auto type = region_type_from_string(selector)) {
    std::optional<std::size_t> found;
    std::size_t matches = 0;
    for (std::size_t i = 0; i < doc.regions.size(); ++i) {
      if (doc.regions[i].type == *type) {
        if (!found) found = i;
        ++matches;
      }
    }
    if (matches == 1) return {found, {}, {}};
    if (matches > 1) {
      return {std::nullopt, "E_REGION_UNRESOLVED",
              "selector '" + std::string(selector) + "' matches " + std::to_string(matches) + " regions"};
    }
  }
  return {std::nullopt, "E_REGION_UNRESOLVED",
          "selector '" + std::string(selector) + "' names no region in document '" + doc.id + "'"};
}

/// Outcome of validate_schema. Violations are data; schema_ok is true
/// exactly when there are none.
struct ValidationReport {
  bool schema_ok = true;
  std::vector<Violation> violations;
  std::map<std::string, std::size_t> checked_counts;
  double diversity = 0.0;

  std::size_t count(const std::string& key) const {
    auto it = checked_counts.find(key);
    return it == checked_counts.end() ? 0 : it->second;
  }

  bool has(std::string_view code) const {
    for (const auto& v : violations) {
      if (v.code == code) return true;
    }
    return false;
  }
};

/// Checks four families: per-step argument schema, operator ordering,
/// region consistency (against `doc` when given) and step diversity.
///
/// Counts recorded in checked_counts:
///   steps, args_ok, ordering_ok, region_refs, region_resolved, distinct_steps
inline ValidationReport validate_schema(const Trace& t, const Document* doc = nullptr,
                                        std::size_t max_steps = kDefaultMaxSteps) {
  ValidationReport report;
  auto& v = report.violations;
  const std::size_t n = t.vsc.size();

  if (n == 0) v.push_back({"E_EMPTY_CHAIN", "$.vsc", "chain must contain at least one step"});
  if (n > max_steps) {
    v.push_back({"E_CHAIN_TOO_LONG", "$.vsc", "chain exceeds " + std::to_string(max_steps) + " steps"});
  }

  std::size_t args_ok = 0;
  std::size_t ordering_ok = 0;
  std::size_t region_refs = 0;
  std::size_t region_resolved = 0;
  std::set<std::string> distinct;

  // Live selection: the most recent Select, and whether it resolved.
  std::optional<std::size_t> live_select;
  bool live_resolved = false;
  std::optional<std::size_t> live_region;
  bool read_since_select = false;

  for (std::size_t i = 0; i < n; ++i) {
    const VscStep& step = t.vsc[i];
    const std::string path = "$.vsc[" + std::to_string(i) + "]";
    distinct.insert(serialize_step(step));

    auto arg_violations = check_step_args(step, path);
    if (arg_violations.empty()) ++args_ok;
    v.insert(v.end(), arg_violations.begin(), arg_violations.end());

    bool order_ok = true;
    if (i == 0 && step.op != Operator::Select) {
      v.push_back({"E_FIRST_NOT_SELECT", path + ".op", "the first step must be Select"});
      order_ok = false;
    }
    switch (step.op) {
      case Operator::Select:
        read_since_select = false;
        break;
      case Operator::Read:
        if (!live_select) {
          v.push_back({"E_ORDER_NO_SELECT", path + ".op", "Read needs a preceding Select"});
          order_ok = false;
        }
        read_since_select = true;
        break;
      case Operator::Filter:
      case Operator::Compare:
      case Operator::Aggregate:
        if (!read_since_select) {
          v.push_back({"E_ORDER_NO_READ", path + ".op",
                       std::string(to_string(step.op)) + " needs a Read after the most recent Select"});
          order_ok = false;
        }
        break;
    }
    if (order_ok) ++ordering_ok;

    if (step.op == Operator::Select) {
      ++region_refs;
      live_select = i;
      live_region.reset();
      live_resolved = false;
      if (!step.region.empty()) {
        if (doc) {
          auto res = resolve_selector(*doc, step.region);
          if (res.region_index) {
            live_resolved = true;
            live_region = res.region_index;
          } else {
            v.push_back({res.error_code, path + ".region", res.message});
          }
        } else {
          live_resolved = true;
        }
      }
      if (live_resolved) ++region_resolved;
    } else if (is_region_bearing(step)) {
      ++region_refs;
      bool echoes = false;
      if (live_select && live_resolved) {
        echoes = step.region == t.vsc[*live_select].region;
        if (!echoes && doc && live_region) {
          const Region& r = doc->regions[*live_region];
          echoes = step.region == r.id || step.region == to_string(r.type);
        }
      }
      if (echoes) {
        ++region_resolved;
      } else {
        v.push_back({"E_REGION_NOT_LIVE", path + ".region",
                     "region '" + step.region + "' does not refer to the live selection"});
      }
    }
  }

  report.checked_counts = {{"steps", n},
                           {"args_ok", args_ok},
                           {"ordering_ok", ordering_ok},
                           {"region_refs", region_refs},
                           {"region_resolved", region_resolved},
                           {"distinct_steps", distinct.size()}};
  report.diversity = n == 0 ? 0.0 : static_cast<double>(distinct.size()) / static_cast<double>(n);
  report.schema_ok = v.empty();
  return report;
}

inline ValidationReport validate_schema(const Trace& t, const Document& doc) {
  return validate_schema(t, &doc);
}

}  // namespace doccog
