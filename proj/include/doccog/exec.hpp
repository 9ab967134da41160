#pragma once

#include <algorithm>
#include <cctype>
#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "doccog/decimal.hpp"
#include "doccog/document.hpp"
#include "doccog/error.hpp"
#include "doccog/schema.hpp"
#include "doccog/vsc.hpp"

namespace doccog {

/// A scalar working value.
using Value = std::variant<std::string, Decimal>;

/// One working record produced by Read. Field names: text, key, row_key,
/// col_key. `numeric` is set when `text` reads as a plain decimal.
struct Binding {
  std::map<std::string, std::string> fields;
  std::optional<Decimal> numeric;

  const std::string& text() const {
    static const std::string kEmpty;
    auto it = fields.find("text");
    return it == fields.end() ? kEmpty : it->second;
  }

  /// Field lookup; "numeric" is served from the parsed number.
  std::optional<std::string> get(std::string_view name) const {
    if (name == "numeric") return numeric ? std::optional<std::string>(numeric->to_string()) : std::nullopt;
    auto it = fields.find(std::string(name));
    if (it == fields.end()) return std::nullopt;
    return it->second;
  }

  friend bool operator==(const Binding&, const Binding&) = default;
};

inline Binding make_binding(std::string text) {
  Binding b;
  b.numeric = parse_decimal(text);
  b.fields["text"] = std::move(text);
  return b;
}

/// A selected unit: a whole region, or one cell of a table region.
struct SelectedItem {
  std::string region_id;
  RegionType type = RegionType::paragraph;
  std::string text;
  std::optional<std::string> key;
  std::vector<Cell> cells;  // row-major; a whole table or a restricted subset
  bool is_table = false;

  friend bool operator==(const SelectedItem&, const SelectedItem&) = default;
};

struct StepSnapshot {
  Operator op = Operator::Select;
  std::size_t selection_size = 0;
  std::vector<Binding> working;
};

struct ExecState {
  std::vector<SelectedItem> selection;
  std::vector<Binding> working;
  std::vector<StepSnapshot> log;
};

enum class Comparator { contains, eq, neq, lt, le, gt, ge };

struct Predicate {
  std::string field;
  Comparator cmp = Comparator::eq;
  ArgValue literal;
};

enum class CompareMetric { eq, max, min };
enum class AggregateFn { sum, concat };

struct ExecStatus {
  bool ok = true;
  std::size_t step_index = 0;
  std::string error_code;
  std::string message;
};

/// answer is non-empty iff status.ok. A failure at step_index == number of
/// steps means every step ran but the final working set did not hold
/// exactly one non-empty binding.
struct ExecResult {
  std::string answer;
  ExecState final_state;
  ExecStatus status;
};

namespace detail {

inline std::string ascii_lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

inline bool icontains(std::string_view haystack, std::string_view needle) {
  return ascii_lower(haystack).find(ascii_lower(needle)) != std::string::npos;
}

inline std::string arg_text(const ArgValue& v) {
  if (const auto* s = std::get_if<std::string>(&v)) return *s;
  return arg_to_json(v).dump();
}

inline std::optional<Decimal> arg_number(const ArgValue& v) { return parse_decimal(arg_text(v)); }

/// Text equality that turns numeric when both sides read as decimals,
/// so "2024" equals 2024 and "1,000" equals "1000".
inline bool values_equal(const std::string& lhs, const ArgValue& rhs) {
  auto a = parse_decimal(lhs);
  auto b = arg_number(rhs);
  if (a && b) return *a == *b;
  return lhs == arg_text(rhs);
}

}  // namespace detail

inline Comparator comparator_from_string(std::string_view s) {
  if (s == "contains") return Comparator::contains;
  if (s == "eq") return Comparator::eq;
  if (s == "neq") return Comparator::neq;
  if (s == "lt") return Comparator::lt;
  if (s == "le") return Comparator::le;
  if (s == "gt") return Comparator::gt;
  if (s == "ge") return Comparator::ge;
  throw Error("E_ARG_VALUE", "unknown comparator '" + std::string(s) + "'");
}

/// Replaces the selection with the resolved region. With a key hint, table
/// regions keep only cells whose row_key or col_key contains the hint and
/// other regions survive only if their key contains it (case-insensitive).
inline ExecState exec_select(const Document& doc, ExecState state, std::string_view selector,
                             const std::optional<std::string>& key_hint = std::nullopt) {
  auto res = resolve_selector(doc, selector);
  if (!res.region_index) throw Error(res.error_code, res.message);
  const Region& region = doc.regions[*res.region_index];

  SelectedItem item;
  item.region_id = region.id;
  item.type = region.type;
  item.text = region.text;
  item.key = region.key;
  item.is_table = region.cells.has_value();
  if (region.cells) item.cells = cells_row_major(*region.cells);

  std::vector<SelectedItem> selection;
  if (!key_hint) {
    selection.push_back(std::move(item));
  } else if (item.is_table) {
    std::vector<Cell> kept;
    for (const Cell& c : item.cells) {
      const bool hit = (c.row_key && detail::icontains(*c.row_key, *key_hint)) ||
                       (c.col_key && detail::icontains(*c.col_key, *key_hint));
      if (hit) kept.push_back(c);
    }
    if (!kept.empty()) {
      item.cells = std::move(kept);
      selection.push_back(std::move(item));
    }
  } else if (item.key && detail::icontains(*item.key, *key_hint)) {
    selection.push_back(std::move(item));
  }
  if (selection.empty()) {
    throw Error("E_EMPTY_SELECTION", "key hint '" + *key_hint + "' matches nothing in '" + region.id + "'");
  }
  state.selection = std::move(selection);
  state.working.clear();
  return state;
}

/// One binding per selected cell (row-major) or per selected non-table region.
inline ExecState exec_read(ExecState state) {
  if (state.selection.empty()) throw Error("E_NO_SELECTION", "Read needs a selection");
  std::vector<Binding> working;
  for (const SelectedItem& item : state.selection) {
    if (item.is_table) {
      for (const Cell& c : item.cells) {
        Binding b = make_binding(c.text);
        if (c.row_key) b.fields["row_key"] = *c.row_key;
        if (c.col_key) b.fields["col_key"] = *c.col_key;
        working.push_back(std::move(b));
      }
    } else {
      Binding b = make_binding(item.text);
      if (item.key) b.fields["key"] = *item.key;
      working.push_back(std::move(b));
    }
  }
  state.working = std::move(working);
  return state;
}

inline ExecState exec_filter(ExecState state, const Predicate& p) {
  if (state.working.empty()) throw Error("E_NO_WORKING", "Filter needs working values");
  const bool ordered = p.cmp == Comparator::lt || p.cmp == Comparator::le || p.cmp == Comparator::gt ||
                       p.cmp == Comparator::ge;
  std::optional<Decimal> bound;
  if (ordered) {
    bound = detail::arg_number(p.literal);
    if (!bound) throw Error("E_NOT_NUMERIC", "ordered comparison needs a numeric literal");
  }

  bool any_has_field = false;
  std::vector<Binding> kept;
  for (const Binding& b : state.working) {
    auto value = b.get(p.field);
    if (!value) continue;
    any_has_field = true;
    bool hit = false;
    switch (p.cmp) {
      case Comparator::contains: hit = detail::icontains(*value, detail::arg_text(p.literal)); break;
      case Comparator::eq: hit = detail::values_equal(*value, p.literal); break;
      case Comparator::neq: hit = !detail::values_equal(*value, p.literal); break;
      default: {
        auto x = parse_decimal(*value);
        if (!x) throw Error("E_NOT_NUMERIC", "field '" + p.field + "' value '" + *value + "' is not numeric");
        const auto order = *x <=> *bound;
        hit = (p.cmp == Comparator::lt && order < 0) || (p.cmp == Comparator::le && order <= 0) ||
              (p.cmp == Comparator::gt && order > 0) || (p.cmp == Comparator::ge && order >= 0);
      }
    }
    if (hit) kept.push_back(b);
  }
  if (!any_has_field) throw Error("E_FIELD_MISSING", "no working value has field '" + p.field + "'");
  state.working = std::move(kept);
  return state;
}

/// eq keeps bindings whose text equals the reference; max/min keep every
/// binding that attains the extremum (ties are all kept).
inline ExecState exec_compare(ExecState state, CompareMetric metric,
                              const std::optional<ArgValue>& reference = std::nullopt) {
  if (state.working.empty()) throw Error("E_NO_WORKING", "Compare needs working values");
  std::vector<Binding> kept;
  if (metric == CompareMetric::eq) {
    if (!reference) throw Error("E_MISSING_REFERENCE", "Compare eq needs a reference");
    for (const Binding& b : state.working) {
      if (detail::values_equal(b.text(), *reference)) kept.push_back(b);
    }
  } else {
    std::optional<Decimal> best;
    for (const Binding& b : state.working) {
      if (!b.numeric) continue;
      if (!best || (metric == CompareMetric::max ? *b.numeric > *best : *b.numeric < *best)) best = b.numeric;
    }
    if (!best) throw Error("E_NOT_NUMERIC", "max/min needs at least one numeric value");
    for (const Binding& b : state.working) {
      if (b.numeric && *b.numeric == *best) kept.push_back(b);
    }
  }
  state.working = std::move(kept);
  return state;
}

inline ExecState exec_aggregate(ExecState state, AggregateFn fn, const std::string& sep = ", ") {
  if (state.working.empty()) throw Error("E_NO_WORKING", "Aggregate needs working values");
  Binding out;
  if (fn == AggregateFn::sum) {
    Decimal total;
    for (const Binding& b : state.working) {
      if (!b.numeric) throw Error("E_NOT_NUMERIC", "cannot sum non-numeric value '" + b.text() + "'");
      total = total + *b.numeric;
    }
    out.numeric = total;
    out.fields["text"] = total.to_string();
  } else {
    std::string joined;
    for (std::size_t i = 0; i < state.working.size(); ++i) {
      if (i) joined += sep;
      joined += state.working[i].text();
    }
    out = make_binding(std::move(joined));
  }
  state.working = {std::move(out)};
  return state;
}

namespace detail {

inline std::optional<std::string> string_arg(const VscStep& s, const char* name) {
  auto it = s.args.find(name);
  if (it == s.args.end()) return std::nullopt;
  if (const auto* v = std::get_if<std::string>(&it->second)) return *v;
  throw Error("E_ARG_TYPE", std::string("argument '") + name + "' must be a string");
}

inline std::string required_string_arg(const VscStep& s, const char* name) {
  auto v = string_arg(s, name);
  if (!v) throw Error("E_ARG_MISSING", std::string("argument '") + name + "' is required");
  return *v;
}

inline ExecState apply_step(const Document& doc, ExecState state, const VscStep& step) {
  switch (step.op) {
    case Operator::Select:
      return exec_select(doc, std::move(state), step.region, string_arg(step, "key"));
    case Operator::Read:
      return exec_read(std::move(state));
    case Operator::Filter: {
      Predicate p;
      p.field = required_string_arg(step, "field");
      p.cmp = comparator_from_string(required_string_arg(step, "cmp"));
      auto it = step.args.find("value");
      if (it == step.args.end()) throw Error("E_ARG_MISSING", "argument 'value' is required");
      p.literal = it->second;
      return exec_filter(std::move(state), p);
    }
    case Operator::Compare: {
      const std::string metric = required_string_arg(step, "metric");
      std::optional<ArgValue> ref;
      if (auto it = step.args.find("reference"); it != step.args.end()) ref = it->second;
      if (metric == "eq") return exec_compare(std::move(state), CompareMetric::eq, ref);
      if (metric == "max") return exec_compare(std::move(state), CompareMetric::max);
      if (metric == "min") return exec_compare(std::move(state), CompareMetric::min);
      throw Error("E_ARG_VALUE", "unknown metric '" + metric + "'");
    }
    case Operator::Aggregate: {
      const std::string fn = required_string_arg(step, "fn");
      if (fn == "sum") return exec_aggregate(std::move(state), AggregateFn::sum);
      if (fn == "concat") return exec_aggregate(std::move(state), AggregateFn::concat, string_arg(step, "sep").value_or(", "));
      throw Error("E_ARG_VALUE", "unknown aggregate '" + fn + "'");
    }
  }
  throw Error("E_UNKNOWN_OP", "unknown operator");
}

}  // namespace detail

/// Runs the chain step by step. Never throws: the first failing step is
/// reported in status and the log covers the steps that completed.
inline ExecResult run_chain(const Document& doc, const Trace& t) {
  ExecResult result;
  ExecState state;
  for (std::size_t i = 0; i < t.vsc.size(); ++i) {
    const VscStep& step = t.vsc[i];
    // The log travels outside the step so a throwing step cannot lose it.
    std::vector<StepSnapshot> log = std::move(state.log);
    state.log.clear();
    const ExecState before = state;
    try {
      state = detail::apply_step(doc, std::move(state), step);
    } catch (const Error& e) {
      result.status = {false, i, e.code(), e.what()};
      result.final_state = before;
      result.final_state.log = std::move(log);
      return result;
    }
    state.log = std::move(log);
    state.log.push_back({step.op, state.selection.size(), state.working});
  }

  const std::size_t n = t.vsc.size();
  if (state.working.empty()) {
    result.status = {false, n, "E_NO_ANSWER", "chain finished without a working value"};
  } else if (state.working.size() > 1) {
    result.status = {false, n, "E_AMBIGUOUS_ANSWER",
                     "chain finished with " + std::to_string(state.working.size()) + " working values"};
  } else if (state.working.front().text().empty()) {
    result.status = {false, n, "E_EMPTY_ANSWER", "final working value is empty"};
  } else {
    result.answer = state.working.front().text();
  }
  result.final_state = std::move(state);
  return result;
}

inline json binding_to_json(const Binding& b) {
  json j = json::object();
  for (const auto& [k, v] : b.fields) j[k] = v;
  if (b.numeric) j["numeric"] = b.numeric->to_string();
  return j;
}

/// {"answer", "status": {"ok", "step_index"?, "error"?, "message"?}, "log": [...]}.
inline json exec_result_to_json(const ExecResult& r) {
  json status = {{"ok", r.status.ok}};
  if (!r.status.ok) {
    status["step_index"] = r.status.step_index;
    status["error"] = r.status.error_code;
    status["message"] = r.status.message;
  }
  json log = json::array();
  for (std::size_t i = 0; i < r.final_state.log.size(); ++i) {
    const auto& snap = r.final_state.log[i];
    json working = json::array();
    for (const auto& b : snap.working) working.push_back(binding_to_json(b));
    log.push_back({{"step", i},
                   {"op", std::string(to_string(snap.op))},
                   {"selection_size", snap.selection_size},
                   {"working", std::move(working)}});
  }
  return {{"answer", r.answer}, {"status", std::move(status)}, {"log", std::move(log)}};
}

}  // namespace doccog
