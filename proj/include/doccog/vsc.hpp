#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "doccog/error.hpp"

namespace doccog {

using json = nlohmann::json;

enum class Operator { Select, Read, Filter, Compare, Aggregate };

inline constexpr std::array<Operator, 5> kAllOperators = {
    Operator::Select, Operator::Read, Operator::Filter, Operator::Compare, Operator::Aggregate};

inline std::string_view to_string(Operator op) {
  switch (op) {
    case Operator::Select: return "Select";
    case Operator::Read: return "Read";
    case Operator::Filter: return "Filter";
    case Operator::Compare: return "Compare";
    case Operator::Aggregate: return "Aggregate";
  }
  return "";
}

inline std::optional<Operator> operator_from_string(std::string_view name) {
  for (Operator op : kAllOperators) {
    if (to_string(op) == name) return op;
  }
  return std::nullopt;
}

/// Argument values are either strings or numbers.
using ArgValue = std::variant<std::string, double>;
using ArgMap = std::map<std::string, ArgValue>;

/// One ⟨op, region, args⟩ triplet. `region` is a region id or a region
/// type label; an empty region on a non-Select step means "the live
/// selection" and does not count as a region reference.
struct VscStep {
  Operator op = Operator::Select;
  std::string region;
  ArgMap args;
  friend bool operator==(const VscStep&, const VscStep&) = default;
};

struct Trace {
  std::string question_analysis;
  std::vector<VscStep> vsc;
  std::string answer;
  friend bool operator==(const Trace&, const Trace&) = default;
};

inline constexpr std::size_t kDefaultMaxSteps = 16;

/// A located problem. Codes are stable; paths use $.vsc[i].field notation.
struct Violation {
  std::string code;
  std::string path;
  std::string message;
  friend bool operator==(const Violation&, const Violation&) = default;
};

struct ParseResult {
  std::optional<Trace> trace;
  std::vector<Violation> errors;

  bool ok() const { return trace.has_value(); }
};

inline bool is_region_bearing(const VscStep& step) { return !step.region.empty(); }

inline std::size_t count_region_bearing(const Trace& t) {
  std::size_t n = 0;
  for (const auto& s : t.vsc) n += is_region_bearing(s) ? 1 : 0;
  return n;
}

namespace detail {

inline json arg_to_json(const ArgValue& v) {
  if (const auto* s = std::get_if<std::string>(&v)) return *s;
  const double d = std::get<double>(v);
  // Integral values keep an integer spelling so "2024" stays 2024, not 2024.0.
  if (std::nearbyint(d) == d && std::fabs(d) < 9007199254740992.0) {
    return static_cast<std::int64_t>(d);
  }
  return d;
}

}  // namespace detail

inline json step_to_json(const VscStep& step) {
  json args = json::object();
  for (const auto& [k, v] : step.args) args[k] = detail::arg_to_json(v);
  return {{"op", std::string(to_string(step.op))}, {"region", step.region}, {"args", std::move(args)}};
}

inline json trace_to_json(const Trace& t) {
  json steps = json::array();
  for (const auto& s : t.vsc) steps.push_back(step_to_json(s));
  return {{"question_analysis", t.question_analysis}, {"vsc", std::move(steps)}, {"answer", t.answer}};
}

/// Canonical text: keys sorted at every level, no insignificant whitespace.
inline std::string serialize_trace(const Trace& t) { return trace_to_json(t).dump(); }

inline std::string serialize_step(const VscStep& s) { return step_to_json(s).dump(); }

/// Parses an already-decoded JSON value; collects every violation instead
/// of stopping at the first one.
inline ParseResult parse_trace_json(const json& j, std::size_t max_steps = kDefaultMaxSteps) {
  ParseResult result;
  auto& errs = result.errors;
  auto add = [&errs](std::string code, std::string path, std::string msg) {
    errs.push_back({std::move(code), std::move(path), std::move(msg)});
  };

  if (!j.is_object()) {
    add("E_NOT_OBJECT", "$", "trace must be a JSON object");
    return result;
  }

  Trace t;
  auto read_string_field = [&](const char* name, std::string& out) {
    auto it = j.find(name);
    if (it == j.end()) {
      add("E_MISSING_FIELD", std::string("$.") + name, "required field is missing");
    } else if (!it->is_string()) {
      add("E_FIELD_TYPE", std::string("$.") + name, "expected a string");
    } else {
      out = it->get<std::string>();
    }
  };
  read_string_field("question_analysis", t.question_analysis);

  auto vsc_it = j.find("vsc");
  if (vsc_it == j.end()) {
    add("E_MISSING_FIELD", "$.vsc", "required field is missing");
  } else if (!vsc_it->is_array()) {
    add("E_FIELD_TYPE", "$.vsc", "expected an array");
  } else if (vsc_it->empty()) {
    add("E_EMPTY_CHAIN", "$.vsc", "chain must contain at least one step");
  } else {
    if (vsc_it->size() > max_steps) {
      add("E_CHAIN_TOO_LONG", "$.vsc",
          "chain has " + std::to_string(vsc_it->size()) + " steps, limit is " + std::to_string(max_steps));
    }
    for (std::size_t i = 0; i < vsc_it->size(); ++i) {
      const json& sj = (*vsc_it)[i];
      const std::string path = "$.vsc[" + std::to_string(i) + "]";
      if (!sj.is_object()) {
        add("E_FIELD_TYPE", path, "step must be an object");
        continue;
      }
      VscStep step;
      bool step_ok = true;

      auto op_it = sj.find("op");
      if (op_it == sj.end()) {
        add("E_MISSING_FIELD", path + ".op", "required field is missing");
        step_ok = false;
      } else if (!op_it->is_string()) {
        add("E_FIELD_TYPE", path + ".op", "expected a string");
        step_ok = false;
      } else if (auto op = operator_from_string(op_it->get<std::string>())) {
        step.op = *op;
      } else {
        add("E_UNKNOWN_OP", path + ".op", "unknown operator '" + op_it->get<std::string>() + "'");
        step_ok = false;
      }

      auto region_it = sj.find("region");
      if (region_it == sj.end()) {
        add("E_MISSING_FIELD", path + ".region", "required field is missing");
        step_ok = false;
      } else if (!region_it->is_string()) {
        add("E_FIELD_TYPE", path + ".region", "expected a string");
        step_ok = false;
      } else {
        step.region = region_it->get<std::string>();
      }

      auto args_it = sj.find("args");
      if (args_it == sj.end()) {
        add("E_MISSING_FIELD", path + ".args", "required field is missing");
        step_ok = false;
      } else if (!args_it->is_object()) {
        add("E_FIELD_TYPE", path + ".args", "expected an object");
        step_ok = false;
      } else {
        for (const auto& [key, value] : args_it->items()) {
          if (value.is_string()) {
            step.args.emplace(key, value.get<std::string>());
          } else if (value.is_number()) {
            step.args.emplace(key, value.get<double>());
          } else {
            add("E_FIELD_TYPE", path + ".args." + key, "argument values must be strings or numbers");
            step_ok = false;
          }
        }
      }

      if (i == 0 && step_ok && step.op != Operator::Select) {
        add("E_FIRST_NOT_SELECT", path + ".op", "the first step must be Select");
      }
      if (step_ok) t.vsc.push_back(std::move(step));
    }
  }

  read_string_field("answer", t.answer);

  if (errs.empty()) result.trace = std::move(t);
  return result;
}

/// Total: any input yields either a Trace or a non-empty error list.
inline ParseResult parse_trace(std::string_view raw, std::size_t max_steps = kDefaultMaxSteps) {
  json j = json::parse(raw, nullptr, /*allow_exceptions=*/false);
  if (j.is_discarded()) {
    ParseResult r;
    r.errors.push_back({"E_PARSE", "$", "input is not valid JSON"});
    return r;
  }
  return parse_trace_json(j, max_steps);
}

/// One model output as seen by the reward engine. `trace` is present iff
/// `raw` parsed; `region_probs` holds p_t for each region-bearing step.
struct RolloutRecord {
  std::string raw;
  std::optional<Trace> trace;
  std::vector<double> region_probs;
  std::string question;
  std::string doc_id;
};

inline RolloutRecord make_rollout(std::string raw, std::vector<double> region_probs,
                                  std::string question = {}, std::string doc_id = {}) {
  RolloutRecord r;
  r.trace = parse_trace(raw).trace;
  r.raw = std::move(raw);
  r.region_probs = std::move(region_probs);
  r.question = std::move(question);
  r.doc_id = std::move(doc_id);
  return r;
}

/// Decodes one JSON-lines rollout record:
/// {"doc_id": str, "question": str, "raw": str, "region_probs": [float]}.
/// Throws E_RECORD for structurally malformed lines.
inline RolloutRecord rollout_from_json(const json& j) {
  if (!j.is_object()) throw Error("E_RECORD", "rollout record must be a JSON object");
  auto str = [&j](const char* name, bool required) -> std::string {
    auto it = j.find(name);
    if (it == j.end()) {
      if (required) throw Error("E_RECORD", std::string("missing field '") + name + "'");
      return {};
    }
    if (!it->is_string()) throw Error("E_RECORD", std::string("field '") + name + "' must be a string");
    return it->get<std::string>();
  };
  std::vector<double> probs;
  if (auto it = j.find("region_probs"); it != j.end() && !it->is_null()) {
    if (!it->is_array()) throw Error("E_RECORD", "field 'region_probs' must be an array");
    for (const auto& p : *it) {
      if (!p.is_number()) throw Error("E_RECORD", "region_probs entries must be numbers");
      probs.push_back(p.get<double>());
    }
  }
  return make_rollout(str("raw", true), std::move(probs), str("question", false), str("doc_id", false));
}

inline json rollout_to_json(const RolloutRecord& r) {
  return {{"doc_id", r.doc_id}, {"question", r.question}, {"raw", r.raw}, {"region_probs", r.region_probs}};
}

}  // namespace doccog
