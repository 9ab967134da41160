// doccog: batch front end over the library. Every subcommand writes
// line-oriented, deterministic output to stdout; diagnostics go to stderr.
// Exit codes: 0 success, 1 validation or I/O failure, 2 usage error.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "doccog/error.hpp"
#include "doccog/exec.hpp"
#include "doccog/grpo.hpp"
#include "doccog/io.hpp"
#include "doccog/reward.hpp"
#include "doccog/schema.hpp"
#include "doccog/supervision.hpp"
#include "doccog/tower.hpp"

namespace fs = std::filesystem;
using namespace doccog;

namespace {

constexpr int kOk = 0;
constexpr int kFailure = 1;
constexpr int kUsage = 2;

struct Grid {
  std::size_t h = 0;
  std::size_t w = 0;
};

std::optional<Grid> parse_grid(const std::string& s) {
  const auto x = s.find('x');
  if (x == std::string::npos || x == 0 || x + 1 == s.size()) return std::nullopt;
  try {
    std::size_t used_h = 0, used_w = 0;
    const std::string hs = s.substr(0, x), ws = s.substr(x + 1);
    const long h = std::stol(hs, &used_h);
    const long w = std::stol(ws, &used_w);
    if (used_h != hs.size() || used_w != ws.size() || h < 1 || w < 1 || h > 4096 || w > 4096) return std::nullopt;
    return Grid{static_cast<std::size_t>(h), static_cast<std::size_t>(w)};
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

std::optional<RewardWeights> parse_weights(const std::string& s) {
  std::vector<double> vals;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      const double v = std::stod(item, &used);
      if (used != item.size() || !std::isfinite(v) || v < 0) return std::nullopt;
      vals.push_back(v);
    } catch (const std::exception&) {
      return std::nullopt;
    }
  }
  if (vals.size() != 4) return std::nullopt;
  return RewardWeights{vals[0], vals[1], vals[2], vals[3]};
}

std::string grid_validator(std::string& s) { return parse_grid(s) ? "" : "expected HxW with H, W >= 1"; }
std::string weights_validator(std::string& s) {
  return parse_weights(s) ? "" : "expected four non-negative numbers q,v,s,r";
}

/// Writes to `path`, or stdout when path is empty or "-".
void emit(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
  } else {
    write_file(path, text);
  }
}

// -- validate / exec ---------------------------------------------------------

json violation_json(const Violation& v) { return {{"code", v.code}, {"path", v.path}, {"message", v.message}}; }

int cmd_validate(const std::string& trace_path, const std::string& doc_path) {
  const ParseResult parsed = parse_trace(read_file(trace_path));
  if (!parsed.ok()) {
    json errs = json::array();
    for (const auto& e : parsed.errors) errs.push_back(violation_json(e));
    std::cout << json{{"parsed", false}, {"schema_ok", false}, {"violations", errs}}.dump() << '\n';
    return kFailure;
  }
  std::optional<Document> doc;
  if (!doc_path.empty()) doc = load_document_file(doc_path);
  const ValidationReport r = validate_schema(*parsed.trace, doc ? &*doc : nullptr);
  json violations = json::array();
  for (const auto& v : r.violations) violations.push_back(violation_json(v));
  json counts = json::object();
  for (const auto& [k, n] : r.checked_counts) counts[k] = n;
  std::cout << json{{"parsed", true},
                    {"schema_ok", r.schema_ok},
                    {"violations", violations},
                    {"checked_counts", counts},
                    {"diversity", r.diversity}}
                   .dump()
            << '\n';
  return r.schema_ok ? kOk : kFailure;
}

int cmd_exec(const std::string& doc_path, const std::string& trace_path) {
  const Document doc = load_document_file(doc_path);
  const ParseResult parsed = parse_trace(read_file(trace_path));
  if (!parsed.ok()) {
    for (const auto& e : parsed.errors) std::cerr << trace_path << ": " << e.code << " " << e.path << ": " << e.message << '\n';
    return kFailure;
  }
  std::cout << exec_result_to_json(run_chain(doc, *parsed.trace)).dump() << '\n';
  return kOk;
}

// -- score / filter ----------------------------------------------------------

/// A gold problem aborts the whole run (exit 1); anything wrong with a
/// rollout line is reported on that line's output and the run goes on.
struct GoldFailure {
  std::string message;
};

using LineFn = std::function<std::string(std::size_t lineno, const std::string& rollout, const std::string& gold)>;

/// Reads rollouts and gold in lockstep, in chunks, fanning each chunk over
/// `jobs` threads. Output order is input order whatever `jobs` is, and
/// memory is bounded by the chunk size.
int stream_records(const std::string& rollouts_path, const std::string& gold_path, std::size_t jobs, const LineFn& fn) {
  std::ifstream rollouts(rollouts_path);
  if (!rollouts) throw Error("E_IO", "cannot open '" + rollouts_path + "'");
  std::ifstream golds(gold_path);
  if (!golds) throw Error("E_IO", "cannot open '" + gold_path + "'");

  const std::size_t chunk = 256 * jobs;
  std::size_t lineno = 0;
  auto next_gold = [&golds](std::string& out) {
    while (std::getline(golds, out)) {
      if (out.find_first_not_of(" \t\r") != std::string::npos) return true;
    }
    return false;
  };

  for (;;) {
    std::vector<std::size_t> numbers;
    std::vector<std::string> r_lines, g_lines;
    std::string line;
    while (r_lines.size() < chunk && std::getline(rollouts, line)) {
      ++lineno;
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      std::string gold;
      if (!next_gold(gold)) {
        std::cerr << gold_path << ": fewer gold records than rollouts (rollout line " << lineno << ")\n";
        return kFailure;
      }
      numbers.push_back(lineno);
      r_lines.push_back(std::move(line));
      g_lines.push_back(std::move(gold));
    }
    if (r_lines.empty()) break;

    std::vector<std::string> out(r_lines.size());
    std::vector<std::optional<GoldFailure>> failures(r_lines.size());
    auto work = [&](std::size_t start) {
      for (std::size_t i = start; i < r_lines.size(); i += jobs) {
        try {
          out[i] = fn(numbers[i], r_lines[i], g_lines[i]);
        } catch (const GoldFailure& g) {
          failures[i] = g;
        }
      }
    };
    if (jobs == 1) {
      work(0);
    } else {
      std::vector<std::thread> pool;
      for (std::size_t t = 0; t < jobs; ++t) pool.emplace_back(work, t);
      for (auto& t : pool) t.join();
    }
    for (std::size_t i = 0; i < out.size(); ++i) {
      if (failures[i]) {
        std::cout.flush();
        std::cerr << gold_path << ": record for rollout line " << numbers[i] << ": " << failures[i]->message << '\n';
        return kFailure;
      }
      std::cout << out[i] << '\n';
    }
  }
  std::string extra;
  if (next_gold(extra)) {
    std::cerr << gold_path << ": more gold records than rollouts\n";
    return kFailure;
  }
  return kOk;
}

GoldReference parse_gold_line(const std::string& text, const std::string& doc_id) {
  const json j = json::parse(text, nullptr, false);
  if (j.is_discarded()) throw GoldFailure{"not valid JSON"};
  try {
    GoldReference g = gold_from_json(j);
    // An unreadable rollout has no doc_id to check against; its own error line covers it.
    if (auto it = j.find("doc_id"); !doc_id.empty() && it != j.end() && it->is_string() && it->get<std::string>() != doc_id) {
      throw GoldFailure{"doc_id '" + it->get<std::string>() + "' does not match rollout doc_id '" + doc_id + "'"};
    }
    return g;
  } catch (const Error& e) {
    throw GoldFailure{e.what()};
  }
}

/// Parses one rollout line and its gold, then hands both to `body`. Record
/// errors become {"line", "doc_id", "error": {code, message}}.
std::string with_record(const std::map<std::string, Document>& docs, std::size_t lineno, const std::string& r_line,
                        const std::string& g_line,
                        const std::function<json(const RolloutRecord&, const Document&, const GoldReference&)>& body) {
  std::string doc_id;
  auto error_line = [&](const std::string& code, const std::string& message) {
    return json{{"line", lineno}, {"doc_id", doc_id}, {"error", {{"code", code}, {"message", message}}}}.dump();
  };
  const json j = json::parse(r_line, nullptr, false);
  if (j.is_discarded()) return error_line("E_RECORD", "rollout line is not valid JSON");
  if (j.is_object() && j.contains("doc_id") && j["doc_id"].is_string()) doc_id = j["doc_id"].get<std::string>();
  const GoldReference gold = parse_gold_line(g_line, doc_id);
  try {
    const RolloutRecord rec = rollout_from_json(j);
    auto it = docs.find(rec.doc_id);
    if (it == docs.end()) return error_line("E_UNKNOWN_DOC", "no document with id '" + rec.doc_id + "'");
    return body(rec, it->second, gold).dump();
  } catch (const Error& e) {
    return error_line(e.code(), e.what());
  }
}

int cmd_score(const std::string& docs_dir, const std::string& rollouts, const std::string& gold, bool gated,
              const RewardWeights& w, std::size_t jobs) {
  const auto docs = load_documents_dir(docs_dir);
  return stream_records(rollouts, gold, jobs, [&](std::size_t n, const std::string& r, const std::string& g) {
    return with_record(docs, n, r, g, [&](const RolloutRecord& rec, const Document& doc, const GoldReference& gr) {
      const RewardBreakdown b = composite_reward(rec, doc, gr, w, gated);
      return json{{"doc_id", rec.doc_id}, {"breakdown", breakdown_to_json(b)},
                  {"retain", rejection_filter(rec, doc, gr).retain}};
    });
  });
}

int cmd_filter(const std::string& docs_dir, const std::string& rollouts, const std::string& gold,
               std::optional<double> tau, std::size_t jobs) {
  const auto docs = load_documents_dir(docs_dir);
  return stream_records(rollouts, gold, jobs, [&](std::size_t n, const std::string& r, const std::string& g) {
    return with_record(docs, n, r, g, [&](const RolloutRecord& rec, const Document& doc, GoldReference gr) {
      if (tau) gr.tau = *tau;
      const FilterDecision d = rejection_filter(rec, doc, gr);
      json out = {{"line", n}, {"doc_id", rec.doc_id}, {"retain", d.retain}};
      if (!d.retain) out["reason"] = d.reason;
      return out;
    });
  });
}

// -- supervision / tower -----------------------------------------------------

int cmd_supervise(const std::string& doc_path, const Grid& g, const std::string& out) {
  const Document doc = load_document_file(doc_path);
  emit(out, grid_to_json_text(build_supervision_map(doc, g.h, g.w)) + "\n");
  return kOk;
}

struct TowerFlags {
  std::string grid = "4x4";
  std::size_t dim = 8;
  std::size_t rank = 2;
  std::size_t hidden = 8;
  std::size_t lm_dim = 8;

  TowerShape shape() const {
    const Grid g = *parse_grid(grid);
    return {g.h, g.w, dim, rank, hidden, lm_dim};
  }
};

int cmd_tower_train(const std::string& pages_dir, const TowerFlags& tf, std::uint64_t seed, const TrainOptions& opt,
                    const std::string& out, const std::string& log) {
  const TowerShape shape = tf.shape();
  const auto docs = load_documents_dir(pages_dir);
  if (docs.empty()) throw Error("E_IO", "no page documents in '" + pages_dir + "'");
  // Page k gets patch noise from seed + k, in document-id order.
  std::vector<TrainingPage> pages;
  std::uint64_t k = 0;
  for (const auto& [id, doc] : docs) {
    GridMap y = build_supervision_map(doc, shape.grid_h, shape.grid_w);
    Matrix v = synthetic_patches(y, shape.dim, seed + k++);
    pages.push_back({std::move(v), std::move(y)});
  }
  const TrainResult res = train_tower(pages, init_tower_params(shape, seed), opt);

  std::string curve = "step,loss\n";
  for (std::size_t i = 0; i < res.loss_curve.size(); ++i) curve += std::to_string(i) + "," + format_g17(res.loss_curve[i]) + "\n";
  if (!log.empty()) write_file(log, curve);
  if (!out.empty()) write_file(out, tower_params_to_json(res.params).dump() + "\n");

  const double first = res.loss_curve.front();
  const double last = res.loss_curve.back();
  std::cout << "pages=" << pages.size() << " steps=" << opt.steps << " initial_loss=" << format_g17(first)
            << " final_loss=" << format_g17(last) << " ratio=" << format_g17(last / first) << '\n';
  for (std::size_t i = 0; i < pages.size(); ++i) {
    const TowerOutput o = tower_forward(pages[i].patches, res.params, shape.grid_h, shape.grid_w);
    const Centroid cp = centroid(o.p_grid);
    const Centroid cy = centroid(pages[i].target);
    std::cout << "page=" << i << " centroid_pred=" << format_g17(cp.u) << "," << format_g17(cp.v)
              << " centroid_true=" << format_g17(cy.u) << "," << format_g17(cy.v) << '\n';
  }
  return kOk;
}

int cmd_grad_check(const TowerFlags& tf, std::uint64_t seed, double lambda_c, double threshold) {
  const TowerFixture f = random_tower_fixture(tf.shape(), seed);
  const GradCheckReport r = gradient_check(f.patches, f.params, f.target, lambda_c);
  std::cout << "seed=" << seed << " entries=" << r.entries << " max_rel_error=" << format_g17(r.max_rel_error) << '\n';
  return r.max_rel_error <= threshold ? kOk : kFailure;
}

// -- grpo --------------------------------------------------------------------

int cmd_grpo(const std::string& fixture, const GrpoOptions& opt, const RewardWeights& w, bool gated,
             const std::string& log_path) {
  const auto docs = load_documents_dir(fs::path(fixture) / "docs");
  const auto questions = load_grpo_questions(fs::path(fixture) / "questions.jsonl");
  std::vector<CandidateSet> sets;
  for (const auto& q : questions) {
    auto it = docs.find(q.doc_id);
    if (it == docs.end()) throw Error("E_UNKNOWN_DOC", "question '" + q.id + "' names unknown document '" + q.doc_id + "'");
    sets.push_back(build_candidates(it->second, q, w, gated));
  }
  const GrpoLog log = run_grpo_demo(sets, opt);
  const std::string csv = grpo_log_csv(log, sets);
  if (!log_path.empty()) write_file(log_path, csv);

  const GrpoLogRow& last = log.rows.back();
  for (std::size_t q = 0; q < sets.size(); ++q) {
    const Candidate& best = sets[q].programs[sets[q].best];
    std::cout << "question=" << sets[q].question_id << " candidates=" << sets[q].programs.size()
              << " best=" << sets[q].best << " best_reward=" << format_g17(best.reward.total)
              << " p_best=" << format_g17(last.p_best[q]) << " program=\"" << best.trace.question_analysis << "\"\n";
  }
  std::cout << "iters=" << opt.iters << " max_abs_adv_mean=" << format_g17(log.max_abs_adv_mean)
            << " max_adv_std_error=" << format_g17(log.max_adv_std_error)
            << " degenerate_groups=" << log.degenerate_groups << '\n';
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"doccog - structured document reasoning: executor, rewards, layout supervision"};
  app.require_subcommand(1);

  std::string trace_path, doc_path, docs_dir, rollouts, gold, out, log, pages_dir, fixture;
  std::string weights_text = "0.2,0.2,0.2,0.5";
  std::string grid_text = "4x4";
  bool gated = false;
  std::size_t jobs = 1;
  double tau = 0.8;
  std::uint64_t seed = 1;
  double lambda_c = kDefaultLambdaCenter;
  double threshold = 1e-4;
  TowerFlags tf;
  TrainOptions train;
  GrpoOptions grpo;

  auto* validate = app.add_subcommand("validate", "Check a trace against the chain schema");
  validate->add_option("--trace", trace_path, "Trace JSON file")->required()->check(CLI::ExistingFile);
  validate->add_option("--doc", doc_path, "Document JSON; enables region checks")->check(CLI::ExistingFile);

  auto* exec = app.add_subcommand("exec", "Run a trace's chain on a document");
  exec->add_option("--doc", doc_path, "Document JSON file")->required()->check(CLI::ExistingFile);
  exec->add_option("--trace", trace_path, "Trace JSON file")->required()->check(CLI::ExistingFile);

  auto* score = app.add_subcommand("score", "Composite reward per rollout line");
  auto* filter = app.add_subcommand("filter", "Rejection-sampling decision per rollout line");
  for (auto* sub : {score, filter}) {
    sub->add_option("--docs", docs_dir, "Directory of document JSON files")->required()->check(CLI::ExistingDirectory);
    sub->add_option("--rollouts", rollouts, "Rollout records, JSON lines")->required()->check(CLI::ExistingFile);
    sub->add_option("--gold", gold, "Gold records, JSON lines, aligned with rollouts")
        ->required()
        ->check(CLI::ExistingFile);
    sub->add_option("--jobs", jobs, "Worker threads; output order is unaffected")->check(CLI::Range(1, 256));
  }
  score->add_flag("--gated", gated, "Floor the probability of steps that miss the gold region");
  score->add_option("--weights", weights_text, "Reward weights q,v,s,r")->check(CLI::Validator(weights_validator, "q,v,s,r"));
  auto* tau_opt = filter->add_option("--tau", tau, "F1 threshold, overriding each gold record's")->check(CLI::Range(0.0, 1.0));

  auto* supervise = app.add_subcommand("supervise", "Supervision map from a document's OCR lines");
  supervise->add_option("--doc", doc_path, "Document JSON file")->required()->check(CLI::ExistingFile);
  supervise->add_option("--grid", grid_text, "Grid HxW")->required()->check(CLI::Validator(grid_validator, "HxW"));
  supervise->add_option("--out", out, "Output file (stdout when omitted)");

  auto* tower_train = app.add_subcommand("tower-train", "Pretrain the layout tower on synthetic page embeddings");
  auto* grad_check = app.add_subcommand("grad-check", "Analytic vs finite-difference tower gradients");
  for (auto* sub : {tower_train, grad_check}) {
    sub->add_option("--grid", tf.grid, "Patch grid HxW")->check(CLI::Validator(grid_validator, "HxW"));
    sub->add_option("--d", tf.dim, "Embedding width")->check(CLI::Range(1, 4096));
    sub->add_option("--rank", tf.rank, "LoRA rank")->check(CLI::Range(1, 4096));
    sub->add_option("--hidden", tf.hidden, "Scoring MLP width")->check(CLI::Range(1, 4096));
    sub->add_option("--seed", seed, "Seed");
    sub->add_option("--lambda-c", lambda_c, "Centroid loss weight")->check(CLI::NonNegativeNumber);
  }
  tower_train->add_option("--pages", pages_dir, "Directory of page documents")->required()->check(CLI::ExistingDirectory);
  tower_train->add_option("--steps", train.steps, "Gradient steps");
  tower_train->add_option("--lr", train.lr, "Learning rate")->check(CLI::NonNegativeNumber);
  tower_train->add_flag("--train-positions", train.train_positions, "Also train the positional table");
  tower_train->add_option("--out", out, "Trained parameters, JSON");
  tower_train->add_option("--log", log, "Loss curve, CSV");
  grad_check->add_option("--threshold", threshold, "Largest acceptable relative error")->check(CLI::PositiveNumber);

  auto* grpo_demo = app.add_subcommand("grpo-demo", "Group-relative policy optimisation over candidate programs");
  grpo_demo->add_option("--fixture", fixture, "Directory with docs/ and questions.jsonl")
      ->required()
      ->check(CLI::ExistingDirectory);
  grpo_demo->add_option("--iters", grpo.iters, "Iterations");
  grpo_demo->add_option("--group", grpo.group, "Rollouts per group")->check(CLI::Range(2, 1 << 20));
  grpo_demo->add_option("--lr", grpo.lr, "Policy learning rate")->check(CLI::NonNegativeNumber);
  grpo_demo->add_option("--seed", grpo.seed, "Sampler seed");
  grpo_demo->add_flag("--gated", gated, "Gated region reward");
  grpo_demo->add_option("--weights", weights_text, "Reward weights q,v,s,r")
      ->check(CLI::Validator(weights_validator, "q,v,s,r"));
  grpo_demo->add_option("--log", log, "Training log, CSV");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  try {
    const RewardWeights weights = *parse_weights(weights_text);
    if (*validate) return cmd_validate(trace_path, doc_path);
    if (*exec) return cmd_exec(doc_path, trace_path);
    if (*score) return cmd_score(docs_dir, rollouts, gold, gated, weights, jobs);
    if (*filter) return cmd_filter(docs_dir, rollouts, gold, tau_opt->count() ? std::optional<double>(tau) : std::nullopt, jobs);
    if (*supervise) return cmd_supervise(doc_path, *parse_grid(grid_text), out);
    if (*tower_train) {
      train.lambda_c = lambda_c;
      return cmd_tower_train(pages_dir, tf, seed, train, out, log);
    }
    if (*grad_check) return cmd_grad_check(tf, seed, lambda_c, threshold);
    if (*grpo_demo) return cmd_grpo(fixture, grpo, weights, gated, log);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFailure;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFailure;
  }
  return kUsage;
}
