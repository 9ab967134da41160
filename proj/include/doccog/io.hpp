#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "doccog/document.hpp"
#include "doccog/error.hpp"
#include "doccog/grpo.hpp"
#include "doccog/reward.hpp"
#include "doccog/vsc.hpp"

namespace doccog {

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("E_IO", "cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::filesystem::path& path, const std::string& contents) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("E_IO", "cannot write '" + path.string() + "'");
  out << contents;
  if (!out) throw Error("E_IO", "write to '" + path.string() + "' failed");
}

inline Document load_document_file(const std::filesystem::path& path) {
  try {
    return load_document(read_file(path));
  } catch (const Error& e) {
    if (e.code() == "E_IO") throw;
    throw Error(e.code(), path.string() + ": " + e.what());
  }
}

/// Every *.json file in `dir`, sorted by file name, keyed by document id.
inline std::map<std::string, Document> load_documents_dir(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw Error("E_IO", "'" + dir.string() + "' is not a directory");
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".json") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  std::map<std::string, Document> docs;
  for (const auto& f : files) {
    Document d = load_document_file(f);
    const std::string id = d.id;
    if (!docs.emplace(id, std::move(d)).second) {
      throw Error("E_DOC_DUPLICATE", f.string() + ": document id '" + id + "' appears twice");
    }
  }
  return docs;
}

/// Questions file for the GRPO demo: JSON lines carrying the gold fields
/// plus "id", "doc_id", "question" and "gold_program" (a trace object).
inline std::vector<GrpoQuestion> load_grpo_questions(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("E_IO", "cannot open '" + path.string() + "'");
  std::vector<GrpoQuestion> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path.string() + ":" + std::to_string(lineno);
    const nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object()) throw Error("E_GOLD", where + ": not a JSON object");
    GrpoQuestion q;
    q.gold = gold_from_json(j);
    q.id = j.value("id", "q" + std::to_string(out.size()));
    q.doc_id = j.value("doc_id", "");
    q.question = j.value("question", "");
    if (!j.contains("gold_program")) throw Error("E_GOLD", where + ": missing gold_program");
    auto parsed = parse_trace_json(j.at("gold_program"));
    if (!parsed.ok()) throw Error("E_GOLD", where + ": gold_program: " + parsed.errors.front().code);
    q.gold_program = *parsed.trace;
    out.push_back(std::move(q));
  }
  return out;
}

}  // namespace doccog
