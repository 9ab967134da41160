#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <iterator>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "doccog/error.hpp"

namespace doccog {

using json = nlohmann::json;

enum class RegionType {
  header,
  footer,
  title,
  paragraph,
  table,
  cell,
  list,
  figure,
  caption,
  key_value,
};

inline constexpr std::array<RegionType, 10> kAllRegionTypes = {
    RegionType::header, RegionType::footer, RegionType::title,   RegionType::paragraph,
    RegionType::table,  RegionType::cell,   RegionType::list,    RegionType::figure,
    RegionType::caption, RegionType::key_value,
};

inline std::string_view to_string(RegionType t) {
  switch (t) {
    case RegionType::header: return "header";
    case RegionType::footer: return "footer";
    case RegionType::title: return "title";
    case RegionType::paragraph: return "paragraph";
    case RegionType::table: return "table";
    case RegionType::cell: return "cell";
    case RegionType::list: return "list";
    case RegionType::figure: return "figure";
    case RegionType::caption: return "caption";
    case RegionType::key_value: return "key_value";
  }
  return "";
}

/// Exact, case-sensitive lookup. Unknown labels yield nullopt.
inline std::optional<RegionType> region_type_from_string(std::string_view label) {
  for (RegionType t : kAllRegionTypes) {
    if (to_string(t) == label) return t;
  }
  return std::nullopt;
}

/// Pixel box (x1, y1, x2, y2); x grows rightwards, y downwards.
struct Box {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;
  friend bool operator==(const Box&, const Box&) = default;
};

struct Cell {
  std::size_t row = 0;
  std::size_t col = 0;
  std::string text;
  std::optional<std::string> row_key;
  std::optional<std::string> col_key;
  friend bool operator==(const Cell&, const Cell&) = default;
};

struct Region {
  std::string id;
  RegionType type = RegionType::paragraph;
  Box bbox;        // pixels, as read
  Box norm_bbox;   // bbox / page size, in [0, 1]
  std::string text;
  std::optional<std::string> key;
  std::optional<std::vector<Cell>> cells;
  friend bool operator==(const Region&, const Region&) = default;
};

struct OcrLine {
  Box bbox;
  Box norm_bbox;
  std::string text;
  friend bool operator==(const OcrLine&, const OcrLine&) = default;
};

// Immutable once loaded; shared freely between readers.
struct Document {
  std::string id;
  double page_width = 0;
  double page_height = 0;
  std::vector<Region> regions;
  std::vector<OcrLine> ocr_lines;

  const Region* find_region(std::string_view region_id) const {
    for (const auto& r : regions) {
      if (r.id == region_id) return &r;
    }
    return nullptr;
  }

  friend bool operator==(const Document&, const Document&) = default;
};

/// Regions of type `t` in document order.
inline std::vector<Region> regions_of_type(const Document& doc, RegionType t) {
  std::vector<Region> out;
  std::copy_if(doc.regions.begin(), doc.regions.end(), std::back_inserter(out),
               [t](const Region& r) { return r.type == t; });
  return out;
}

/// Cells in row-major order.
inline std::vector<Cell> cells_row_major(const std::vector<Cell>& cells) {
  std::vector<Cell> sorted = cells;
  std::stable_sort(sorted.begin(), sorted.end(), [](const Cell& a, const Cell& b) {
    return a.row != b.row ? a.row < b.row : a.col < b.col;
  });
  return sorted;
}

namespace detail {

class DocReader {
 public:
  [[noreturn]] static void fail(const std::string& code, const std::string& path,
                                const std::string& what) {
    throw Error(code, path + ": " + what);
  }

  static const json& require(const json& obj, const char* field, const std::string& path) {
    auto it = obj.find(field);
    if (it == obj.end()) fail("E_DOC_MISSING_FIELD", path + "." + field, "required field is missing");
    return *it;
  }

  static std::string read_string(const json& v, const std::string& path) {
    if (!v.is_string()) fail("E_DOC_TYPE", path, "expected a string");
    return v.get<std::string>();
  }

  static double read_number(const json& v, const std::string& path) {
    if (!v.is_number()) fail("E_DOC_TYPE", path, "expected a number");
    return v.get<double>();
  }

  static std::size_t read_index(const json& v, const std::string& path) {
    if (!v.is_number_integer() || v.get<long long>() < 0) {
      fail("E_DOC_TYPE", path, "expected a non-negative integer");
    }
    return v.get<std::size_t>();
  }

  static std::optional<std::string> read_opt_key(const json& obj, const char* field,
                                                 const std::string& path) {
    auto it = obj.find(field);
    if (it == obj.end() || it->is_null()) return std::nullopt;
    std::string s = read_string(*it, path + "." + field);
    if (s.empty()) fail("E_DOC_INVALID", path + "." + field, "must be non-empty when present");
    return s;
  }

  static Box read_box(const json& v, const std::string& path) {
    if (!v.is_array() || v.size() != 4) fail("E_DOC_TYPE", path, "expected [x1, y1, x2, y2]");
    Box b{read_number(v[0], path + "[0]"), read_number(v[1], path + "[1]"),
          read_number(v[2], path + "[2]"), read_number(v[3], path + "[3]")};
    return b;
  }

  static void check_box(const Box& b, double w, double h, const std::string& path,
                        const std::string& owner) {
    const bool ok = 0 <= b.x1 && b.x1 < b.x2 && b.x2 <= w && 0 <= b.y1 && b.y1 < b.y2 && b.y2 <= h;
    if (!ok) fail("E_DOC_BOX", path, "box of " + owner + " is degenerate or outside the page");
  }

  static Box normalize(const Box& b, double w, double h) {
    return Box{b.x1 / w, b.y1 / h, b.x2 / w, b.y2 / h};
  }
};

}  // namespace detail

/// Builds a Document from its JSON form. Throws Error with code
/// E_DOC_PARSE, E_DOC_MISSING_FIELD, E_DOC_TYPE, E_DOC_INVALID, E_DOC_BOX or
/// E_DOC_DUPLICATE; the message starts with the offending field path.
inline Document document_from_json(const json& j) {
  using R = detail::DocReader;
  if (!j.is_object()) R::fail("E_DOC_TYPE", "$", "document must be a JSON object");

  Document doc;
  doc.id = R::read_string(R::require(j, "id", "$"), "$.id");
  const json& page = R::require(j, "page", "$");
  if (!page.is_object()) R::fail("E_DOC_TYPE", "$.page", "expected an object");
  doc.page_width = R::read_number(R::require(page, "w", "$.page"), "$.page.w");
  doc.page_height = R::read_number(R::require(page, "h", "$.page"), "$.page.h");
  if (!(doc.page_width > 0) || !(doc.page_height > 0)) {
    R::fail("E_DOC_INVALID", "$.page", "page dimensions must be positive");
  }
  const double w = doc.page_width;
  const double h = doc.page_height;

  const json& regions = R::require(j, "regions", "$");
  if (!regions.is_array()) R::fail("E_DOC_TYPE", "$.regions", "expected an array");
  std::set<std::string> seen_ids;
  for (std::size_t i = 0; i < regions.size(); ++i) {
    const std::string path = "$.regions[" + std::to_string(i) + "]";
    const json& rj = regions[i];
    if (!rj.is_object()) R::fail("E_DOC_TYPE", path, "expected an object");

    Region r;
    r.id = R::read_string(R::require(rj, "id", path), path + ".id");
    if (r.id.empty()) R::fail("E_DOC_INVALID", path + ".id", "region id must be non-empty");
    if (!seen_ids.insert(r.id).second) {
      R::fail("E_DOC_DUPLICATE", path + ".id", "duplicate region id '" + r.id + "'");
    }
    const std::string label = R::read_string(R::require(rj, "type", path), path + ".type");
    auto type = region_type_from_string(label);
    if (!type) R::fail("E_DOC_INVALID", path + ".type", "unknown region type '" + label + "'");
    r.type = *type;
    r.bbox = R::read_box(R::require(rj, "bbox", path), path + ".bbox");
    R::check_box(r.bbox, w, h, path + ".bbox", "region '" + r.id + "'");
    r.norm_bbox = R::normalize(r.bbox, w, h);
    r.key = R::read_opt_key(rj, "key", path);

    if (auto it = rj.find("cells"); it != rj.end() && !it->is_null()) {
      if (r.type != RegionType::table) {
        R::fail("E_DOC_INVALID", path + ".cells", "cells are only allowed on table regions");
      }
      if (!it->is_array()) R::fail("E_DOC_TYPE", path + ".cells", "expected an array");
      std::vector<Cell> cells;
      std::set<std::pair<std::size_t, std::size_t>> positions;
      for (std::size_t k = 0; k < it->size(); ++k) {
        const std::string cpath = path + ".cells[" + std::to_string(k) + "]";
        const json& cj = (*it)[k];
        if (!cj.is_object()) R::fail("E_DOC_TYPE", cpath, "expected an object");
        Cell c;
        c.row = R::read_index(R::require(cj, "row", cpath), cpath + ".row");
        c.col = R::read_index(R::require(cj, "col", cpath), cpath + ".col");
        c.text = R::read_string(R::require(cj, "text", cpath), cpath + ".text");
        c.row_key = R::read_opt_key(cj, "row_key", cpath);
        c.col_key = R::read_opt_key(cj, "col_key", cpath);
        if (!positions.emplace(c.row, c.col).second) {
          R::fail("E_DOC_DUPLICATE", cpath, "duplicate cell position in region '" + r.id + "'");
        }
        cells.push_back(std::move(c));
      }
      r.cells = std::move(cells);
    }

    if (auto it = rj.find("text"); it != rj.end() && !it->is_null()) {
      r.text = R::read_string(*it, path + ".text");
    } else if (r.cells) {
      std::string joined;
      for (const Cell& c : cells_row_major(*r.cells)) {
        if (c.text.empty()) continue;
        if (!joined.empty()) joined += ' ';
        joined += c.text;
      }
      r.text = std::move(joined);
    }
    doc.regions.push_back(std::move(r));
  }

  const json& lines = R::require(j, "ocr_lines", "$");
  if (!lines.is_array()) R::fail("E_DOC_TYPE", "$.ocr_lines", "expected an array");
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const std::string path = "$.ocr_lines[" + std::to_string(i) + "]";
    const json& lj = lines[i];
    if (!lj.is_object()) R::fail("E_DOC_TYPE", path, "expected an object");
    OcrLine line;
    line.bbox = R::read_box(R::require(lj, "bbox", path), path + ".bbox");
    R::check_box(line.bbox, w, h, path + ".bbox", "ocr line " + std::to_string(i));
    line.norm_bbox = R::normalize(line.bbox, w, h);
    if (auto it = lj.find("text"); it != lj.end() && !it->is_null()) {
      line.text = R::read_string(*it, path + ".text");
    }
    doc.ocr_lines.push_back(std::move(line));
  }
  return doc;
}

inline Document load_document(std::string_view bytes) {
  json j = json::parse(bytes, nullptr, /*allow_exceptions=*/false);
  if (j.is_discarded()) throw Error("E_DOC_PARSE", "$: input is not valid JSON");
  return document_from_json(j);
}

inline json document_to_json(const Document& doc) {
  auto box = [](const Box& b) { return json::array({b.x1, b.y1, b.x2, b.y2}); };
  json regions = json::array();
  for (const Region& r : doc.regions) {
    json rj = {{"id", r.id}, {"type", std::string(to_string(r.type))}, {"bbox", box(r.bbox)},
               {"text", r.text}};
    if (r.key) rj["key"] = *r.key;
    if (r.cells) {
      json cells = json::array();
      for (const Cell& c : *r.cells) {
        json cj = {{"row", c.row}, {"col", c.col}, {"text", c.text}};
        if (c.row_key) cj["row_key"] = *c.row_key;
        if (c.col_key) cj["col_key"] = *c.col_key;
        cells.push_back(std::move(cj));
      }
      rj["cells"] = std::move(cells);
    }
    regions.push_back(std::move(rj));
  }
  json lines = json::array();
  for (const OcrLine& l : doc.ocr_lines) {
    lines.push_back({{"bbox", box(l.bbox)}, {"text", l.text}});
  }
  return {{"id", doc.id},
          {"page", {{"w", doc.page_width}, {"h", doc.page_height}}},
          {"regions", std::move(regions)},
          {"ocr_lines", std::move(lines)}};
}

inline std::string serialize_document(const Document& doc) { return document_to_json(doc).dump(); }

}  // namespace doccog
