#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "doccog/document.hpp"
#include "doccog/error.hpp"
#include "doccog/numeric.hpp"

namespace doccog {

/// H x W grid of non-negative values, row-major. Row index u runs down the
/// page (y), column index v across it (x).
struct GridMap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> values;

  GridMap() = default;
  GridMap(std::size_t h, std::size_t w, double fill = 0.0) : height(h), width(w), values(h * w, fill) {}

  double& at(std::size_t u, std::size_t v) { return values[u * width + v]; }
  double at(std::size_t u, std::size_t v) const { return values[u * width + v]; }
  std::size_t size() const { return values.size(); }
  double sum() const { return exact_sum(values); }

  friend bool operator==(const GridMap&, const GridMap&) = default;
};

struct Centroid {
  double u = 0.0;
  double v = 0.0;
};

inline constexpr double kDefaultLambdaCenter = 0.2;
inline constexpr double kSmoothingEpsilon = 1e-8;

struct LossReport {
  double kl = 0.0;
  double center = 0.0;
  double total = 0.0;
  double lambda_c = kDefaultLambdaCenter;
};

inline void require_same_shape(const GridMap& a, const GridMap& b) {
  if (a.height != b.height || a.width != b.width || a.values.size() != b.values.size()) {
    throw Error("E_SHAPE_MISMATCH", "grid " + std::to_string(a.height) + "x" + std::to_string(a.width) + " vs " +
                                        std::to_string(b.height) + "x" + std::to_string(b.width));
  }
}

/// Adds the area of each normalized box falling in every cell (boxes
/// accumulate), then normalizes to a distribution. No boxes, or boxes with
/// zero total area, give the uniform map.
inline GridMap rasterize_boxes(const std::vector<Box>& norm_boxes, std::size_t grid_h, std::size_t grid_w) {
  if (grid_h == 0 || grid_w == 0) throw Error("E_GRID", "grid dimensions must be at least 1x1");
  GridMap map(grid_h, grid_w);
  const double cell_h = 1.0 / static_cast<double>(grid_h);
  const double cell_w = 1.0 / static_cast<double>(grid_w);
  for (const Box& b : norm_boxes) {
    // Only cells whose span touches the box can receive area.
    const auto u0 = static_cast<std::size_t>(std::clamp(std::floor(b.y1 * grid_h), 0.0, double(grid_h - 1)));
    const auto u1 = static_cast<std::size_t>(std::clamp(std::ceil(b.y2 * grid_h), 1.0, double(grid_h)));
    const auto v0 = static_cast<std::size_t>(std::clamp(std::floor(b.x1 * grid_w), 0.0, double(grid_w - 1)));
    const auto v1 = static_cast<std::size_t>(std::clamp(std::ceil(b.x2 * grid_w), 1.0, double(grid_w)));
    for (std::size_t u = u0; u < u1; ++u) {
      const double top = std::max(b.y1, u * cell_h);
      const double bottom = std::min(b.y2, (u + 1) * cell_h);
      if (bottom <= top) continue;
      for (std::size_t v = v0; v < v1; ++v) {
        const double left = std::max(b.x1, v * cell_w);
        const double right = std::min(b.x2, (v + 1) * cell_w);
        if (right <= left) continue;
        map.at(u, v) += (bottom - top) * (right - left);
      }
    }
  }
  const double total = map.sum();
  if (!(total > 0.0)) {
    std::fill(map.values.begin(), map.values.end(), 1.0 / static_cast<double>(map.size()));
    return map;
  }
  for (double& x : map.values) x /= total;
  return map;
}

/// Grid supervision map Y from OCR text-line boxes in page pixels.
inline GridMap build_supervision_map(const std::vector<OcrLine>& lines, double page_w, double page_h,
                                     std::size_t grid_h, std::size_t grid_w) {
  if (!(page_w > 0) || !(page_h > 0)) throw Error("E_GRID", "page dimensions must be positive");
  std::vector<Box> boxes;
  boxes.reserve(lines.size());
  for (const OcrLine& l : lines) {
    boxes.push_back({l.bbox.x1 / page_w, l.bbox.y1 / page_h, l.bbox.x2 / page_w, l.bbox.y2 / page_h});
  }
  return rasterize_boxes(boxes, grid_h, grid_w);
}

inline GridMap build_supervision_map(const Document& doc, std::size_t grid_h, std::size_t grid_w) {
  return build_supervision_map(doc.ocr_lines, doc.page_width, doc.page_height, grid_h, grid_w);
}

/// P <- (P + eps) / (1 + eps * H * W): strictly positive, still sums to 1.
inline GridMap smooth(const GridMap& p, double eps = kSmoothingEpsilon) {
  GridMap out = p;
  const double denom = 1.0 + eps * static_cast<double>(p.size());
  for (double& x : out.values) x = (x + eps) / denom;
  return out;
}

/// sum Y log(Y / P) with 0 log 0 = 0. P must be positive wherever Y is.
inline double kl_loss(const GridMap& y, const GridMap& p) {
  require_same_shape(y, p);
  std::vector<double> terms;
  terms.reserve(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double yi = y.values[i];
    if (yi == 0.0) continue;
    const double pi = p.values[i];
    if (!(pi > 0.0)) throw Error("E_NONFINITE", "prediction has no mass where the target does");
    terms.push_back(yi * std::log(yi / pi));
  }
  // Rounding can leave a tiny negative residue for near-identical maps.
  return std::max(0.0, exact_sum(terms));
}

/// Expected cell-centre coordinate, cell (u, v) centred at (u + 0.5, v + 0.5).
inline Centroid centroid(const GridMap& m) {
  std::vector<double> us, vs;
  us.reserve(m.size());
  vs.reserve(m.size());
  for (std::size_t u = 0; u < m.height; ++u) {
    for (std::size_t v = 0; v < m.width; ++v) {
      us.push_back(m.at(u, v) * (static_cast<double>(u) + 0.5));
      vs.push_back(m.at(u, v) * (static_cast<double>(v) + 0.5));
    }
  }
  return {exact_sum(us), exact_sum(vs)};
}

inline double center_loss(const GridMap& p, const GridMap& y) {
  require_same_shape(p, y);
  const Centroid cp = centroid(p);
  const Centroid cy = centroid(y);
  const double du = cp.u - cy.u;
  const double dv = cp.v - cy.v;
  return du * du + dv * dv;
}

inline LossReport total_loss(const GridMap& y, const GridMap& p, double lambda_c = kDefaultLambdaCenter) {
  LossReport r;
  r.kl = kl_loss(y, p);
  r.center = center_loss(p, y);
  r.lambda_c = lambda_c;
  r.total = r.kl + lambda_c * r.center;
  return r;
}

/// {"h": H, "w": W, "values": [row-major]} with values printed at 17
/// significant digits.
inline std::string grid_to_json_text(const GridMap& m) {
  std::string out = "{\"h\":" + std::to_string(m.height) + ",\"w\":" + std::to_string(m.width) + ",\"values\":[";
  for (std::size_t i = 0; i < m.values.size(); ++i) {
    if (i) out += ',';
    out += format_g17(m.values[i]);
  }
  out += "]}";
  return out;
}

inline GridMap grid_from_json(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("h") || !j.contains("w") || !j.contains("values")) {
    throw Error("E_GRID", "grid JSON needs h, w and values");
  }
  GridMap m(j.at("h").get<std::size_t>(), j.at("w").get<std::size_t>());
  const auto& vals = j.at("values");
  if (!vals.is_array() || vals.size() != m.size()) throw Error("E_SHAPE_MISMATCH", "values length differs from h*w");
  for (std::size_t i = 0; i < m.size(); ++i) m.values[i] = vals[i].get<double>();
  return m;
}

}  // namespace doccog
