#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "doccog/error.hpp"
#include "doccog/rng.hpp"
#include "doccog/supervision.hpp"

namespace doccog {

// Layout tower: LoRA-adapted patch embeddings, a tanh scoring MLP over
// (h_i + pos_i), a softmax across all patches, and the attention-weighted
// sum of adapted patches as the layout token.
//
//   h_i   = v_i + B A v_i
//   s_i   = w2 . tanh(W1 (h_i + pos_i) + b1) + b2
//   alpha = softmax(s)                          (over i = 0..N-1)
//   L     = sum_i alpha_i h_i
//
// Patch i sits at grid cell (i / W, i % W).

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

struct TowerShape {
  std::size_t grid_h = 4;
  std::size_t grid_w = 4;
  std::size_t dim = 8;      // d
  std::size_t rank = 2;     // r
  std::size_t hidden = 8;   // m
  std::size_t lm_dim = 8;   // d_lm

  std::size_t patches() const { return grid_h * grid_w; }
};

struct TowerParams {
  Matrix lora_A;     // r x d
  Matrix lora_B;     // d x r
  Matrix pos_table;  // N x d
  Matrix score_w1;   // m x d
  Vector score_b1;   // m
  Vector score_w2;   // m (the 1 x m output row)
  double score_b2 = 0.0;
  Matrix proj;       // d_lm x d

  /// Every parameter, in a fixed order, for finite differences and updates.
  template <typename Fn>
  void for_each_entry(Fn&& fn) {
    for (Matrix* m : {&lora_A, &lora_B, &pos_table, &score_w1, &proj}) {
      for (Eigen::Index k = 0; k < m->size(); ++k) fn(m->data()[k]);
    }
    for (Vector* v : {&score_b1, &score_w2}) {
      for (Eigen::Index k = 0; k < v->size(); ++k) fn(v->data()[k]);
    }
    fn(score_b2);
  }
};

/// Gradients share the parameter layout.
using TowerGrads = TowerParams;

struct TowerOutput {
  Vector alpha;         // N, sums to 1
  Vector layout_token;  // d
  Vector projected;     // d_lm
  GridMap p_grid;       // alpha on the H x W grid
};

namespace detail {

inline void require_finite(const Matrix& m, const char* what) {
  if (!m.allFinite()) throw Error("E_NONFINITE", std::string(what) + " contains non-finite values");
}

inline void check_shapes(const Matrix& v, const TowerParams& p, std::size_t grid_h, std::size_t grid_w) {
  const auto n = static_cast<Eigen::Index>(grid_h * grid_w);
  const Eigen::Index d = v.cols();
  const Eigen::Index r = p.lora_A.rows();
  const Eigen::Index m = p.score_w1.rows();
  const bool ok = v.rows() == n && r >= 1 && m >= 1 && p.lora_A.cols() == d && p.lora_B.rows() == d &&
                  p.lora_B.cols() == r && p.pos_table.rows() == n && p.pos_table.cols() == d &&
                  p.score_w1.cols() == d && p.score_b1.size() == m && p.score_w2.size() == m && p.proj.cols() == d;
  if (!ok) throw Error("E_SHAPE_MISMATCH", "patch embeddings and tower parameters disagree in shape");
  require_finite(v, "patch embeddings");
  for (const Matrix* mm : {&p.lora_A, &p.lora_B, &p.pos_table, &p.score_w1, &p.proj}) require_finite(*mm, "tower parameters");
  if (!p.score_b1.allFinite() || !p.score_w2.allFinite() || !std::isfinite(p.score_b2)) {
    throw Error("E_NONFINITE", "tower parameters contain non-finite values");
  }
}

struct ForwardCache {
  Matrix adapted;   // H, N x d
  Matrix inputs;    // Z = H + pos, N x d
  Matrix hidden;    // tanh activations, N x m
  Vector scores;    // N
  Vector alpha;     // N
};

inline ForwardCache forward_cache(const Matrix& v, const TowerParams& p) {
  ForwardCache c;
  c.adapted = v + v * (p.lora_B * p.lora_A).transpose();
  c.inputs = c.adapted + p.pos_table;
  c.hidden = ((c.inputs * p.score_w1.transpose()).rowwise() + p.score_b1.transpose()).array().tanh().matrix();
  c.scores = (c.hidden * p.score_w2).array() + p.score_b2;
  const double top = c.scores.maxCoeff();
  c.alpha = (c.scores.array() - top).exp().matrix();
  c.alpha /= c.alpha.sum();
  return c;
}

inline GridMap to_grid(const Vector& alpha, std::size_t grid_h, std::size_t grid_w) {
  GridMap g(grid_h, grid_w);
  for (std::size_t i = 0; i < g.size(); ++i) g.values[i] = alpha[static_cast<Eigen::Index>(i)];
  return g;
}

}  // namespace detail

/// Row-major softmax of a score vector with max subtraction.
inline Vector softmax(const Vector& scores) {
  Vector e = (scores.array() - scores.maxCoeff()).exp().matrix();
  return e / e.sum();
}

inline TowerOutput tower_forward(const Matrix& v, const TowerParams& p, std::size_t grid_h, std::size_t grid_w) {
  detail::check_shapes(v, p, grid_h, grid_w);
  const auto c = detail::forward_cache(v, p);
  TowerOutput out;
  out.alpha = c.alpha;
  out.layout_token = c.adapted.transpose() * c.alpha;
  out.projected = p.proj * out.layout_token;
  out.p_grid = detail::to_grid(c.alpha, grid_h, grid_w);
  if (!out.alpha.allFinite() || !out.layout_token.allFinite()) {
    throw Error("E_NONFINITE", "tower forward pass produced non-finite values");
  }
  return out;
}

/// X = [proj L, T_1, ..., T_n]. Empty text is rejected.
inline std::vector<Vector> project_and_concat(const TowerOutput& out, const TowerParams& p,
                                              const std::vector<Vector>& text) {
  if (text.empty()) throw Error("E_SHAPE_MISMATCH", "text embedding sequence is empty");
  if (out.layout_token.size() != p.proj.cols()) throw Error("E_SHAPE_MISMATCH", "layout token width differs from projection");
  std::vector<Vector> seq;
  seq.reserve(text.size() + 1);
  seq.push_back(p.proj * out.layout_token);
  for (const Vector& t : text) {
    if (t.size() != p.proj.rows()) throw Error("E_SHAPE_MISMATCH", "text embedding width differs from d_lm");
    seq.push_back(t);
  }
  return seq;
}

struct TowerLoss {
  LossReport loss;
  TowerGrads grads;
};

inline TowerGrads zero_like(const TowerParams& p) {
  TowerGrads g;
  g.lora_A = Matrix::Zero(p.lora_A.rows(), p.lora_A.cols());
  g.lora_B = Matrix::Zero(p.lora_B.rows(), p.lora_B.cols());
  g.pos_table = Matrix::Zero(p.pos_table.rows(), p.pos_table.cols());
  g.score_w1 = Matrix::Zero(p.score_w1.rows(), p.score_w1.cols());
  g.score_b1 = Vector::Zero(p.score_b1.size());
  g.score_w2 = Vector::Zero(p.score_w2.size());
  g.score_b2 = 0.0;
  g.proj = Matrix::Zero(p.proj.rows(), p.proj.cols());
  return g;
}

/// L_total of the smoothed prediction against Y, and its gradient with
/// respect to every parameter (reverse mode). The projection does not feed
/// the loss, so its gradient is zero.
inline TowerLoss tower_loss_and_grads(const Matrix& v, const TowerParams& p, const GridMap& y,
                                      double lambda_c = kDefaultLambdaCenter, double eps = kSmoothingEpsilon) {
  detail::check_shapes(v, p, y.height, y.width);
  const auto c = detail::forward_cache(v, p);
  const std::size_t n = y.size();
  const GridMap pred = smooth(detail::to_grid(c.alpha, y.height, y.width), eps);

  TowerLoss result;
  result.loss = total_loss(y, pred, lambda_c);
  if (!std::isfinite(result.loss.total)) throw Error("E_NONFINITE", "tower loss is not finite");

  // dL/dP for the smoothed map.
  const Centroid cp = centroid(pred);
  const Centroid cy = centroid(y);
  Vector d_alpha(static_cast<Eigen::Index>(n));
  const double smooth_scale = 1.0 / (1.0 + eps * static_cast<double>(n));
  for (std::size_t i = 0; i < n; ++i) {
    const double ui = static_cast<double>(i / y.width) + 0.5;
    const double vi = static_cast<double>(i % y.width) + 0.5;
    double g = 2.0 * lambda_c * ((cp.u - cy.u) * ui + (cp.v - cy.v) * vi);
    if (y.values[i] != 0.0) g -= y.values[i] / pred.values[i];
    d_alpha[static_cast<Eigen::Index>(i)] = g * smooth_scale;
  }

  // Softmax, scoring MLP, positional table, LoRA.
  const Vector d_scores = c.alpha.cwiseProduct((d_alpha.array() - c.alpha.dot(d_alpha)).matrix());
  TowerGrads& g = result.grads;
  g = zero_like(p);
  g.score_w2 = c.hidden.transpose() * d_scores;
  g.score_b2 = d_scores.sum();
  const Matrix d_pre = ((d_scores * p.score_w2.transpose()).array() * (1.0 - c.hidden.array().square())).matrix();
  g.score_w1 = d_pre.transpose() * c.inputs;
  g.score_b1 = d_pre.colwise().sum().transpose();
  const Matrix d_inputs = d_pre * p.score_w1;
  g.pos_table = d_inputs;
  g.lora_B = d_inputs.transpose() * (v * p.lora_A.transpose());
  g.lora_A = p.lora_B.transpose() * d_inputs.transpose() * v;
  return result;
}

/// Loss only; the objective that the finite-difference oracle perturbs.
inline LossReport tower_loss(const Matrix& v, const TowerParams& p, const GridMap& y,
                             double lambda_c = kDefaultLambdaCenter, double eps = kSmoothingEpsilon) {
  const TowerOutput out = tower_forward(v, p, y.height, y.width);
  return total_loss(y, smooth(out.p_grid, eps), lambda_c);
}

/// 2-D sinusoidal table: the first half of each row encodes the grid row,
/// the second half the grid column, with frequencies 1 / 10000^(2k / half).
inline Matrix sinusoidal_positions(std::size_t grid_h, std::size_t grid_w, std::size_t dim) {
  Matrix pos = Matrix::Zero(static_cast<Eigen::Index>(grid_h * grid_w), static_cast<Eigen::Index>(dim));
  const std::size_t half = dim / 2;
  for (std::size_t u = 0; u < grid_h; ++u) {
    for (std::size_t v = 0; v < grid_w; ++v) {
      const auto row = static_cast<Eigen::Index>(u * grid_w + v);
      for (std::size_t k = 0; k < dim; ++k) {
        const bool first = k < half;
        const std::size_t j = first ? k : k - half;
        const std::size_t span = first ? half : dim - half;
        const double coord = first ? static_cast<double>(u) : static_cast<double>(v);
        const double freq = std::pow(10000.0, -static_cast<double>(2 * (j / 2)) / static_cast<double>(span));
        pos(row, static_cast<Eigen::Index>(k)) = (j % 2 == 0) ? std::sin(coord * freq) : std::cos(coord * freq);
      }
    }
  }
  return pos;
}

/// lora_B = 0 so the adapter starts as the identity; pos_table sinusoidal;
/// everything else uniform(-init_scale, init_scale) from the seed.
inline TowerParams init_tower_params(const TowerShape& s, std::uint64_t seed, double init_scale = 0.05) {
  SeededRng rng(seed);
  auto fill = [&](Eigen::Index rows, Eigen::Index cols) {
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-init_scale, init_scale);
    return m;
  };
  const auto d = static_cast<Eigen::Index>(s.dim);
  const auto r = static_cast<Eigen::Index>(s.rank);
  const auto m = static_cast<Eigen::Index>(s.hidden);
  TowerParams p;
  p.lora_A = fill(r, d);
  p.lora_B = Matrix::Zero(d, r);
  p.pos_table = sinusoidal_positions(s.grid_h, s.grid_w, s.dim);
  p.score_w1 = fill(m, d);
  p.score_b1 = fill(m, 1);
  p.score_w2 = fill(m, 1);
  p.score_b2 = rng.uniform(-init_scale, init_scale);
  p.proj = fill(static_cast<Eigen::Index>(s.lm_dim), d);
  return p;
}

struct TrainingPage {
  Matrix patches;  // N x d
  GridMap target;  // Y
};

struct TrainOptions {
  double lr = 0.05;
  std::size_t steps = 500;
  double lambda_c = kDefaultLambdaCenter;
  bool train_positions = false;
};

struct TrainResult {
  TowerParams params;
  std::vector<double> loss_curve;  // L_total before each step, then after the last
};

/// Full-batch gradient descent on the mean L_total over pages.
inline TrainResult train_tower(const std::vector<TrainingPage>& pages, TowerParams params, const TrainOptions& opt) {
  if (!(opt.lr >= 0.0) || !std::isfinite(opt.lr)) throw Error("E_CONFIG", "learning rate must be finite and >= 0");
  if (pages.empty()) throw Error("E_CONFIG", "training needs at least one page");
  TrainResult result;
  result.loss_curve.reserve(opt.steps + 1);
  const double inv_pages = 1.0 / static_cast<double>(pages.size());

  auto evaluate = [&](TowerGrads* grads) {
    std::vector<double> losses;
    if (grads) *grads = zero_like(params);
    for (const TrainingPage& page : pages) {
      TowerLoss tl = tower_loss_and_grads(page.patches, params, page.target, opt.lambda_c);
      losses.push_back(tl.loss.total);
      if (grads) {
        std::vector<double*> dst;
        grads->for_each_entry([&dst](double& x) { dst.push_back(&x); });
        std::size_t k = 0;
        tl.grads.for_each_entry([&](double& x) { *dst[k++] += x; });
      }
    }
    const double mean = exact_sum(losses) * inv_pages;
    if (!std::isfinite(mean)) throw Error("E_NONFINITE", "training diverged");
    return mean;
  };

  for (std::size_t step = 0; step < opt.steps; ++step) {
    TowerGrads grads;
    result.loss_curve.push_back(evaluate(&grads));
    if (!opt.train_positions) grads.pos_table.setZero();
    grads.proj.setZero();
    std::vector<double*> dst;
    params.for_each_entry([&dst](double& x) { dst.push_back(&x); });
    std::size_t k = 0;
    grads.for_each_entry([&](double& gx) { *dst[k] -= opt.lr * gx * inv_pages; ++k; });
  }
  result.loss_curve.push_back(evaluate(nullptr));
  result.params = std::move(params);
  return result;
}

/// Synthetic patch embeddings for a page: seeded noise in [-0.5, 0.5) with
/// channel 0 carrying the page's text density (N * Y_i), standing in for a
/// vision encoder that sees where the text is.
inline Matrix synthetic_patches(const GridMap& y, std::size_t dim, std::uint64_t seed) {
  SeededRng rng(seed);
  const auto n = static_cast<Eigen::Index>(y.size());
  Matrix v(n, static_cast<Eigen::Index>(dim));
  for (Eigen::Index i = 0; i < v.size(); ++i) v.data()[i] = rng.uniform(-0.5, 0.5);
  for (Eigen::Index i = 0; i < n; ++i) v(i, 0) += static_cast<double>(n) * y.values[static_cast<std::size_t>(i)];
  return v;
}

// -- gradient check ------------------------------------------------------------

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t entries = 0;
};

/// Relative error |a - n| / max(|a|, |n|, floor) between analytic and
/// central-difference gradients, maximised over every parameter entry.
inline GradCheckReport gradient_check(const Matrix& v, const TowerParams& p, const GridMap& y, double lambda_c,
                                      double step = 1e-5, double floor = 1e-6) {
  const TowerLoss analytic = tower_loss_and_grads(v, p, y, lambda_c);
  TowerParams probe = p;
  TowerGrads grads = analytic.grads;
  std::vector<double*> entries;
  probe.for_each_entry([&entries](double& x) { entries.push_back(&x); });
  std::vector<double> analytic_vals;
  grads.for_each_entry([&analytic_vals](double& x) { analytic_vals.push_back(x); });

  GradCheckReport report;
  for (std::size_t k = 0; k < entries.size(); ++k) {
    const double saved = *entries[k];
    *entries[k] = saved + step;
    const double up = tower_loss(v, probe, y, lambda_c).total;
    *entries[k] = saved - step;
    const double down = tower_loss(v, probe, y, lambda_c).total;
    *entries[k] = saved;
    const double numeric = (up - down) / (2.0 * step);
    const double a = analytic_vals[k];
    const double denom = std::max({std::fabs(a), std::fabs(numeric), floor});
    report.max_rel_error = std::max(report.max_rel_error, std::fabs(a - numeric) / denom);
    ++report.entries;
  }
  return report;
}

/// The gradient-check fixture for one seed: a few random text boxes
/// rasterized to the grid, synthetic patches, and parameters drawn at
/// scale 0.5 with lora_B filled too so every path carries gradient.
struct TowerFixture {
  Matrix patches;
  TowerParams params;
  GridMap target;
};

inline TowerFixture random_tower_fixture(const TowerShape& s, std::uint64_t seed) {
  SeededRng rng(seed);
  std::vector<Box> boxes;
  for (int i = 0; i < 5; ++i) {
    const double x = rng.uniform(0.0, 0.7);
    const double y = rng.uniform(0.0, 0.7);
    boxes.push_back({x, y, x + rng.uniform(0.05, 0.3), y + rng.uniform(0.02, 0.3)});
  }
  TowerFixture f;
  f.target = rasterize_boxes(boxes, s.grid_h, s.grid_w);
  f.params = init_tower_params(s, seed, 0.5);
  for (Eigen::Index i = 0; i < f.params.lora_B.size(); ++i) f.params.lora_B.data()[i] = rng.uniform(-0.5, 0.5);
  f.patches = synthetic_patches(f.target, s.dim, seed + 100);
  return f;
}

// -- serialization -------------------------------------------------------------

namespace detail {

inline nlohmann::json matrix_to_json(const Matrix& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace detail

inline nlohmann::json tower_params_to_json(const TowerParams& p) {
  return {{"lora_A", detail::matrix_to_json(p.lora_A)},
          {"lora_B", detail::matrix_to_json(p.lora_B)},
          {"pos_table", detail::matrix_to_json(p.pos_table)},
          {"score_w1", detail::matrix_to_json(p.score_w1)},
          {"score_b1", detail::matrix_to_json(p.score_b1)},
          {"score_w2", detail::matrix_to_json(p.score_w2)},
          {"score_b2", p.score_b2},
          {"proj", detail::matrix_to_json(p.proj)}};
}

}  // namespace doccog
