#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <vector>

#include "doccog/io.hpp"
#include "doccog/tower.hpp"
#include "fixtures.hpp"

using namespace doccog;

namespace {

std::vector<double> flatten(TowerParams p) {
  std::vector<double> out;
  p.for_each_entry([&out](double& x) { out.push_back(x); });
  return out;
}

// The demo configuration: every page under data/pages, 4x4 grid, d = 8, seed 1.
std::vector<TrainingPage> demo_pages(const TowerShape& s, std::uint64_t seed) {
  std::vector<TrainingPage> pages;
  std::uint64_t k = 0;
  for (const auto& [id, doc] : load_documents_dir(fixtures::data_dir() / "pages")) {
    GridMap y = build_supervision_map(doc, s.grid_h, s.grid_w);
    Matrix v = synthetic_patches(y, s.dim, seed + k++);
    pages.push_back({std::move(v), std::move(y)});
  }
  return pages;
}

std::string curve_csv(const std::vector<double>& curve) {
  std::string out = "step,loss\n";
  for (std::size_t i = 0; i < curve.size(); ++i) out += std::to_string(i) + "," + format_g17(curve[i]) + "\n";
  return out;
}

}  // namespace

// -- forward -------------------------------------------------------------------

TEST(TowerForward, IdenticalPatchesWithoutPositionsAreUniform) {
  const TowerShape s{3, 3, 6, 2, 5, 4};
  TowerParams p = init_tower_params(s, 3, 0.5);
  p.pos_table.setZero();
  Matrix v(9, 6);
  for (Eigen::Index i = 0; i < 9; ++i) v.row(i) << 0.3, -0.1, 0.7, 0.2, 0.0, -0.4;
  const TowerOutput out = tower_forward(v, p, 3, 3);
  for (Eigen::Index i = 0; i < 9; ++i) EXPECT_DOUBLE_EQ(out.alpha[i], 1.0 / 9.0);
}

TEST(TowerForward, ScoreOffsetDoesNotMoveAttention) {
  const TowerFixture f = random_tower_fixture({4, 4, 8, 2, 8, 8}, 11);
  TowerParams shifted = f.params;
  shifted.score_b2 += 3.0;
  const TowerOutput a = tower_forward(f.patches, f.params, 4, 4);
  const TowerOutput b = tower_forward(f.patches, shifted, 4, 4);
  for (Eigen::Index i = 0; i < 16; ++i) EXPECT_NEAR(a.alpha[i], b.alpha[i], 1e-15);
}

TEST(TowerForward, MatchesStraightLineComputation) {
  // d = 4, N = 4 (2x2), r = 1, m = 3, written out with scalar loops.
  const TowerShape s{2, 2, 4, 1, 3, 2};
  TowerParams p = init_tower_params(s, 21, 0.5);
  SeededRng rng(22);
  for (Eigen::Index i = 0; i < p.lora_B.size(); ++i) p.lora_B.data()[i] = rng.uniform(-0.5, 0.5);
  Matrix v(4, 4);
  for (Eigen::Index i = 0; i < v.size(); ++i) v.data()[i] = rng.uniform(-1, 1);

  double h[4][4], score[4];
  for (int i = 0; i < 4; ++i) {
    double av = 0;
    for (int k = 0; k < 4; ++k) av += p.lora_A(0, k) * v(i, k);
    for (int k = 0; k < 4; ++k) h[i][k] = v(i, k) + p.lora_B(k, 0) * av;
    score[i] = p.score_b2;
    for (int j = 0; j < 3; ++j) {
      double pre = p.score_b1[j];
      for (int k = 0; k < 4; ++k) pre += p.score_w1(j, k) * (h[i][k] + p.pos_table(i, k));
      score[i] += p.score_w2[j] * std::tanh(pre);
    }
  }
  double z = 0;
  for (double sc : score) z += std::exp(sc);
  double token[4] = {0, 0, 0, 0};
  double alpha[4];
  for (int i = 0; i < 4; ++i) {
    alpha[i] = std::exp(score[i]) / z;
    for (int k = 0; k < 4; ++k) token[k] += alpha[i] * h[i][k];
  }

  const TowerOutput out = tower_forward(v, p, 2, 2);
  for (int i = 0; i < 4; ++i) {
    EXPECT_NEAR(out.alpha[i], alpha[i], 1e-14);
    EXPECT_NEAR(out.p_grid.at(i / 2, i % 2), alpha[i], 1e-14);
    EXPECT_NEAR(out.layout_token[i], token[i], 1e-14);
  }
  for (int row = 0; row < 2; ++row) {
    double projected = 0;
    for (int k = 0; k < 4; ++k) projected += p.proj(row, k) * token[k];
    EXPECT_NEAR(out.projected[row], projected, 1e-14);
  }
}

TEST(TowerForward, AttentionIsOnTheSimplex) {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const TowerFixture f = random_tower_fixture({3, 5, 6, 2, 4, 4}, seed);
    const TowerOutput out = tower_forward(f.patches, f.params, 3, 5);
    EXPECT_NEAR(out.alpha.sum(), 1.0, 1e-12);
    EXPECT_GE(out.alpha.minCoeff(), 0.0);
  }
}

TEST(TowerForward, PermutingPatchesPermutesAttention) {
  const TowerFixture f = random_tower_fixture({4, 4, 8, 2, 8, 8}, 5);
  std::vector<Eigen::Index> perm(16);
  std::iota(perm.begin(), perm.end(), 0);
  SeededRng rng(6);
  for (std::size_t i = perm.size() - 1; i > 0; --i) std::swap(perm[i], perm[rng.next_u64() % (i + 1)]);
  Matrix v = f.patches;
  TowerParams p = f.params;
  for (Eigen::Index i = 0; i < 16; ++i) {
    v.row(i) = f.patches.row(perm[i]);
    p.pos_table.row(i) = f.params.pos_table.row(perm[i]);
  }
  const TowerOutput a = tower_forward(f.patches, f.params, 4, 4);
  const TowerOutput b = tower_forward(v, p, 4, 4);
  for (Eigen::Index i = 0; i < 16; ++i) EXPECT_NEAR(b.alpha[i], a.alpha[perm[i]], 1e-14);
  EXPECT_LT((a.layout_token - b.layout_token).cwiseAbs().maxCoeff(), 1e-13);
}

TEST(TowerForward, ProjectAndConcatPutsLayoutTokenFirst) {
  const TowerFixture f = random_tower_fixture({2, 2, 4, 1, 3, 3}, 2);
  const TowerOutput out = tower_forward(f.patches, f.params, 2, 2);
  const std::vector<Vector> text = {Vector::Constant(3, 1.0), Vector::Constant(3, 2.0)};
  const auto seq = project_and_concat(out, f.params, text);
  ASSERT_EQ(seq.size(), 3u);
  EXPECT_EQ(seq[0], out.projected);
  EXPECT_EQ(seq[1], text[0]);
  EXPECT_EQ(seq[2], text[1]);
  EXPECT_THROW(project_and_concat(out, f.params, {}), Error);
  EXPECT_THROW(project_and_concat(out, f.params, {Vector::Zero(4)}), Error);
}

TEST(TowerForward, RejectsBadShapesAndNonFiniteInput) {
  const TowerFixture f = random_tower_fixture({2, 2, 4, 1, 3, 3}, 2);
  try {
    tower_forward(f.patches, f.params, 3, 3);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), "E_SHAPE_MISMATCH");
  }
  Matrix v = f.patches;
  v(1, 1) = std::nan("");
  try {
    tower_forward(v, f.params, 2, 2);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), "E_NONFINITE");
  }
}

TEST(Sinusoid, RowAndColumnHalves) {
  const Matrix pos = sinusoidal_positions(2, 3, 4);
  // Cell (0, 0): sin 0, cos 0 for both halves.
  EXPECT_EQ(pos(0, 0), 0.0);
  EXPECT_EQ(pos(0, 1), 1.0);
  // Cell (1, 2): row half encodes u = 1, column half v = 2, frequency 1 at k = 0.
  EXPECT_DOUBLE_EQ(pos(5, 0), std::sin(1.0));
  EXPECT_DOUBLE_EQ(pos(5, 2), std::sin(2.0));
  EXPECT_DOUBLE_EQ(pos(5, 3), std::cos(2.0));
}

// -- gradients -----------------------------------------------------------------

TEST(TowerGradients, MatchFiniteDifferencesOnFiveSeeds) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const TowerFixture f = random_tower_fixture({4, 4, 8, 2, 8, 8}, seed);
    const GradCheckReport r = gradient_check(f.patches, f.params, f.target, kDefaultLambdaCenter);
    EXPECT_LT(r.max_rel_error, 1e-4) << "seed " << seed;
    EXPECT_EQ(r.entries, flatten(f.params).size());
  }
}

TEST(TowerGradients, MatchOnANonSquareGrid) {
  const TowerFixture f = random_tower_fixture({3, 5, 6, 3, 4, 2}, 9);
  EXPECT_LT(gradient_check(f.patches, f.params, f.target, 1.0).max_rel_error, 1e-4);
}

TEST(TowerGradients, AreAffineInLambda) {
  const TowerFixture f = random_tower_fixture({4, 4, 8, 2, 8, 8}, 3);
  const auto g0 = flatten(tower_loss_and_grads(f.patches, f.params, f.target, 0.0).grads);
  const auto g1 = flatten(tower_loss_and_grads(f.patches, f.params, f.target, 1.0).grads);
  const auto gl = flatten(tower_loss_and_grads(f.patches, f.params, f.target, 0.3).grads);
  for (std::size_t k = 0; k < g0.size(); ++k) EXPECT_NEAR(gl[k], g0[k] + 0.3 * (g1[k] - g0[k]), 1e-12);

  const LossReport l0 = tower_loss(f.patches, f.params, f.target, 0.0);
  const LossReport l3 = tower_loss(f.patches, f.params, f.target, 0.3);
  EXPECT_EQ(l0.total, l0.kl);
  EXPECT_NEAR(l3.total, l0.kl + 0.3 * l3.center, 1e-15);
}

TEST(TowerGradients, VanishWhenTargetIsThePrediction) {
  const TowerFixture f = random_tower_fixture({4, 4, 8, 2, 8, 8}, 4);
  const GridMap y = smooth(tower_forward(f.patches, f.params, 4, 4).p_grid);
  const TowerLoss tl = tower_loss_and_grads(f.patches, f.params, y);
  EXPECT_NEAR(tl.loss.total, 0.0, 1e-15);
  for (double g : flatten(tl.grads)) EXPECT_NEAR(g, 0.0, 1e-12);
}

TEST(TowerGradients, ProjectionGetsNoGradient) {
  const TowerFixture f = random_tower_fixture({4, 4, 8, 2, 8, 8}, 1);
  EXPECT_EQ(tower_loss_and_grads(f.patches, f.params, f.target).grads.proj.cwiseAbs().maxCoeff(), 0.0);
}

// -- training ------------------------------------------------------------------

TEST(TowerTraining, ZeroLearningRateKeepsLossConstant) {
  const TowerShape s;
  const auto pages = demo_pages(s, 1);
  const TrainResult r = train_tower(pages, init_tower_params(s, 1), {0.0, 20});
  ASSERT_EQ(r.loss_curve.size(), 21u);
  for (double l : r.loss_curve) EXPECT_EQ(l, r.loss_curve.front());
  EXPECT_EQ(flatten(r.params), flatten(init_tower_params(s, 1)));
}

TEST(TowerTraining, DuplicatedPageTrainsLikeOnePage) {
  const TowerShape s;
  auto pages = demo_pages(s, 1);
  const TrainResult one = train_tower(pages, init_tower_params(s, 1), {0.05, 50});
  pages.push_back(pages.front());
  const TrainResult two = train_tower(pages, init_tower_params(s, 1), {0.05, 50});
  EXPECT_EQ(one.loss_curve, two.loss_curve);
}

TEST(TowerTraining, PositionsMoveOnlyWhenTrained) {
  const TowerShape s;
  const auto pages = demo_pages(s, 1);
  const TowerParams init = init_tower_params(s, 1);
  EXPECT_EQ(train_tower(pages, init, {0.05, 10}).params.pos_table, init.pos_table);
  EXPECT_NE(train_tower(pages, init, {0.05, 10, kDefaultLambdaCenter, true}).params.pos_table, init.pos_table);
}

TEST(TowerTraining, RejectsBadOptions) {
  const TowerShape s;
  EXPECT_THROW(train_tower({}, init_tower_params(s, 1), {}), Error);
  EXPECT_THROW(train_tower(demo_pages(s, 1), init_tower_params(s, 1), {-0.1, 5}), Error);
}

TEST(TowerTraining, DemoConvergesAndMatchesGoldenCurve) {
  const TowerShape s;
  const auto pages = demo_pages(s, 1);
  const TrainResult r = train_tower(pages, init_tower_params(s, 1), {});
  ASSERT_EQ(r.loss_curve.size(), 501u);
  EXPECT_LE(r.loss_curve.back(), 0.10 * r.loss_curve.front());
  for (std::size_t k = 10; k < r.loss_curve.size(); k += 10) EXPECT_LE(r.loss_curve[k], r.loss_curve[k - 10]) << k;
  for (const TrainingPage& page : pages) {
    const Centroid cp = centroid(tower_forward(page.patches, r.params, s.grid_h, s.grid_w).p_grid);
    const Centroid cy = centroid(page.target);
    EXPECT_LT(std::hypot(cp.u - cy.u, cp.v - cy.v), 0.5);
  }
  EXPECT_EQ(train_tower(pages, init_tower_params(s, 1), {}).loss_curve, r.loss_curve);
  EXPECT_EQ(curve_csv(r.loss_curve), read_file(fixtures::golden_dir() / "tower_curve.csv"));
}
