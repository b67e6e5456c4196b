#include <gtest/gtest.h>

#include <cmath>

#include "test_util.hpp"
#include "vloc/error.hpp"
#include "vloc/geometry.hpp"
#include "vloc/losses.hpp"

namespace vloc {
namespace {

using testing::random_unit_quat;

PoseBatch batch(std::vector<Vec3> xs, std::vector<Quat> qs) {
  std::vector<double> xv, qv;
  for (const Vec3& x : xs) xv.insert(xv.end(), x.begin(), x.end());
  for (const Quat& q : qs) qv.insert(qv.end(), {q.w, q.x, q.y, q.z});
  return {Tensor({xs.size(), 3}, xv), Tensor({qs.size(), 4}, qv)};
}

ScaleParams scales(double sx, double sq) { return {Tensor({1}, {sx}), Tensor({1}, {sq})}; }

PoseBatch random_batch(std::mt19937_64& rng, std::size_t n) {
  std::vector<Vec3> xs;
  std::vector<Quat> qs;
  for (std::size_t i = 0; i < n; ++i) {
    xs.push_back(testing::random_vec(rng));
    qs.push_back(random_unit_quat(rng));
  }
  return batch(xs, qs);
}

const Quat kId{1, 0, 0, 0};

TEST(TransRotLoss, Examples) {
  const Tensor a({1, 3}, {1, 0, 0});
  EXPECT_EQ(trans_loss(a, a).item(), 0.0);
  EXPECT_EQ(trans_loss(a, Tensor({1, 3}, {0, 0, 0})).item(), 1.0);
  const Tensor q({1, 4}, {1, 0, 0, 0});
  EXPECT_EQ(rot_loss(q, q).item(), 0.0);
}

TEST(TransRotLoss, IsBatchMeanOfUnsquaredNorms) {
  const Tensor pred({2, 3}, {3, 4, 0, 0, 0, 1});
  const Tensor gt = Tensor::zeros({2, 3});
  EXPECT_EQ(trans_loss(pred, gt).item(), 3.0);
}

TEST(TransRotLoss, StrictlyMonotoneInTranslationError) {
  const Tensor gt({1, 3}, {0.2, -0.1, 0.3});
  double prev = -1.0;
  for (double d = 0.0; d < 2.0; d += 0.1) {
    const double l = trans_loss(Tensor({1, 3}, {0.2 + d, -0.1, 0.3}), gt).item();
    EXPECT_GT(l, prev);
    prev = l;
  }
}

TEST(BetaLoss, Examples) {
  const PoseBatch p = batch({{0, 0, 0}}, {kId});
  EXPECT_EQ(beta_loss(p, p, 1.0).item(), 0.0);
  // L_x = 1, L_q = 2 (q difference of length 2), beta = 1 -> 3.
  const PoseBatch pred = batch({{1, 0, 0}}, {{-1, 0, 0, 0}});
  EXPECT_NEAR(beta_loss(pred, p, 1.0).item(), 3.0, 1e-15);
  // L_x = 0, L_q = 0.01, beta = 500 -> 5.
  const PoseBatch gt = batch({{0, 0, 0}}, {{1, 0, 0, 0}});
  const PoseBatch near = batch({{0, 0, 0}}, {{1, 0.01, 0, 0}});
  EXPECT_NEAR(beta_loss(near, gt, 500.0).item(), 5.0, 1e-12);
  EXPECT_THROW(beta_loss(p, p, 0.0), ConfigError);
}

TEST(SigmaLoss, Examples) {
  const PoseBatch p = batch({{0, 0, 0}}, {kId});
  EXPECT_EQ(sigma_loss(p, p, scales(-3, -4)).item(), -7.0);
  const PoseBatch off = batch({{1, 0, 0}}, {{0, 1, 0, 0}});
  // L_x = 1, L_q = sqrt(2).
  EXPECT_NEAR(sigma_loss(off, p, scales(0, 0)).item(), 1.0 + std::sqrt(2.0), 1e-15);
  const PoseBatch q_exact = batch({{1, 0, 0}}, {kId});
  EXPECT_EQ(sigma_loss(q_exact, p, scales(0, 0)).item(), 1.0);
}

TEST(SigmaLoss, GradientReachesScalesAndVanishesAtLogLoss) {
  // dL/ds_x = -L_x exp(-s_x) + 1 = 0 where s_x = ln L_x.
  const PoseBatch gt = batch({{0, 0, 0}}, {kId});
  for (double lx : {1.0, 0.37, 2.5}) {
    const PoseBatch pred = batch({{lx, 0, 0}}, {kId});
    ScaleParams s = scales(std::log(lx), -1.0);
    s.s_x.set_requires_grad(true);
    Tape tape;
    TapeScope scope(tape);
    tape.backward(sigma_loss(pred, gt, s));
    EXPECT_LT(std::abs(s.s_x.grad()[0]), 1e-8) << lx;
  }
  ScaleParams s = scales(0.0, 0.0);
  s.s_x.set_requires_grad(true);
  s.s_q.set_requires_grad(true);
  Tape tape;
  TapeScope scope(tape);
  tape.backward(sigma_loss(batch({{2, 0, 0}}, {kId}), gt, s));
  EXPECT_NEAR(s.s_x.grad()[0], -1.0, 1e-15);  // -2 e^0 + 1
  EXPECT_NEAR(s.s_q.grad()[0], 1.0, 1e-15);   // L_q = 0
}

TEST(OdomResiduals, Examples) {
  const PoseBatch a = batch({{1, 2, 3}}, {kId});
  const PoseBatch r = odom_residuals(a, a);
  EXPECT_EQ(r.x.at(0), 0.0);
  EXPECT_EQ(r.q.at(0), 1.0);
  const PoseBatch fwd = batch({{1, 2, 4}}, {kId});
  const PoseBatch rf = odom_residuals(fwd, a);
  EXPECT_EQ(rf.x.at(2), 1.0);
}

TEST(OdomResiduals, MatchGeometryRelativeMotion) {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 50; ++i) {
    const Pose t = testing::random_pose(rng);
    const Pose p = testing::random_pose(rng);
    const PoseBatch r = odom_residuals(batch({t.x}, {t.q}), batch({p.x}, {p.q}));
    const RelativeMotion m = relative_motion(t, p);
    for (int k = 0; k < 3; ++k) EXPECT_NEAR(r.x.at(k), m.x_rel[k], 1e-15);
    EXPECT_NEAR(r.q.at(0), m.q_rel.w, 1e-15);
    EXPECT_NEAR(r.q.at(3), m.q_rel.z, 1e-15);
  }
}

TEST(OdomResiduals, PreviousPoseReceivesNoGradient) {
  std::mt19937_64 rng(4);
  PoseBatch t = random_batch(rng, 2);
  PoseBatch p = random_batch(rng, 2);
  t.x.set_requires_grad(true);
  p.x.set_requires_grad(true);
  p.q.set_requires_grad(true);
  Tape tape;
  TapeScope scope(tape);
  const PoseBatch r = odom_residuals(t, p);
  tape.backward(add(sum(r.x), sum(r.q)));
  EXPECT_TRUE(t.x.has_grad());
  EXPECT_FALSE(p.x.has_grad());
  EXPECT_FALSE(p.q.has_grad());
}

TEST(OdomTerms, Examples) {
  const PoseBatch rel = batch({{0.1, 0.2, 0.3}}, {kId});
  const OdomTerms zero = odom_loss_terms(rel, rel);
  EXPECT_EQ(zero.l_x_odom.item(), 0.0);
  EXPECT_EQ(zero.l_q_odom.item(), 0.0);
  const PoseBatch off = batch({{0.4, 0.2, 0.7}}, {kId});
  EXPECT_NEAR(odom_loss_terms(off, rel).l_x_odom.item(), 0.5, 1e-15);
}

TEST(OdomTerms, MatchScalarHandFormula) {
  std::mt19937_64 rng(5);
  const PoseBatch res = random_batch(rng, 6);
  const PoseBatch gt = random_batch(rng, 6);
  const OdomTerms t = odom_loss_terms(res, gt);
  double lx = 0.0, lq = 0.0;
  for (std::size_t i = 0; i < 6; ++i) {
    double sx = 0.0, sq = 0.0;
    for (std::size_t k = 0; k < 3; ++k) sx += std::pow(gt.x.at(i * 3 + k) - res.x.at(i * 3 + k), 2);
    for (std::size_t k = 0; k < 4; ++k) sq += std::pow(gt.q.at(i * 4 + k) - res.q.at(i * 4 + k), 2);
    lx += std::sqrt(sx);
    lq += std::sqrt(sq);
  }
  EXPECT_NEAR(t.l_x_odom.item(), lx / 6, 1e-12);
  EXPECT_NEAR(t.l_q_odom.item(), lq / 6, 1e-12);
}

TEST(GeometricConsistency, PerfectPredictionIsSumOfScales) {
  std::mt19937_64 rng(6);
  const Pose prev = testing::random_pose(rng);
  const Pose cur = testing::random_pose(rng);
  const PoseBatch pt = batch({cur.x}, {cur.q});
  const PoseBatch pp = batch({prev.x}, {prev.q});
  // The residuals recompute the same floating point operations as the
  // groundtruth motion, so every term is exactly zero.
  const PoseBatch rel = odom_residuals(pt, pp);
  const double v = geometric_consistency_loss(pt, pt, pp, rel, scales(-2.5, -3.25)).item();
  EXPECT_EQ(v, -2.5 + -3.25);
}

TEST(GeometricConsistency, ExplicitFormula) {
  std::mt19937_64 rng(7);
  const PoseBatch pred = random_batch(rng, 3);
  const PoseBatch gt = random_batch(rng, 3);
  const PoseBatch prev = random_batch(rng, 3);
  const PoseBatch rel = random_batch(rng, 3);
  const double sx = -0.7, sq = -2.1;
  const double lx = trans_loss(pred.x, gt.x).item();
  const double lq = rot_loss(pred.q, gt.q).item();
  const OdomTerms o = odom_loss_terms(odom_residuals(pred, prev), rel);
  const double want = (lx + o.l_x_odom.item()) * std::exp(-sx) + sx + (lq + o.l_q_odom.item()) * std::exp(-sq) + sq;
  EXPECT_NEAR(geometric_consistency_loss(pred, gt, prev, rel, scales(sx, sq)).item(), want, 1e-12);
}

TEST(GeometricConsistency, ReducesToSigmaLossWithZeroOdometryTerms) {
  std::mt19937_64 rng(8);
  for (int i = 0; i < 100; ++i) {
    const PoseBatch pred = random_batch(rng, 4);
    const PoseBatch gt = random_batch(rng, 4);
    const PoseBatch prev = random_batch(rng, 4);
    const ScaleParams s = scales(std::uniform_real_distribution<double>(-3, 0)(rng), -3.5);
    const PoseBatch consistent = odom_residuals(pred, prev);
    const double geo = geometric_consistency_loss(pred, gt, prev, consistent, s).item();
    EXPECT_NEAR(geo, sigma_loss(pred, gt, s).item(), 1e-12);
  }
}

TEST(SigmaLoss, ReducesToBetaLossAtZeroScales) {
  std::mt19937_64 rng(9);
  for (int i = 0; i < 100; ++i) {
    const PoseBatch pred = random_batch(rng, 4);
    const PoseBatch gt = random_batch(rng, 4);
    EXPECT_NEAR(sigma_loss(pred, gt, scales(0, 0)).item(), beta_loss(pred, gt, 1.0).item(), 1e-12);
  }
}

TEST(VoLoss, IsSigmaLossOnRelativeQuantities) {
  std::mt19937_64 rng(10);
  for (int i = 0; i < 100; ++i) {
    const PoseBatch a = random_batch(rng, 3);
    const PoseBatch b = random_batch(rng, 3);
    const ScaleParams s = scales(-1.0 * i / 50.0, -3.0);
    EXPECT_NEAR(vo_loss(a, b, s).item(), sigma_loss(a, b, s).item(), 1e-12);
  }
  const PoseBatch p = batch({{0.1, 0, 0}}, {kId});
  EXPECT_EQ(vo_loss(p, p, scales(0.5, -3)).item(), -2.5);
}

TEST(GlobalPoseLoss, DispatchesOnMode) {
  std::mt19937_64 rng(11);
  const PoseBatch pred = random_batch(rng, 3);
  const PoseBatch gt = random_batch(rng, 3);
  const PoseBatch prev = random_batch(rng, 3);
  const PoseBatch rel = random_batch(rng, 3);
  const ScaleParams s = scales(-1, -3);
  const auto beta = global_pose_loss(LossMode::Beta, pred, gt, prev, rel, s, 2.0);
  EXPECT_EQ(beta.total.item(), beta_loss(pred, gt, 2.0).item());
  EXPECT_FALSE(beta.l_x_odom.defined());
  const auto sig = global_pose_loss(LossMode::Sigma, pred, gt, prev, rel, s, 1.0);
  EXPECT_EQ(sig.total.item(), sigma_loss(pred, gt, s).item());
  const auto geo = global_pose_loss(LossMode::Geo, pred, gt, prev, rel, s, 1.0);
  EXPECT_EQ(geo.total.item(), geometric_consistency_loss(pred, gt, prev, rel, s).item());
  const auto gb = global_pose_loss(LossMode::GeoBeta, pred, gt, prev, rel, s, 1.5);
  EXPECT_NEAR(gb.total.item(),
              gb.l_x.item() + gb.l_x_odom.item() + 1.5 * (gb.l_q.item() + gb.l_q_odom.item()), 1e-12);
}

TEST(GlobalPoseLoss, ShapeChecks) {
  const PoseBatch bad{Tensor::zeros({2, 2}), Tensor::zeros({2, 4})};
  const PoseBatch ok{Tensor::zeros({2, 3}), Tensor::zeros({2, 4})};
  EXPECT_THROW(beta_loss(bad, ok, 1.0), ShapeError);
}

TEST(LossMode, NamesRoundTrip) {
  for (LossMode m : {LossMode::Beta, LossMode::Sigma, LossMode::Geo, LossMode::GeoBeta}) {
    EXPECT_EQ(parse_loss_mode(to_string(m)), m);
  }
  EXPECT_THROW(parse_loss_mode("l1"), ConfigError);
}

TEST(Losses, PureFunctionsAreReproducible) {
  std::mt19937_64 rng(12);
  const PoseBatch pred = random_batch(rng, 5);
  const PoseBatch gt = random_batch(rng, 5);
  EXPECT_EQ(sigma_loss(pred, gt, scales(-1, -2)).item(), sigma_loss(pred, gt, scales(-1, -2)).item());
}

}  // namespace
}  // namespace vloc
