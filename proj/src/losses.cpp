#include "vloc/losses.hpp"

#include "vloc/error.hpp"

namespace vloc {

namespace {

void check_pose_batch(const PoseBatch& p, const char* what) {
  if (!p.x.defined() || !p.q.defined()) throw Error(std::string(what) + ": undefined pose batch");
  if (p.x.rank() != 2 || p.x.dim(1) != 3) throw ShapeError(std::string(what) + ": translation must be [N,3], got " + shape_string(p.x.shape()));
  if (p.q.rank() != 2 || p.q.dim(1) != 4) throw ShapeError(std::string(what) + ": rotation must be [N,4], got " + shape_string(p.q.shape()));
  if (p.x.dim(0) != p.q.dim(0)) throw ShapeError(std::string(what) + ": batch size mismatch");
}

// term * exp(-s) + s
Tensor weighted(const Tensor& term, const Tensor& s) { return add(mul(term, exp(scale(s, -1.0))), s); }

}  // namespace

std::string_view to_string(LossMode mode) {
  switch (mode) {
    case LossMode::Beta:
      return "beta";
    case LossMode::Sigma:
      return "sigma";
    case LossMode::Geo:
      return "geo";
    case LossMode::GeoBeta:
      return "geo-beta";
  }
  return "?";
}

LossMode parse_loss_mode(std::string_view name) {
  if (name == "beta") return LossMode::Beta;
  if (name == "sigma") return LossMode::Sigma;
  if (name == "geo") return LossMode::Geo;
  if (name == "geo-beta") return LossMode::GeoBeta;
  throw ConfigError("unknown loss mode '" + std::string(name) + "' (expected beta|sigma|geo|geo-beta)");
}

Tensor trans_loss(const Tensor& x_pred, const Tensor& x_gt) { return mean(row_norms(sub(x_gt, x_pred))); }

Tensor rot_loss(const Tensor& q_pred, const Tensor& q_gt) { return mean(row_norms(sub(q_gt, q_pred))); }

Tensor beta_loss(const PoseBatch& pred, const PoseBatch& gt, double beta) {
  if (!(beta > 0.0)) throw ConfigError("beta_loss: beta must be positive");
  check_pose_batch(pred, "beta_loss");
  check_pose_batch(gt, "beta_loss");
  return add(trans_loss(pred.x, gt.x), scale(rot_loss(pred.q, gt.q), beta));
}

Tensor sigma_loss(const PoseBatch& pred, const PoseBatch& gt, const ScaleParams& s) {
  check_pose_batch(pred, "sigma_loss");
  check_pose_batch(gt, "sigma_loss");
  return add(weighted(trans_loss(pred.x, gt.x), s.s_x), weighted(rot_loss(pred.q, gt.q), s.s_q));
}

PoseBatch odom_residuals(const PoseBatch& pred_t, const PoseBatch& prev) {
  check_pose_batch(pred_t, "odom_residuals");
  check_pose_batch(prev, "odom_residuals");
  const Tensor prev_x = prev.x.detach();
  const Tensor prev_q = prev.q.detach();
  return {sub(pred_t.x, prev_x), quat_mul(quat_conjugate(prev_q), pred_t.q)};
}

OdomTerms odom_loss_terms(const PoseBatch& residuals, const PoseBatch& gt_rel) {
  check_pose_batch(residuals, "odom_loss_terms");
  check_pose_batch(gt_rel, "odom_loss_terms");
  return {mean(row_norms(sub(gt_rel.x, residuals.x))), mean(row_norms(sub(gt_rel.q, residuals.q)))};
}

Tensor geometric_consistency_loss(const PoseBatch& pred_t, const PoseBatch& gt_t, const PoseBatch& prev,
                                  const PoseBatch& gt_rel, const ScaleParams& s) {
  return global_pose_loss(LossMode::Geo, pred_t, gt_t, prev, gt_rel, s, 1.0).total;
}

Tensor vo_loss(const PoseBatch& rel_pred, const PoseBatch& rel_gt, const ScaleParams& s_vo) {
  return sigma_loss(rel_pred, rel_gt, s_vo);
}

GlobalLossTerms global_pose_loss(LossMode mode, const PoseBatch& pred_t, const PoseBatch& gt_t,
                                 const PoseBatch& prev, const PoseBatch& gt_rel, const ScaleParams& s,
                                 double beta) {
  check_pose_batch(pred_t, "global_pose_loss");
  check_pose_batch(gt_t, "global_pose_loss");
  GlobalLossTerms terms;
  terms.l_x = trans_loss(pred_t.x, gt_t.x);
  terms.l_q = rot_loss(pred_t.q, gt_t.q);

  Tensor x_term = terms.l_x;
  Tensor q_term = terms.l_q;
  if (mode == LossMode::Geo || mode == LossMode::GeoBeta) {
    const OdomTerms odom = odom_loss_terms(odom_residuals(pred_t, prev), gt_rel);
    terms.l_x_odom = odom.l_x_odom;
    terms.l_q_odom = odom.l_q_odom;
    x_term = add(x_term, odom.l_x_odom);
    q_term = add(q_term, odom.l_q_odom);
  }

  switch (mode) {
    case LossMode::Beta:
    case LossMode::GeoBeta:
      if (!(beta > 0.0)) throw ConfigError("loss: beta must be positive");
      terms.total = add(x_term, scale(q_term, beta));
      break;
    case LossMode::Sigma:
    case LossMode::Geo:
      terms.total = add(weighted(x_term, s.s_x), weighted(q_term, s.s_q));
      break;
  }
  return terms;
}

}  // namespace vloc
