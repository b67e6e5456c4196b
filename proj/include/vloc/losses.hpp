#ifndef VLOC_LOSSES_HPP_
#define VLOC_LOSSES_HPP_

#include <string>
#include <string_view>

#include "vloc/tensor.hpp"

namespace vloc {

/// A batch of poses (or relative motions): x is [N,3], q is [N,4] in
/// (w,x,y,z) order.
struct PoseBatch {
  Tensor x;
  Tensor q;
};

/// Learnable log-variance-like weights of the translation and rotation terms.
/// Both are scalar tensors of shape [1].
struct ScaleParams {
  Tensor s_x;
  Tensor s_q;
};

enum class LossMode {
  Beta,     // L_x + beta * L_q
  Sigma,    // learnable weighting with s_x, s_q
  Geo,      // geometric consistency: sigma form over pose + odometry terms
  GeoBeta,  // geometric consistency terms weighted with a fixed beta
};

std::string_view to_string(LossMode mode);
LossMode parse_loss_mode(std::string_view name);

/// Batch mean of ||x_pred - x_gt||_2.
Tensor trans_loss(const Tensor& x_pred, const Tensor& x_gt);
/// Batch mean of ||q_gt - q_pred||_2 on R^4; q_pred is expected normalized.
Tensor rot_loss(const Tensor& q_pred, const Tensor& q_gt);

Tensor beta_loss(const PoseBatch& pred, const PoseBatch& gt, double beta);
Tensor sigma_loss(const PoseBatch& pred, const PoseBatch& gt, const ScaleParams& s);

/// R_x = x_t - x_prev, R_q = q_prev^-1 q_t. The previous pose enters as a
/// constant: no gradient flows into it.
PoseBatch odom_residuals(const PoseBatch& pred_t, const PoseBatch& prev);

struct OdomTerms {
  Tensor l_x_odom;
  Tensor l_q_odom;
};

OdomTerms odom_loss_terms(const PoseBatch& residuals, const PoseBatch& gt_rel);

/// Every constituent of a global-pose loss evaluation, plus the total.
struct GlobalLossTerms {
  Tensor total;
  Tensor l_x;
  Tensor l_q;
  Tensor l_x_odom;  // undefined unless the mode uses odometry terms
  Tensor l_q_odom;
};

/// (L_x + L_x_odom) exp(-s_x) + s_x + (L_q + L_q_odom) exp(-s_q) + s_q
Tensor geometric_consistency_loss(const PoseBatch& pred_t, const PoseBatch& gt_t, const PoseBatch& prev,
                                  const PoseBatch& gt_rel, const ScaleParams& s);

/// Sigma-form loss on relative quantities, with its own ScaleParams.
Tensor vo_loss(const PoseBatch& rel_pred, const PoseBatch& rel_gt, const ScaleParams& s_vo);

/// Dispatches on mode. prev and gt_rel are only read by the Geo modes.
GlobalLossTerms global_pose_loss(LossMode mode, const PoseBatch& pred_t, const PoseBatch& gt_t,
                                 const PoseBatch& prev, const PoseBatch& gt_rel, const ScaleParams& s,
                                 double beta);

}  // namespace vloc

#endif  // VLOC_LOSSES_HPP_
