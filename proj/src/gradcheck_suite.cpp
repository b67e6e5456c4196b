#include <cmath>

#include "vloc/error.hpp"
#include "vloc/gradcheck.hpp"
#include "vloc/hash.hpp"
#include "vloc/losses.hpp"

namespace vloc {

namespace {

using Rng = std::mt19937_64;
using Sample = std::pair<ScalarFn, std::vector<Tensor>>;

Tensor normal(const Shape& shape, Rng& rng, double sd = 1.0) {
  std::normal_distribution<double> d(0.0, sd);
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = d(rng);
  return Tensor(shape, std::move(v));
}

// Entries with |x| >= 0.1, keeping kinks (relu, elu) out of the stencil.
Tensor away_from_zero(const Shape& shape, Rng& rng) {
  std::uniform_real_distribution<double> mag(0.1, 1.5);
  std::bernoulli_distribution sign(0.5);
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = sign(rng) ? mag(rng) : -mag(rng);
  return Tensor(shape, std::move(v));
}

Tensor uniform(const Shape& shape, Rng& rng, double lo, double hi) {
  std::uniform_real_distribution<double> d(lo, hi);
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = d(rng);
  return Tensor(shape, std::move(v));
}

Tensor unit_quats(std::size_t n, Rng& rng) {
  Tensor q = normal({n, 4}, rng);
  auto v = q.mutable_data();
  for (std::size_t r = 0; r < n; ++r) {
    double norm = 0.0;
    for (std::size_t c = 0; c < 4; ++c) norm += v[r * 4 + c] * v[r * 4 + c];
    norm = std::sqrt(norm);
    const double sign = v[r * 4] < 0.0 ? -1.0 : 1.0;
    for (std::size_t c = 0; c < 4; ++c) v[r * 4 + c] *= sign / norm;
  }
  return q;
}

// <out, w> with a fixed random w, so every output coordinate is exercised.
Tensor project(const Tensor& out, const Tensor& w) { return sum(mul(out, w)); }

GradcheckCase unary_case(std::string name, std::function<Tensor(const Tensor&)> op, Shape shape,
                         std::function<Tensor(const Shape&, Rng&)> draw) {
  return {std::move(name), [=](Rng& rng) -> Sample {
            Tensor x = draw(shape, rng);
            const Tensor probe = op(x.detach());
            const Tensor w = normal(probe.shape(), rng);
            return {[op, w](const std::vector<Tensor>& in) { return project(op(in[0]), w); }, {x}};
          }};
}

GradcheckCase binary_case(std::string name, std::function<Tensor(const Tensor&, const Tensor&)> op, Shape a,
                          Shape b, std::function<Tensor(const Shape&, Rng&)> draw) {
  return {std::move(name), [=](Rng& rng) -> Sample {
            Tensor x = draw(a, rng);
            Tensor y = draw(b, rng);
            const Tensor probe = op(x.detach(), y.detach());
            const Tensor w = normal(probe.shape(), rng);
            return {[op, w](const std::vector<Tensor>& in) { return project(op(in[0], in[1]), w); }, {x, y}};
          }};
}

Tensor draw_normal(const Shape& s, Rng& rng) { return normal(s, rng); }

// x^2 whose backward reports 3x instead of 2x.
Tensor faulty_square(const Tensor& a) {
  const auto x = a.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * x[i];
  Tensor result(a.shape(), std::move(out));
  if (Tape* tape = Tape::current(); tape != nullptr && a.requires_grad()) {
    tape->record("faulty_square", {a.node()}, result.node(), [an = a.node()](const detail::Node& o) {
      an->ensure_grad();
      for (std::size_t i = 0; i < o.grad.size(); ++i) an->grad[i] += o.grad[i] * 3.0 * an->value[i];
    });
  }
  return result;
}

constexpr std::size_t kBatch = 4;

struct LossFixture {
  PoseBatch gt;
  PoseBatch prev;
  PoseBatch gt_rel;
};

LossFixture loss_fixture(Rng& rng) {
  LossFixture f;
  f.gt = {normal({kBatch, 3}, rng), unit_quats(kBatch, rng)};
  f.prev = {normal({kBatch, 3}, rng), unit_quats(kBatch, rng)};
  f.gt_rel = {normal({kBatch, 3}, rng, 0.3), unit_quats(kBatch, rng)};
  return f;
}

// Raw network outputs; the quaternion head is normalized inside the loss
// functions below, as in the model.
std::vector<Tensor> raw_pose(Rng& rng) { return {normal({kBatch, 3}, rng), normal({kBatch, 4}, rng)}; }

PoseBatch pose_of(const std::vector<Tensor>& in) { return {in[0], normalize_rows(in[1])}; }

ScaleParams scales_of(const std::vector<Tensor>& in, std::size_t at) { return {in[at], in[at + 1]}; }

std::vector<Tensor> with_scales(std::vector<Tensor> point, Rng& rng) {
  point.push_back(uniform({1}, rng, -3.0, 1.0));
  point.push_back(uniform({1}, rng, -4.0, 0.0));
  return point;
}

GradcheckCase loss_case(std::string name, bool scales,
                        std::function<Tensor(const std::vector<Tensor>&, const LossFixture&, double)> loss) {
  return {std::move(name), [=](Rng& rng) -> Sample {
            const LossFixture fx = loss_fixture(rng);
            const double beta = std::uniform_real_distribution<double>(0.5, 2.0)(rng);
            std::vector<Tensor> point = raw_pose(rng);
            if (scales) point = with_scales(std::move(point), rng);
            return {[loss, fx, beta](const std::vector<Tensor>& in) { return loss(in, fx, beta); }, point};
          }};
}

}  // namespace

std::vector<GradcheckCase> gradcheck_registry(bool include_faulty) {
  std::vector<GradcheckCase> r;
  const Shape m{3, 4};

  r.push_back(binary_case("add", [](const Tensor& a, const Tensor& b) { return add(a, b); }, m, m, draw_normal));
  r.push_back(binary_case("sub", [](const Tensor& a, const Tensor& b) { return sub(a, b); }, m, m, draw_normal));
  r.push_back(binary_case("mul", [](const Tensor& a, const Tensor& b) { return mul(a, b); }, m, m, draw_normal));
  r.push_back(unary_case("scale", [](const Tensor& a) { return scale(a, -1.7); }, m, draw_normal));
  r.push_back(unary_case("add_scalar", [](const Tensor& a) { return add_scalar(a, 0.3); }, m, draw_normal));
  r.push_back(unary_case("square", [](const Tensor& a) { return square(a); }, m, draw_normal));
  r.push_back(unary_case("exp", [](const Tensor& a) { return exp(a); }, m, draw_normal));
  r.push_back(unary_case("sqrt", [](const Tensor& a) { return sqrt(a); }, m,
                         [](const Shape& s, Rng& rng) { return uniform(s, rng, 0.2, 3.0); }));
  r.push_back(unary_case("sum", [](const Tensor& a) { return sum(a); }, m, draw_normal));
  r.push_back(unary_case("mean", [](const Tensor& a) { return mean(a); }, m, draw_normal));
  r.push_back(unary_case("elu", [](const Tensor& a) { return elu(a); }, m, away_from_zero));
  r.push_back(unary_case("relu", [](const Tensor& a) { return relu(a); }, m, away_from_zero));
  r.push_back(binary_case("matmul", [](const Tensor& a, const Tensor& b) { return matmul(a, b); }, {3, 5}, {5, 2},
                          draw_normal));
  r.push_back(binary_case("add_bias", [](const Tensor& a, const Tensor& b) { return add_bias(a, b); }, m, {4},
                          draw_normal));
  r.push_back({"linear", [](Rng& rng) -> Sample {
                 std::vector<Tensor> p{normal({3, 5}, rng), normal({5, 2}, rng), normal({2}, rng)};
                 const Tensor w = normal({3, 2}, rng);
                 return {[w](const std::vector<Tensor>& in) { return project(linear(in[0], in[1], in[2]), w); }, p};
               }});
  auto conv_case = [&](std::string name, std::size_t k, Conv2dOptions opt) {
    r.push_back(binary_case(
        std::move(name), [opt](const Tensor& x, const Tensor& w) { return conv2d(x, w, opt); }, {2, 3, 5, 5},
        {4, 3, k, k}, draw_normal));
  };
  conv_case("conv2d_3x3_same", 3, {1, Padding::Same});
  conv_case("conv2d_3x3_stride2", 3, {2, Padding::Same});
  conv_case("conv2d_1x1", 1, {1, Padding::Valid});
  conv_case("conv2d_1x1_stride2", 1, {2, Padding::Valid});
  conv_case("conv2d_3x3_valid", 3, {1, Padding::Valid});
  r.push_back({"channel_affine", [](Rng& rng) -> Sample {
                 std::vector<Tensor> p{normal({2, 3, 3, 3}, rng), normal({3}, rng), normal({3}, rng)};
                 const Tensor w = normal({2, 3, 3, 3}, rng);
                 return {[w](const std::vector<Tensor>& in) {
                           return project(channel_affine(in[0], in[1], in[2]), w);
                         },
                         p};
               }});
  r.push_back(unary_case("global_avg_pool", [](const Tensor& a) { return global_avg_pool(a); }, {2, 3, 4, 4},
                         draw_normal));
  r.push_back(binary_case("concat_channels_rank4",
                          [](const Tensor& a, const Tensor& b) { return concat_channels(a, b); }, {2, 3, 2, 2},
                          {2, 2, 2, 2}, draw_normal));
  r.push_back(binary_case("concat_channels_rank2",
                          [](const Tensor& a, const Tensor& b) { return concat_channels(a, b); }, {3, 2}, {3, 4},
                          draw_normal));
  r.push_back(unary_case("reshape", [](const Tensor& a) { return reshape(a, {2, 6}); }, m, draw_normal));
  r.push_back(unary_case("l2_norm", [](const Tensor& a) { return l2_norm(a); }, m, draw_normal));
  r.push_back(unary_case("row_norms", [](const Tensor& a) { return row_norms(a); }, m, draw_normal));
  r.push_back(unary_case("normalize_rows", [](const Tensor& a) { return normalize_rows(a); }, m, draw_normal));
  r.push_back(binary_case("quat_mul", [](const Tensor& a, const Tensor& b) { return quat_mul(a, b); }, {3, 4},
                          {3, 4}, draw_normal));
  r.push_back(unary_case("quat_conjugate", [](const Tensor& a) { return quat_conjugate(a); }, {3, 4}, draw_normal));
  r.push_back({"dropout", [](Rng& rng) -> Sample {
                 const Tensor x = normal({4, 6}, rng);
                 const Tensor w = normal({4, 6}, rng);
                 const std::uint64_t mask_seed = rng();
                 return {[w, mask_seed](const std::vector<Tensor>& in) {
                           Rng mask(mask_seed);
                           return project(dropout(in[0], 0.8, true, mask), w);
                         },
                         {x}};
               }});

  r.push_back(loss_case("loss_translation", false, [](const std::vector<Tensor>& in, const LossFixture& f, double) {
    return trans_loss(in[0], f.gt.x);
  }));
  r.push_back(loss_case("loss_rotation", false, [](const std::vector<Tensor>& in, const LossFixture& f, double) {
    return rot_loss(normalize_rows(in[1]), f.gt.q);
  }));
  r.push_back(loss_case("loss_beta", false, [](const std::vector<Tensor>& in, const LossFixture& f, double beta) {
    return beta_loss(pose_of(in), f.gt, beta);
  }));
  r.push_back(loss_case("loss_sigma", true, [](const std::vector<Tensor>& in, const LossFixture& f, double) {
    return sigma_loss(pose_of(in), f.gt, scales_of(in, 2));
  }));
  r.push_back({"odom_residuals", [](Rng& rng) -> Sample {
                 const LossFixture fx = loss_fixture(rng);
                 const Tensor wx = normal({kBatch, 3}, rng);
                 const Tensor wq = normal({kBatch, 4}, rng);
                 return {[fx, wx, wq](const std::vector<Tensor>& in) {
                           const PoseBatch res = odom_residuals(pose_of(in), fx.prev);
                           return add(project(res.x, wx), project(res.q, wq));
                         },
                         raw_pose(rng)};
               }});
  r.push_back(loss_case("loss_odom_translation", false,
                        [](const std::vector<Tensor>& in, const LossFixture& f, double) {
                          return odom_loss_terms(odom_residuals(pose_of(in), f.prev), f.gt_rel).l_x_odom;
                        }));
  r.push_back(loss_case("loss_odom_rotation", false,
                        [](const std::vector<Tensor>& in, const LossFixture& f, double) {
                          return odom_loss_terms(odom_residuals(pose_of(in), f.prev), f.gt_rel).l_q_odom;
                        }));
  r.push_back(loss_case("loss_geometric_consistency", true,
                        [](const std::vector<Tensor>& in, const LossFixture& f, double) {
                          return geometric_consistency_loss(pose_of(in), f.gt, f.prev, f.gt_rel, scales_of(in, 2));
                        }));
  r.push_back(loss_case("loss_geometric_consistency_beta", false,
                        [](const std::vector<Tensor>& in, const LossFixture& f, double beta) {
                          return global_pose_loss(LossMode::GeoBeta, pose_of(in), f.gt, f.prev, f.gt_rel, {}, beta)
                              .total;
                        }));
  r.push_back(loss_case("loss_vo", true, [](const std::vector<Tensor>& in, const LossFixture& f, double) {
    return vo_loss(pose_of(in), f.gt_rel, scales_of(in, 2));
  }));

  if (include_faulty) {
    r.push_back(unary_case("faulty_square", [](const Tensor& a) { return faulty_square(a); }, m, draw_normal));
  }
  return r;
}

GradcheckRow run_gradcheck_case(const GradcheckCase& c, std::uint64_t seed, std::size_t points, double step,
                                double tolerance) {
  GradcheckRow row;
  row.name = c.name;
  Rng rng(splitmix64(seed ^ fnv1a64(c.name)));
  for (std::size_t i = 0; i < points; ++i) {
    const auto [f, point] = c.sample(rng);
    row.max_error = std::max(row.max_error, grad_check(f, point, step));
    ++row.points;
  }
  row.passed = row.max_error < tolerance;
  return row;
}

}  // namespace vloc
