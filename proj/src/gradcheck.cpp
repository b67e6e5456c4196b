#include "vloc/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "vloc/error.hpp"

namespace vloc {

namespace {

double evaluate(const ScalarFn& f, const std::vector<Tensor>& inputs) {
  const Tensor out = f(inputs);
  if (out.numel() != 1) throw ShapeError("grad_check: function must return a scalar");
  const double v = out.item();
  if (!std::isfinite(v)) throw NumericalError("grad_check: function is non-finite at a perturbed point");
  return v;
}

}  // namespace

double grad_check(const ScalarFn& f, const std::vector<Tensor>& point, double step) {
  if (!(step > 0.0)) throw Error("grad_check: step must be positive");

  std::vector<Tensor> leaves;
  leaves.reserve(point.size());
  for (const Tensor& p : point) leaves.push_back(Tensor(p.shape(), {p.data().begin(), p.data().end()}, true));

  {
    Tape tape;
    TapeScope scope(tape);
    const Tensor root = f(leaves);
    tape.backward(root);
  }

  // Perturbed evaluations run without a tape and on non-grad copies.
  std::vector<Tensor> probe;
  probe.reserve(point.size());
  for (const Tensor& p : point) probe.push_back(p.detach());

  double worst = 0.0;
  for (std::size_t i = 0; i < probe.size(); ++i) {
    auto values = probe[i].mutable_data();
    for (std::size_t j = 0; j < values.size(); ++j) {
      const double original = values[j];
      values[j] = original + step;
      const double up = evaluate(f, probe);
      values[j] = original - step;
      const double down = evaluate(f, probe);
      values[j] = original;

      const double numeric = (up - down) / (2.0 * step);
      const double analytic = leaves[i].has_grad() ? leaves[i].grad()[j] : 0.0;
      const double err = std::abs(analytic - numeric) / std::max(1.0, std::abs(analytic));
      worst = std::max(worst, err);
    }
  }
  return worst;
}

}  // namespace vloc
