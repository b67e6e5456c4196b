#ifndef VLOC_GRADCHECK_HPP_
#define VLOC_GRADCHECK_HPP_

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "vloc/tensor.hpp"

namespace vloc {

using ScalarFn = std::function<Tensor(const std::vector<Tensor>& inputs)>;

/// Compares reverse-mode gradients of f at `point` against central
/// differences. Returns max over all coordinates of
/// |analytic - numeric| / max(1, |analytic|).
/// Throws NumericalError if f is non-finite at a perturbed point.
double grad_check(const ScalarFn& f, const std::vector<Tensor>& point, double step = 1e-5);

inline constexpr double kGradcheckTolerance = 1e-4;

/// One registered op: draws a random point and the scalar function to check
/// there. Constants (targets, projection weights) live inside the function.
struct GradcheckCase {
  std::string name;
  std::function<std::pair<ScalarFn, std::vector<Tensor>>(std::mt19937_64& rng)> sample;
};

struct GradcheckRow {
  std::string name;
  std::size_t points = 0;
  double max_error = 0.0;
  bool passed = false;
};

/// Every primitive and every loss. With include_faulty an extra case with a
/// deliberately wrong backward pass is appended (negative control).
std::vector<GradcheckCase> gradcheck_registry(bool include_faulty = false);

/// Checks a case at `points` random points seeded from (seed, name).
GradcheckRow run_gradcheck_case(const GradcheckCase& c, std::uint64_t seed, std::size_t points = 20,
                                double step = 1e-5, double tolerance = kGradcheckTolerance);

}  // namespace vloc

#endif  // VLOC_GRADCHECK_HPP_
