#ifndef VLOC_OPTIM_HPP_
#define VLOC_OPTIM_HPP_

#include <cstddef>
#include <span>
#include <vector>

#include "vloc/tensor.hpp"

namespace vloc {

struct AdamOptions {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-10;
};

/// Adam with bias correction over a fixed list of leaves. Leaves that have
/// never received a gradient buffer are left untouched by step().
class Adam {
 public:
  explicit Adam(std::vector<Tensor> params, AdamOptions options = {});

  void step();
  void zero_grad();

  std::size_t step_count() const noexcept { return steps_; }
  const AdamOptions& options() const noexcept { return options_; }
  const std::vector<Tensor>& params() const noexcept { return params_; }
  std::span<const double> first_moment(std::size_t i) const { return m_.at(i); }
  std::span<const double> second_moment(std::size_t i) const { return v_.at(i); }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  AdamOptions options_;
  std::size_t steps_ = 0;
};

}  // namespace vloc

#endif  // VLOC_OPTIM_HPP_
