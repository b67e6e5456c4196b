#include <gtest/gtest.h>

#include <cmath>

#include "vloc/optim.hpp"

namespace vloc {
namespace {

struct ScalarAdam {
  double lr, b1, b2, eps;
  double m = 0.0, v = 0.0;
  int t = 0;
  double step(double theta, double g) {
    ++t;
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    const double mh = m / (1 - std::pow(b1, t));
    const double vh = v / (1 - std::pow(b2, t));
    return theta - lr * mh / (std::sqrt(vh) + eps);
  }
};

TEST(Adam, MatchesScalarOracleOnQuadratic) {
  AdamOptions o;
  o.learning_rate = 0.05;
  Tensor w({3}, {1.0, -2.0, 0.5}, true);
  Adam adam({w}, o);
  std::vector<ScalarAdam> ref(3, ScalarAdam{o.learning_rate, o.beta1, o.beta2, o.epsilon});
  std::vector<double> theta{1.0, -2.0, 0.5};
  for (int step = 0; step < 50; ++step) {
    adam.zero_grad();
    Tape tape;
    TapeScope scope(tape);
    tape.backward(sum(square(w)));
    for (std::size_t i = 0; i < 3; ++i) theta[i] = ref[i].step(theta[i], 2.0 * theta[i]);
    adam.step();
    for (std::size_t i = 0; i < 3; ++i) ASSERT_NEAR(w.at(i), theta[i], 1e-12) << "step " << step;
  }
  EXPECT_EQ(adam.step_count(), 50u);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  AdamOptions o;
  o.learning_rate = 1e-3;
  Tensor w({2}, {0.3, 0.3}, true);
  Adam adam({w}, o);
  w.mutable_grad()[0] = 5.0;
  w.mutable_grad()[1] = -0.01;
  adam.step();
  // Bias-corrected first step is lr * sign(g) up to epsilon.
  EXPECT_NEAR(w.at(0), 0.3 - 1e-3, 1e-12);
  EXPECT_NEAR(w.at(1), 0.3 + 1e-3, 1e-9);
}

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
  Tensor w({4}, {1, 2, 3, 4}, true);
  Adam adam({w}, {});
  w.zero_grad();
  w.mutable_grad();
  for (int i = 0; i < 5; ++i) adam.step();
  EXPECT_EQ(std::vector<double>(w.data().begin(), w.data().end()), (std::vector<double>{1, 2, 3, 4}));
}

TEST(Adam, LeavesWithoutGradientAreUntouched) {
  Tensor a({1}, {1.0}, true);
  Tensor b({1}, {2.0}, true);
  Adam adam({a, b}, {});
  a.mutable_grad()[0] = 1.0;
  adam.step();
  EXPECT_NE(a.item(), 1.0);
  EXPECT_EQ(b.item(), 2.0);
  EXPECT_EQ(adam.second_moment(1)[0], 0.0);
}

TEST(Adam, DisjointOptimizersOnlyTouchTheirOwnLeaves) {
  Tensor a({2}, {1.0, 1.0}, true);
  Tensor b({2}, {1.0, 1.0}, true);
  Adam first({a}, {});
  Adam second({b}, {});
  Tape tape;
  {
    TapeScope scope(tape);
    tape.backward(add(sum(a), sum(b)));
  }
  first.step();
  EXPECT_NE(a.at(0), 1.0);
  EXPECT_EQ(b.at(0), 1.0);
  EXPECT_EQ(b.at(1), 1.0);
  EXPECT_EQ(second.step_count(), 0u);
}

TEST(Adam, ZeroGradClearsBuffers) {
  Tensor a({2}, {1.0, 1.0}, true);
  Adam adam({a}, {});
  a.mutable_grad()[0] = 3.0;
  adam.zero_grad();
  for (double g : a.grad()) EXPECT_EQ(g, 0.0);
}

}  // namespace
}  // namespace vloc
