#include "isac/nn.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <limits>
#include <vector>

using namespace isac;

namespace {

// Straight-line evaluation with explicit loops, independent of Eigen products.
Matrix naive_forward(const Mlp<double> &net, const Matrix &input) {
  Matrix x = input;
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const auto &l = net.layers[i];
    Matrix z(l.weight.rows(), x.cols());
    for (Index c = 0; c < x.cols(); ++c)
      for (Index r = 0; r < l.weight.rows(); ++r) {
        double acc = l.bias(r);
        for (Index k = 0; k < l.weight.cols(); ++k)
          acc += l.weight(r, k) * x(k, c);
        if (i + 1 < net.layers.size())
          acc = net.hidden == Activation::relu ? (acc > 0 ? acc : 0.0)
                                               : std::tanh(acc);
        z(r, c) = acc;
      }
    x = z;
  }
  return x;
}

Matrix random_matrix(Index rows, Index cols, Rng &rng) {
  std::normal_distribution<double> n;
  Matrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i)
    m.data()[i] = n(rng);
  return m;
}

} // namespace

TEST(Mlp, ZeroWeightsGiveBias) {
  Rng rng(1);
  auto net = make_mlp<double>({3, 2}, Activation::relu, rng);
  net.layers[0].weight.setZero();
  net.layers[0].bias << 0.5, -2.0;
  const Matrix out = mlp_forward(net, random_matrix(3, 4, rng));
  for (Index c = 0; c < 4; ++c) {
    EXPECT_EQ(out(0, c), 0.5);
    EXPECT_EQ(out(1, c), -2.0);
  }
}

TEST(Mlp, IdentityLayer) {
  Rng rng(2);
  auto net = make_mlp<double>({3, 3}, Activation::relu, rng);
  net.layers[0].weight.setIdentity();
  net.layers[0].bias.setZero();
  const Matrix x = random_matrix(3, 5, rng);
  EXPECT_EQ(mlp_forward(net, x), x);
}

TEST(Mlp, ForwardMatchesLoopOracle) {
  for (auto act : {Activation::relu, Activation::tanh}) {
    Rng rng(3);
    auto net = make_mlp<double>({4, 16, 2}, act, rng);
    const Matrix x = random_matrix(4, 7, rng);
    const Matrix fast = mlp_forward(net, x);
    const Matrix slow = naive_forward(net, x);
    EXPECT_LE((fast - slow).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Mlp, ForwardIsDeterministic) {
  Rng rng(4);
  auto net = make_mlp<double>({5, 8, 8, 3}, Activation::relu, rng);
  const Matrix x = random_matrix(5, 9, rng);
  const Matrix a = mlp_forward(net, x), b = mlp_forward(net, x);
  EXPECT_EQ(0, std::memcmp(a.data(), b.data(), sizeof(double) * a.size()));
}

TEST(Mlp, InitBoundsFollowFanIn) {
  Rng rng(5);
  auto net = make_mlp<double>({16, 64, 4}, Activation::relu, rng);
  EXPECT_LE(net.layers[0].weight.cwiseAbs().maxCoeff(), 0.25);
  EXPECT_LE(net.layers[1].weight.cwiseAbs().maxCoeff(), 0.125);
  EXPECT_GT(net.layers[0].weight.cwiseAbs().maxCoeff(), 0.2);
}

TEST(Mlp, DimensionMismatchThrows) {
  Rng rng(6);
  auto net = make_mlp<double>({3, 4, 1}, Activation::relu, rng);
  EXPECT_THROW(mlp_forward(net, Matrix::Zero(2, 1)), ConfigError);
  net.layers[1].weight.resize(1, 5);
  EXPECT_THROW(validate(net), ConfigError);
}

TEST(MlpBackward, LinearScalarChainRule) {
  Rng rng(7);
  auto net = make_mlp<double>({1, 1}, Activation::relu, rng);
  net.layers[0].weight(0, 0) = 2.5;
  Matrix x(1, 1);
  x << 1.75;
  const auto b = mlp_backward(net, x, Matrix::Ones(1, 1));
  EXPECT_DOUBLE_EQ(b.grads.layers[0].weight(0, 0), 1.75);
  EXPECT_DOUBLE_EQ(b.grads.layers[0].bias(0), 1.0);
  EXPECT_DOUBLE_EQ(b.input_grad(0, 0), 2.5);
}

TEST(MlpBackward, DeadReluBlocksGradient) {
  Rng rng(8);
  auto net = make_mlp<double>({1, 2, 1}, Activation::relu, rng);
  net.layers[0].weight << 1.0, 1.0;
  net.layers[0].bias << -5.0, 5.0; // first unit is off for x = 1
  Matrix x(1, 1);
  x << 1.0;
  const auto b = mlp_backward(net, x, Matrix::Ones(1, 1));
  EXPECT_EQ(b.grads.layers[0].weight(0, 0), 0.0);
  EXPECT_EQ(b.grads.layers[0].bias(0), 0.0);
  EXPECT_NE(b.grads.layers[0].bias(1), 0.0);
}

TEST(MlpBackward, MatchesFiniteDifferencesOnRandomNets) {
  Rng rng(9);
  std::uniform_int_distribution<int> depth(1, 3), width(1, 16), io(1, 5);
  std::uniform_int_distribution<int> act(0, 1);
  for (int trial = 0; trial < 12; ++trial) {
    std::vector<Index> sizes{io(rng)};
    const int d = depth(rng);
    for (int i = 0; i < d; ++i)
      sizes.push_back(width(rng));
    sizes.push_back(io(rng));
    const auto a = act(rng) ? Activation::tanh : Activation::relu;
    auto net = make_mlp<double>(std::span<const Index>(sizes), a, rng);
    const Matrix x = random_matrix(sizes.front(), 3, rng);
    const Matrix up = random_matrix(sizes.back(), 3, rng);
    auto loss = [&](const Mlp<double> &p) {
      return (mlp_forward(p, x).array() * up.array()).sum();
    };
    const auto analytic = mlp_backward(net, x, up).grads;
    const auto numeric =
        finite_diff_grad<double>(loss, net, 1e-6);
    EXPECT_LE(max_relative_error(analytic, numeric), 1e-5) << "trial " << trial;
  }
}

TEST(MlpBackward, Fixed3881Net) {
  Rng rng(10);
  auto net = make_mlp<double>({3, 8, 8, 1}, Activation::relu, rng);
  const Matrix x = random_matrix(3, 4, rng);
  auto loss = [&](const Mlp<double> &p) { return mlp_forward(p, x).sum(); };
  const auto analytic = mlp_backward(net, x, Matrix::Ones(1, 4)).grads;
  const auto numeric = finite_diff_grad<double>(loss, net, 1e-6);
  EXPECT_LE(max_relative_error(analytic, numeric), 1e-5);
}

TEST(MlpBackward, InputGradientMatchesFiniteDifferences) {
  Rng rng(11);
  auto net = make_mlp<double>({4, 12, 2}, Activation::tanh, rng);
  Matrix x = random_matrix(4, 2, rng);
  const Matrix up = random_matrix(2, 2, rng);
  const auto b = mlp_backward(net, x, up);
  const double h = 1e-6;
  for (Index i = 0; i < x.size(); ++i) {
    Matrix xp = x, xm = x;
    xp.data()[i] += h;
    xm.data()[i] -= h;
    const double fd = ((mlp_forward(net, xp).array() * up.array()).sum() -
                       (mlp_forward(net, xm).array() * up.array()).sum()) /
                      (2 * h);
    EXPECT_NEAR(b.input_grad.data()[i], fd, 1e-7);
  }
}

TEST(FiniteDiff, QuadraticAndConstantLosses) {
  Rng rng(12);
  auto net = make_mlp<double>({2, 3, 1}, Activation::relu, rng);
  auto half_sq = [](const Mlp<double> &p) {
    double s = 0;
    for (const auto &l : p.layers)
      s += l.weight.squaredNorm() + l.bias.squaredNorm();
    return s / 2;
  };
  const auto g = finite_diff_grad<double>(half_sq, net, 1e-4);
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    EXPECT_LE((g.layers[i].weight - net.layers[i].weight).cwiseAbs().maxCoeff(), 1e-8);
    EXPECT_LE((g.layers[i].bias - net.layers[i].bias).cwiseAbs().maxCoeff(), 1e-8);
  }
  const auto z = finite_diff_grad<double>([](const Mlp<double> &) { return 3.0; },
                                          net, 1e-4);
  for (const auto &l : z.layers) {
    EXPECT_EQ(l.weight.cwiseAbs().maxCoeff(), 0.0);
    EXPECT_EQ(l.bias.cwiseAbs().maxCoeff(), 0.0);
  }
}

TEST(Adam, ZeroGradientIsIdentity) {
  Rng rng(13);
  auto net = make_mlp<double>({3, 5, 2}, Activation::relu, rng);
  const auto before = net;
  auto state = make_adam_state(net);
  const auto zero = zeros_like(net);
  for (int t = 1; t <= 25; ++t) {
    adam_step(net, zero, state, 1e-3);
    EXPECT_EQ(state.t, t);
  }
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    EXPECT_EQ(net.layers[i].weight, before.layers[i].weight);
    EXPECT_EQ(net.layers[i].bias, before.layers[i].bias);
  }
}

TEST(Adam, FirstStepMatchesScalarOracle) {
  Rng rng(14);
  auto net = make_mlp<double>({2, 2}, Activation::relu, rng);
  const auto before = net;
  auto grads = zeros_like(net);
  grads.layers[0].weight << 0.3, -2.0, 1e-9, 0.0;
  grads.layers[0].bias << 5.0, -1e-3;
  auto state = make_adam_state(net);
  const double lr = 5e-4, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  adam_step(net, grads, state, lr);
  auto oracle = [&](double p, double g) {
    const double m = (1 - b1) * g, v = (1 - b2) * g * g;
    const double mh = m / (1 - b1), vh = v / (1 - b2);
    return p - lr * mh / (std::sqrt(vh) + eps);
  };
  for (Index i = 0; i < 4; ++i)
    EXPECT_NEAR(net.layers[0].weight.data()[i],
                oracle(before.layers[0].weight.data()[i],
                       grads.layers[0].weight.data()[i]),
                1e-15);
  for (Index i = 0; i < 2; ++i)
    EXPECT_NEAR(net.layers[0].bias(i),
                oracle(before.layers[0].bias(i), grads.layers[0].bias(i)), 1e-15);
}

TEST(Adam, ConstantGradientStepApproachesLr) {
  double theta = 1.0;
  ScalarAdamState<double> s;
  const double lr = 1e-2;
  double prev = theta, last_step = 0;
  for (int t = 0; t < 2000; ++t) {
    adam_step(theta, 0.7, s, lr);
    last_step = prev - theta;
    prev = theta;
  }
  EXPECT_NEAR(last_step, lr, 1e-8);
  EXPECT_EQ(s.t, 2000);
}

TEST(Adam, ScalarMatchesNetworkForm) {
  Rng rng(15);
  auto net = make_mlp<double>({1, 1}, Activation::relu, rng);
  double scalar = net.layers[0].weight(0, 0);
  auto state = make_adam_state(net);
  ScalarAdamState<double> sstate;
  std::normal_distribution<double> n;
  for (int t = 0; t < 50; ++t) {
    auto g = zeros_like(net);
    g.layers[0].weight(0, 0) = n(rng);
    adam_step(net, g, state, 1e-3);
    adam_step(scalar, g.layers[0].weight(0, 0), sstate, 1e-3);
  }
  EXPECT_NEAR(net.layers[0].weight(0, 0), scalar, 1e-14);
}

TEST(Adam, NonFiniteGradientFaults) {
  Rng rng(16);
  auto net = make_mlp<double>({2, 2}, Activation::relu, rng);
  const auto before = net;
  auto state = make_adam_state(net);
  auto g = zeros_like(net);
  g.layers[0].bias(1) = std::nan("");
  EXPECT_THROW(adam_step(net, g, state, 1e-3), NumericalFault);
  EXPECT_EQ(state.t, 0);
  EXPECT_EQ(net.layers[0].bias, before.layers[0].bias);
  double p = 0;
  ScalarAdamState<double> s;
  EXPECT_THROW(adam_step(p, std::numeric_limits<double>::infinity(), s, 1e-3),
               NumericalFault);
}

TEST(Polyak, ScalarAndLimits) {
  Rng rng(17);
  auto target = make_mlp<double>({1, 1}, Activation::relu, rng);
  auto source = target;
  target.layers[0].weight(0, 0) = 0.0;
  source.layers[0].weight(0, 0) = 1.0;
  polyak_update(target, source, 0.01);
  EXPECT_EQ(target.layers[0].weight(0, 0), 0.01);
  polyak_update(target, source, 1.0);
  EXPECT_EQ(target.layers[0].weight(0, 0), 1.0);
}
