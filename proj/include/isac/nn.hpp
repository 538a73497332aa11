#ifndef ISAC_NN_HPP
#define ISAC_NN_HPP

// Dense feed-forward networks with hand-written reverse-mode gradients.
//
// Batches are column-major: a batch of k inputs of dimension n is an n x k
// matrix, one sample per column. All routines are templated on the scalar so
// that gradient checks can run in double while nothing prevents a float build.

#include "isac/common.hpp"

#include <cmath>
#include <functional>
#include <span>
#include <type_traits>
#include <string>
#include <vector>

namespace isac {

enum class Activation { relu, tanh };

inline std::string to_string(Activation a) {
  return a == Activation::relu ? "relu" : "tanh";
}

inline Activation parse_activation(const std::string &name) {
  if (name == "relu")
    return Activation::relu;
  if (name == "tanh")
    return Activation::tanh;
  throw ConfigError("unknown activation '" + name + "'");
}

template <typename Scalar> struct DenseLayer {
  MatrixX<Scalar> weight; // out x in
  VectorX<Scalar> bias;   // out
};

/// Parameters of a multilayer perceptron. Hidden layers use `hidden`, the
/// output layer is affine.
template <typename Scalar> struct Mlp {
  std::vector<DenseLayer<Scalar>> layers;
  Activation hidden = Activation::relu;

  Index in_dim() const { return layers.front().weight.cols(); }
  Index out_dim() const { return layers.back().weight.rows(); }

  Index parameter_count() const {
    Index n = 0;
    for (const auto &l : layers)
      n += l.weight.size() + l.bias.size();
    return n;
  }
};

/// One cotangent per parameter, laid out like the Mlp it differentiates.
template <typename Scalar> struct MlpGradients {
  std::vector<DenseLayer<Scalar>> layers;

  MlpGradients &operator+=(const MlpGradients &other) {
    for (std::size_t i = 0; i < layers.size(); ++i) {
      layers[i].weight += other.layers[i].weight;
      layers[i].bias += other.layers[i].bias;
    }
    return *this;
  }
};

/// Activations recorded by a forward pass, consumed by mlp_backward.
template <typename Scalar> struct MlpTape {
  std::vector<MatrixX<Scalar>> inputs;          // input to each layer
  std::vector<MatrixX<Scalar>> pre_activations; // W x + b per layer
};

template <typename Scalar> struct MlpBackward {
  MlpGradients<Scalar> grads;
  MatrixX<Scalar> input_grad;
};

/// Adam moments for one network. t counts completed steps.
template <typename Scalar> struct AdamState {
  MlpGradients<Scalar> m;
  MlpGradients<Scalar> v;
  std::int64_t t = 0;
  Scalar beta1 = Scalar(0.9);
  Scalar beta2 = Scalar(0.999);
  Scalar eps = Scalar(1e-8);
};

/// Adam moments for a single scalar parameter (the log-temperature).
template <typename Scalar> struct ScalarAdamState {
  Scalar m = 0;
  Scalar v = 0;
  std::int64_t t = 0;
  Scalar beta1 = Scalar(0.9);
  Scalar beta2 = Scalar(0.999);
  Scalar eps = Scalar(1e-8);
};

template <typename Scalar> void validate(const Mlp<Scalar> &net) {
  if (net.layers.empty())
    throw ConfigError("network has no layers");
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const auto &l = net.layers[i];
    if (l.bias.size() != l.weight.rows())
      throw ConfigError("layer " + std::to_string(i) +
                        ": bias size does not match weight rows");
    if (i > 0 && net.layers[i - 1].weight.rows() != l.weight.cols())
      throw ConfigError("layer " + std::to_string(i) +
                        ": input dim does not chain with previous layer");
  }
}

/// Builds a network with layer widths `sizes` (input first, output last).
/// Weights and biases are uniform in +-1/sqrt(fan_in).
template <typename Scalar>
Mlp<Scalar> make_mlp(std::span<const Index> sizes, Activation hidden,
                     Rng &rng) {
  if (sizes.size() < 2)
    throw ConfigError("network needs at least input and output sizes");
  Mlp<Scalar> net;
  net.hidden = hidden;
  for (std::size_t i = 0; i + 1 < sizes.size(); ++i) {
    const Index in = sizes[i], out = sizes[i + 1];
    if (in <= 0 || out <= 0)
      throw ConfigError("layer sizes must be positive");
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    DenseLayer<Scalar> layer{MatrixX<Scalar>(out, in), VectorX<Scalar>(out)};
    for (Index c = 0; c < in; ++c)
      for (Index r = 0; r < out; ++r)
        layer.weight(r, c) = static_cast<Scalar>(dist(rng));
    for (Index r = 0; r < out; ++r)
      layer.bias(r) = static_cast<Scalar>(dist(rng));
    net.layers.push_back(std::move(layer));
  }
  return net;
}

template <typename Scalar>
Mlp<Scalar> make_mlp(std::initializer_list<Index> sizes, Activation hidden,
                     Rng &rng) {
  return make_mlp<Scalar>(std::span<const Index>(sizes.begin(), sizes.size()),
                          hidden, rng);
}

template <typename Scalar>
MlpGradients<Scalar> zeros_like(const Mlp<Scalar> &net) {
  MlpGradients<Scalar> g;
  g.layers.reserve(net.layers.size());
  for (const auto &l : net.layers)
    g.layers.push_back({MatrixX<Scalar>::Zero(l.weight.rows(), l.weight.cols()),
                        VectorX<Scalar>::Zero(l.bias.size())});
  return g;
}

template <typename Scalar>
AdamState<Scalar> make_adam_state(const Mlp<Scalar> &net) {
  AdamState<Scalar> s;
  s.m = zeros_like(net);
  s.v = zeros_like(net);
  return s;
}

namespace detail {

template <typename Scalar>
void apply_activation(Activation a, MatrixX<Scalar> &x) {
  if (a == Activation::relu)
    x = x.cwiseMax(Scalar(0));
  else
    x = x.array().tanh().matrix();
}

// Multiplies `upstream` in place by the activation derivative at `pre`.
template <typename Scalar>
void activation_backward(Activation a, const MatrixX<Scalar> &pre,
                         MatrixX<Scalar> &upstream) {
  if (a == Activation::relu) {
    upstream = (pre.array() > Scalar(0)).select(upstream, Scalar(0));
  } else {
    upstream.array() *= Scalar(1) - pre.array().tanh().square();
  }
}

} // namespace detail

/// Evaluates the network on every column of `input`. When `tape` is given the
/// intermediate values needed by mlp_backward are recorded into it.
template <typename Scalar>
MatrixX<Scalar> mlp_forward(const Mlp<Scalar> &net,
                            const std::type_identity_t<Eigen::Ref<const MatrixX<Scalar>>> &input,
                            MlpTape<Scalar> *tape = nullptr) {
  if (input.rows() != net.in_dim())
    throw ConfigError("mlp_forward: input dim " + std::to_string(input.rows()) +
                      " != network input dim " + std::to_string(net.in_dim()));
  if (tape) {
    tape->inputs.resize(net.layers.size());
    tape->pre_activations.resize(net.layers.size());
  }
  MatrixX<Scalar> x = input;
  const std::size_t last = net.layers.size() - 1;
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const auto &l = net.layers[i];
    MatrixX<Scalar> z(l.weight.rows(), x.cols());
    z.noalias() = l.weight * x;
    z.colwise() += l.bias;
    if (tape) {
      tape->inputs[i] = std::move(x);
      tape->pre_activations[i] = z;
    }
    if (i != last)
      detail::apply_activation(net.hidden, z);
    x = std::move(z);
  }
  return x;
}

/// Reverse pass for L = sum over columns of upstream^T * output, given the
/// tape of the matching forward pass. With `param_grads` false only the input
/// cotangent is produced.
template <typename Scalar>
MlpBackward<Scalar> mlp_backward(const Mlp<Scalar> &net,
                                 const MlpTape<Scalar> &tape,
                                 const std::type_identity_t<Eigen::Ref<const MatrixX<Scalar>>> &upstream,
                                 bool param_grads = true) {
  if (tape.inputs.size() != net.layers.size())
    throw ConfigError("mlp_backward: tape does not match network");
  if (upstream.rows() != net.out_dim() ||
      upstream.cols() != tape.inputs.front().cols())
    throw ConfigError("mlp_backward: upstream shape does not match output");
  MlpBackward<Scalar> out;
  if (param_grads)
    out.grads.layers.resize(net.layers.size());
  MatrixX<Scalar> delta = upstream;
  for (std::size_t j = net.layers.size(); j-- > 0;) {
    const auto &l = net.layers[j];
    if (j != net.layers.size() - 1)
      detail::activation_backward(net.hidden, tape.pre_activations[j], delta);
    if (param_grads) {
      auto &g = out.grads.layers[j];
      g.weight.noalias() = delta * tape.inputs[j].transpose();
      g.bias = delta.rowwise().sum();
    }
    MatrixX<Scalar> prev(l.weight.cols(), delta.cols());
    prev.noalias() = l.weight.transpose() * delta;
    delta = std::move(prev);
  }
  out.input_grad = std::move(delta);
  return out;
}

/// Convenience form: runs the forward pass itself.
template <typename Scalar>
MlpBackward<Scalar> mlp_backward(const Mlp<Scalar> &net,
                                 const std::type_identity_t<Eigen::Ref<const MatrixX<Scalar>>> &input,
                                 const std::type_identity_t<Eigen::Ref<const MatrixX<Scalar>>> &upstream) {
  MlpTape<Scalar> tape;
  mlp_forward(net, input, &tape);
  return mlp_backward(net, tape, upstream);
}

template <typename Scalar>
bool all_finite(const MlpGradients<Scalar> &g) {
  for (const auto &l : g.layers)
    if (!l.weight.allFinite() || !l.bias.allFinite())
      return false;
  return true;
}

namespace detail {

template <typename Scalar, typename P, typename G>
void adam_block(P &param, const G &grad, P &m, P &v, Scalar lr, Scalar c1,
                Scalar c2, const AdamState<Scalar> &s) {
  m = s.beta1 * m + (Scalar(1) - s.beta1) * grad;
  v = s.beta2 * v + (Scalar(1) - s.beta2) * grad.cwiseAbs2();
  param.array() -= lr * (m.array() / c1) /
                   ((v.array() / c2).sqrt() + s.eps);
}

} // namespace detail

/// One bias-corrected Adam step. Throws NumericalFault on non-finite
/// gradients, leaving params and state untouched.
template <typename Scalar>
void adam_step(Mlp<Scalar> &params, const MlpGradients<Scalar> &grads,
               AdamState<Scalar> &state, Scalar lr) {
  if (!(lr > 0))
    throw ConfigError("adam_step: learning rate must be positive");
  if (grads.layers.size() != params.layers.size() ||
      state.m.layers.size() != params.layers.size())
    throw ConfigError("adam_step: gradient shape does not match parameters");
  for (std::size_t i = 0; i < params.layers.size(); ++i)
    if (grads.layers[i].weight.rows() != params.layers[i].weight.rows() ||
        grads.layers[i].weight.cols() != params.layers[i].weight.cols())
      throw ConfigError("adam_step: gradient shape does not match parameters");
  if (!all_finite(grads))
    throw NumericalFault("adam_step: non-finite gradient");
  ++state.t;
  const Scalar c1 = Scalar(1) - std::pow(state.beta1, Scalar(state.t));
  const Scalar c2 = Scalar(1) - std::pow(state.beta2, Scalar(state.t));
  for (std::size_t i = 0; i < params.layers.size(); ++i) {
    auto &p = params.layers[i];
    const auto &g = grads.layers[i];
    detail::adam_block(p.weight, g.weight, state.m.layers[i].weight,
                       state.v.layers[i].weight, lr, c1, c2, state);
    detail::adam_block(p.bias, g.bias, state.m.layers[i].bias,
                       state.v.layers[i].bias, lr, c1, c2, state);
  }
}

template <typename Scalar>
void adam_step(Scalar &param, Scalar grad, ScalarAdamState<Scalar> &state,
               Scalar lr) {
  if (!(lr > 0))
    throw ConfigError("adam_step: learning rate must be positive");
  if (!std::isfinite(grad))
    throw NumericalFault("adam_step: non-finite gradient");
  ++state.t;
  state.m = state.beta1 * state.m + (1 - state.beta1) * grad;
  state.v = state.beta2 * state.v + (1 - state.beta2) * grad * grad;
  const Scalar mhat = state.m / (1 - std::pow(state.beta1, Scalar(state.t)));
  const Scalar vhat = state.v / (1 - std::pow(state.beta2, Scalar(state.t)));
  param -= lr * mhat / (std::sqrt(vhat) + state.eps);
}

/// target <- (1 - tau) * target + tau * source, parameter-wise.
template <typename Scalar>
void polyak_update(Mlp<Scalar> &target, const Mlp<Scalar> &source, Scalar tau) {
  for (std::size_t i = 0; i < target.layers.size(); ++i) {
    auto &t = target.layers[i];
    const auto &s = source.layers[i];
    t.weight = (Scalar(1) - tau) * t.weight + tau * s.weight;
    t.bias = (Scalar(1) - tau) * t.bias + tau * s.bias;
  }
}

/// Central-difference estimate of d loss / d params, one parameter at a time.
/// Test oracle; cost is two loss evaluations per parameter.
template <typename Scalar>
MlpGradients<Scalar>
finite_diff_grad(const std::function<Scalar(const Mlp<Scalar> &)> &loss,
                 const Mlp<Scalar> &params, Scalar h) {
  if (!(h > 0))
    throw ConfigError("finite_diff_grad: step must be positive");
  Mlp<Scalar> probe = params;
  MlpGradients<Scalar> g = zeros_like(params);
  auto perturb = [&](Scalar &slot, Scalar &out) {
    const Scalar orig = slot;
    slot = orig + h;
    const Scalar up = loss(probe);
    slot = orig - h;
    const Scalar down = loss(probe);
    slot = orig;
    out = (up - down) / (2 * h);
  };
  for (std::size_t i = 0; i < probe.layers.size(); ++i) {
    auto &l = probe.layers[i];
    for (Index c = 0; c < l.weight.cols(); ++c)
      for (Index r = 0; r < l.weight.rows(); ++r)
        perturb(l.weight(r, c), g.layers[i].weight(r, c));
    for (Index r = 0; r < l.bias.size(); ++r)
      perturb(l.bias(r), g.layers[i].bias(r));
  }
  return g;
}

/// max over entries of |a - b| / max(|a|, |b|, floor).
template <typename Scalar>
Scalar max_relative_error(const MlpGradients<Scalar> &a,
                          const MlpGradients<Scalar> &b,
                          Scalar floor = Scalar(1e-8)) {
  Scalar worst = 0;
  auto cmp = [&](const auto &x, const auto &y) {
    for (Index k = 0; k < x.size(); ++k) {
      const Scalar xa = x.data()[k], yb = y.data()[k];
      const Scalar denom = std::max({std::abs(xa), std::abs(yb), floor});
      worst = std::max(worst, std::abs(xa - yb) / denom);
    }
  };
  for (std::size_t i = 0; i < a.layers.size(); ++i) {
    cmp(a.layers[i].weight, b.layers[i].weight);
    cmp(a.layers[i].bias, b.layers[i].bias);
  }
  return worst;
}

} // namespace isac

#endif
