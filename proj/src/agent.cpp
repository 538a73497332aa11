#include "isac/agent.hpp"

#include <cmath>
#include <numbers>

namespace isac {

void SacConfig::validate() const {
  if (!(gamma > 0 && gamma < 1))
    throw ConfigError("gamma must lie in (0, 1)");
  if (!(soft_update_factor > 0 && soft_update_factor <= 1))
    throw ConfigError("soft_update_factor must lie in (0, 1]");
  if (!(lr > 0))
    throw ConfigError("lr must be positive");
  if (batch_size == 0)
    throw ConfigError("batch_size must be positive");
  if (gradient_steps < 1)
    throw ConfigError("gradient_steps must be at least 1");
  for (Index h : hidden)
    if (h <= 0)
      throw ConfigError("hidden layer sizes must be positive");
  if (!(log_std_min < log_std_max))
    throw ConfigError("log_std_min must be below log_std_max");
}

namespace {

Mlp<double> build(Index in, const std::vector<Index> &hidden, Index out,
                  Activation act, Rng &rng) {
  std::vector<Index> sizes;
  sizes.push_back(in);
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(out);
  return make_mlp<double>(std::span<const Index>(sizes), act, rng);
}

Matrix stack(const Matrix &top, const Matrix &bottom) {
  Matrix out(top.rows() + bottom.rows(), top.cols());
  out << top, bottom;
  return out;
}

void require_finite(const Matrix &m, const char *what) {
  if (!m.allFinite())
    throw NumericalFault(std::string(what) + " produced non-finite values");
}

} // namespace

SacAgent make_agent(const EnvSpec &env, const SacConfig &config, Rng &rng) {
  config.validate();
  SacAgent a;
  a.config = config;
  a.obs_dim = env.obs_dim;
  a.act_dim = env.act_dim;
  a.head.scale = (env.action_high - env.action_low) / 2.0;
  a.head.offset = (env.action_high + env.action_low) / 2.0;
  a.head.log_std_min = config.log_std_min;
  a.head.log_std_max = config.log_std_max;
  a.target_entropy =
      config.target_entropy.value_or(-static_cast<double>(env.act_dim));

  a.policy = build(env.obs_dim, config.hidden, 2 * env.act_dim,
                   config.activation, rng);
  a.q1 = build(env.obs_dim + env.act_dim, config.hidden, 1, config.activation, rng);
  a.q2 = build(env.obs_dim + env.act_dim, config.hidden, 1, config.activation, rng);
  a.q1_target = a.q1;
  a.q2_target = a.q2;

  a.policy_opt = make_adam_state(a.policy);
  a.q1_opt = make_adam_state(a.q1);
  a.q2_opt = make_adam_state(a.q2);
  a.log_alpha = config.initial_log_alpha;
  return a;
}

BatchTensors to_tensors(const MiniBatch &batch) {
  if (batch.empty())
    throw ConfigError("empty training batch");
  const Index k = static_cast<Index>(batch.size());
  const Index obs = batch.front().state.size();
  const Index act = batch.front().action.size();
  BatchTensors t{Matrix(obs, k), Matrix(act, k), Vector(k), Matrix(obs, k),
                 Vector(k)};
  for (Index j = 0; j < k; ++j) {
    const auto &tr = batch[static_cast<std::size_t>(j)];
    t.states.col(j) = tr.state;
    t.actions.col(j) = tr.action;
    t.rewards(j) = tr.reward;
    t.next_states.col(j) = tr.next_state;
    t.done(j) = tr.done ? 1.0 : 0.0;
  }
  return t;
}

Matrix standard_normal(Index rows, Index cols, Rng &rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix m(rows, cols);
  for (Index c = 0; c < cols; ++c)
    for (Index r = 0; r < rows; ++r)
      m(r, c) = n(rng);
  return m;
}

PolicyOutput policy_forward(const Mlp<double> &policy, const PolicyHead &head,
                            const Eigen::Ref<const Matrix> &states,
                            const Matrix &noise) {
  const Index act = policy.out_dim() / 2;
  PolicyOutput o;
  const Matrix out = mlp_forward(policy, states, &o.tape);
  require_finite(out, "policy network");
  o.mean = out.topRows(act);
  o.raw_log_std = out.bottomRows(act);
  o.log_std = o.raw_log_std.cwiseMax(head.log_std_min).cwiseMin(head.log_std_max);
  o.noise = noise;
  const Matrix u = o.mean + (o.log_std.array().exp() * noise.array()).matrix();
  o.squashed = u.array().tanh().matrix();
  o.action = (o.squashed.array().colwise() * head.scale.array()).colwise() +
             head.offset.array();

  const double half_log_2pi = 0.5 * std::log(2.0 * std::numbers::pi);
  const double log_scale = head.scale.array().log().sum();
  const Eigen::ArrayXXd per_dim =
      -0.5 * noise.array().square() - o.log_std.array() - half_log_2pi -
      (1.0 - o.squashed.array().square() + PolicyHead::squash_eps).log();
  o.log_prob = per_dim.colwise().sum().transpose().matrix();
  o.log_prob.array() -= log_scale;
  return o;
}

PolicyOutput policy_sample(const SacAgent &agent,
                           const Eigen::Ref<const Matrix> &states, Rng &rng) {
  return policy_forward(agent.policy, agent.head, states,
                        standard_normal(agent.act_dim, states.cols(), rng));
}

Vector policy_mean_action(const SacAgent &agent, const Vector &state) {
  const Matrix out = mlp_forward(agent.policy, state);
  const Vector mean = out.topRows(agent.act_dim).col(0);
  return agent.head.offset.array() +
         agent.head.scale.array() * mean.array().tanh();
}

Vector compute_q_targets(const SacAgent &agent, const BatchTensors &batch,
                         Rng &rng) {
  const PolicyOutput next = policy_sample(agent, batch.next_states, rng);
  const Matrix input = stack(batch.next_states, next.action);
  const Matrix t1 = mlp_forward(agent.q1_target, input);
  const Matrix t2 = mlp_forward(agent.q2_target, input);
  const Vector soft_value =
      t1.row(0).cwiseMin(t2.row(0)).transpose() - agent.alpha() * next.log_prob;
  Vector y = batch.rewards.array() +
             agent.config.gamma * (1.0 - batch.done.array()) * soft_value.array();
  require_finite(y, "q targets");
  return y;
}

CriticLoss critic_loss(const Mlp<double> &q1, const Mlp<double> &q2,
                       const BatchTensors &batch, const Vector &targets,
                       const Vector *weights) {
  const Index k = batch.size();
  if (targets.size() != k || (weights && weights->size() != k))
    throw ConfigError("critic_loss: target/weight count does not match batch");
  const Matrix input = stack(batch.states, batch.actions);
  MlpTape<double> tape1, tape2;
  const Vector v1 = mlp_forward(q1, input, &tape1).row(0).transpose();
  const Vector v2 = mlp_forward(q2, input, &tape2).row(0).transpose();
  const Vector w = weights ? *weights : Vector::Ones(k);
  const Vector e1 = v1 - targets;
  const Vector e2 = v2 - targets;

  CriticLoss out;
  out.loss = (w.array() * (e1.array().square() + e2.array().square())).sum() /
             static_cast<double>(k);
  out.td = e1;
  const Matrix up1 = (2.0 / static_cast<double>(k) * w.array() * e1.array())
                         .matrix()
                         .transpose();
  const Matrix up2 = (2.0 / static_cast<double>(k) * w.array() * e2.array())
                         .matrix()
                         .transpose();
  out.grad_q1 = mlp_backward(q1, tape1, up1).grads;
  out.grad_q2 = mlp_backward(q2, tape2, up2).grads;
  return out;
}

ActorLoss actor_loss(const Mlp<double> &policy, const PolicyHead &head,
                     const Mlp<double> &q1, const Mlp<double> &q2, double alpha,
                     const Matrix &states, const Matrix &noise) {
  const Index k = states.cols();
  const Index act = policy.out_dim() / 2;
  const double inv_k = 1.0 / static_cast<double>(k);
  PolicyOutput p = policy_forward(policy, head, states, noise);

  const Matrix input = stack(states, p.action);
  MlpTape<double> tape1, tape2;
  const Matrix v1 = mlp_forward(q1, input, &tape1);
  const Matrix v2 = mlp_forward(q2, input, &tape2);

  Matrix up1 = Matrix::Zero(1, k), up2 = Matrix::Zero(1, k);
  double loss = 0.0;
  for (Index j = 0; j < k; ++j) {
    const bool first = v1(0, j) <= v2(0, j);
    const double qmin = first ? v1(0, j) : v2(0, j);
    (first ? up1 : up2)(0, j) = -inv_k;
    loss += alpha * p.log_prob(j) - qmin;
  }
  const Matrix d_in1 = mlp_backward(q1, tape1, up1, false).input_grad;
  const Matrix d_in2 = mlp_backward(q2, tape2, up2, false).input_grad;
  const Matrix d_action =
      d_in1.bottomRows(act) + d_in2.bottomRows(act);

  const Eigen::ArrayXXd t = p.squashed.array();
  const Eigen::ArrayXXd one_minus_t2 = 1.0 - t.square();
  // d log pi / d u from the tanh Jacobian term.
  const Eigen::ArrayXXd dlogp_du =
      2.0 * t * one_minus_t2 / (one_minus_t2 + PolicyHead::squash_eps);
  const Eigen::ArrayXXd d_u =
      (d_action.array().colwise() * head.scale.array()) * one_minus_t2 +
      alpha * inv_k * dlogp_du;
  const Eigen::ArrayXXd std = p.log_std.array().exp();
  Eigen::ArrayXXd d_log_std = d_u * std * p.noise.array() - alpha * inv_k;
  d_log_std = (p.raw_log_std.array() >= head.log_std_min &&
               p.raw_log_std.array() <= head.log_std_max)
                  .select(d_log_std, 0.0);

  Matrix upstream(2 * act, k);
  upstream.topRows(act) = d_u.matrix();
  upstream.bottomRows(act) = d_log_std.matrix();

  ActorLoss out;
  out.loss = loss * inv_k;
  out.log_prob = p.log_prob;
  out.grad = mlp_backward(policy, p.tape, upstream).grads;
  return out;
}

AlphaLoss alpha_loss(double log_alpha, const Vector &log_prob,
                     double target_entropy) {
  const double m = (log_prob.array() + target_entropy).mean();
  return {-log_alpha * m, -m};
}

CriticUpdate critic_update(SacAgent &agent, const BatchTensors &batch,
                           const Vector &targets, const Vector *weights) {
  CriticLoss c = critic_loss(agent.q1, agent.q2, batch, targets, weights);
  if (!std::isfinite(c.loss))
    throw NumericalFault("critic loss is not finite");
  adam_step(agent.q1, c.grad_q1, agent.q1_opt, agent.config.lr);
  adam_step(agent.q2, c.grad_q2, agent.q2_opt, agent.config.lr);
  return {std::move(c.td), c.loss};
}

ActorUpdate actor_update(SacAgent &agent, const BatchTensors &batch, Rng &rng) {
  const Matrix noise = standard_normal(agent.act_dim, batch.size(), rng);
  ActorLoss a = actor_loss(agent.policy, agent.head, agent.q1, agent.q2,
                           agent.alpha(), batch.states, noise);
  if (!std::isfinite(a.loss))
    throw NumericalFault("policy loss is not finite");
  adam_step(agent.policy, a.grad, agent.policy_opt, agent.config.lr);
  return {a.loss, std::move(a.log_prob)};
}

double alpha_update(SacAgent &agent, const Vector &log_prob) {
  const AlphaLoss l = alpha_loss(agent.log_alpha, log_prob, agent.target_entropy);
  adam_step(agent.log_alpha, l.grad, agent.alpha_opt, agent.config.lr);
  return agent.alpha();
}

double alpha_update(SacAgent &agent, const BatchTensors &batch, Rng &rng) {
  return alpha_update(agent, policy_sample(agent, batch.states, rng).log_prob);
}

void soft_update(SacAgent &agent) {
  const double tau = agent.config.soft_update_factor;
  polyak_update(agent.q1_target, agent.q1, tau);
  polyak_update(agent.q2_target, agent.q2, tau);
}

std::string to_string(Variant v) {
  switch (v) {
  case Variant::sac:
    return "sac";
  case Variant::sac_per:
    return "sac_per";
  case Variant::sac_per_ere:
    return "sac_per_ere";
  case Variant::isac:
    return "isac";
  }
  return "unknown";
}

Variant parse_variant(const std::string &name) {
  if (name == "sac")
    return Variant::sac;
  if (name == "sac_per")
    return Variant::sac_per;
  if (name == "sac_per_ere")
    return Variant::sac_per_ere;
  if (name == "isac")
    return Variant::isac;
  throw ConfigError("unknown variant '" + name +
                    "' (expected sac, sac_per, sac_per_ere or isac)");
}

void ReplayConfig::validate() const {
  if (capacity == 0)
    throw ConfigError("buffer capacity must be positive");
  if (xi < 1)
    throw ConfigError("xi must be at least 1");
  if (!(beta1 >= 0) || !(beta2_initial >= 0))
    throw ConfigError("PER exponents must be non-negative");
  if (!(eta0 > 0 && eta0 <= 1) || !(eta1 > 0 && eta1 <= 1))
    throw ConfigError("ERE eta must lie in (0, 1]");
}

ReplayStrategy::ReplayStrategy(Variant variant, const ReplayConfig &config)
    : variant_(variant), config_(config), buffer_(config.capacity) {
  config_.validate();
  if (variant_ == Variant::sac_per || variant_ == Variant::sac_per_ere)
    per_.emplace(config_.capacity, config_.beta1);
}

void ReplayStrategy::store(const AugTransition &t) {
  if (variant_ == Variant::isac) {
    temp_.record_step(t);
    return;
  }
  AugTransition scored = t;
  // Only the delayed-infusion path scores transitions; the rest carry 0.
  scored.rho = 0.0;
  const std::size_t slot = buffer_.push(std::move(scored));
  if (per_)
    per_on_insert(*per_, slot);
}

void ReplayStrategy::end_episode(double episodic_return) {
  if (variant_ != Variant::isac)
    return;
  temp_.finalize_episode(episodic_return);
  flush_if_due(temp_, buffer_, config_.xi);
}

ReplayStrategy::Draw ReplayStrategy::draw(std::size_t k,
                                          const AugTransition &latest,
                                          double progress,
                                          std::size_t episode_step,
                                          std::size_t episode_length, Rng &rng) {
  Draw d;
  switch (variant_) {
  case Variant::sac:
    d.batch = sample_uniform(buffer_, k, rng);
    d.uniform_batches = 1;
    break;
  case Variant::sac_per:
  case Variant::sac_per_ere: {
    std::size_t recent = 0;
    if (variant_ == Variant::sac_per_ere) {
      const double eta = anneal(config_.eta0, config_.eta1, progress);
      const double exponent = static_cast<double>(episode_step) * 1000.0 /
                              static_cast<double>(std::max<std::size_t>(episode_length, 1));
      recent = ere_window(buffer_.size(), eta, exponent, config_.ere_c_min);
    }
    const double beta2 = anneal(config_.beta2_initial, 1.0, progress);
    PerBatch pb = per_sample(buffer_, *per_, k, beta2, rng, recent);
    d.batch = std::move(pb.batch);
    d.slots = std::move(pb.slots);
    d.weights = Eigen::Map<const Vector>(pb.weights.data(),
                                         static_cast<Index>(pb.weights.size()));
    break;
  }
  case Variant::isac: {
    const MiniBatch b1 = sample_uniform(buffer_, k, rng);
    const MiniBatch b2 = sample_uniform(buffer_, k, rng);
    d.uniform_batches = 2;
    SdpResult sel = sdp_select(b1, b2, config_.zeta_th, rng);
    ++sdp_calls_;
    if (sel.prioritized)
      ++sdp_prioritized_;
    d.prioritized = sel.prioritized;
    d.batch = moo_mix(std::move(sel.batch), latest, rng);
    break;
  }
  }
  return d;
}

void ReplayStrategy::report_td_errors(const std::vector<std::size_t> &slots,
                                      const Vector &td) {
  if (!per_)
    return;
  per_update_priorities(*per_, slots,
                        std::span<const double>(td.data(), static_cast<std::size_t>(td.size())));
}

double ReplayStrategy::prioritized_fraction() const {
  return sdp_calls_ == 0 ? 0.0
                         : static_cast<double>(sdp_prioritized_) /
                               static_cast<double>(sdp_calls_);
}

TrainStats train_step(SacAgent &agent, ReplayStrategy &strategy,
                      const AugTransition &latest, const TrainContext &ctx,
                      Rng &rng) {
  TrainStats stats;
  if (!strategy.ready())
    return stats;
  for (int g = 0; g < agent.config.gradient_steps; ++g) {
    auto draw = strategy.draw(agent.config.batch_size, latest, ctx.progress,
                              ctx.episode_step, ctx.episode_length, rng);
    const BatchTensors batch = to_tensors(draw.batch);
    const Vector y = compute_q_targets(agent, batch, rng);
    const CriticUpdate c = critic_update(
        agent, batch, y, draw.weights ? &*draw.weights : nullptr);
    if (!draw.slots.empty())
      strategy.report_td_errors(draw.slots, c.td);
    const ActorUpdate a = actor_update(agent, batch, rng);
    stats.alpha = alpha_update(agent, a.log_prob);
    soft_update(agent);
    stats.critic_loss = c.loss;
    stats.actor_loss = a.loss;
  }
  stats.trained = true;
  return stats;
}

} // namespace isac
