#include "isac/envs.hpp"

#include <cmath>

namespace isac {

Vector clip_action(const EnvSpec &spec, const Vector &action) {
  if (action.size() != spec.act_dim)
    throw ConfigError("action has dim " + std::to_string(action.size()) +
                      ", expected " + std::to_string(spec.act_dim));
  return action.cwiseMax(spec.action_low).cwiseMin(spec.action_high);
}

CartPole::CartPole() : state_(Vector::Zero(4)) {
  spec_.obs_dim = 4;
  spec_.act_dim = 1;
  spec_.action_low = Vector::Constant(1, -1.0);
  spec_.action_high = Vector::Constant(1, 1.0);
  spec_.max_episode_steps = horizon;
}

Vector CartPole::reset(Rng &rng) {
  std::uniform_real_distribution<double> u(-reset_range, reset_range);
  Vector s(4);
  for (Index i = 0; i < 4; ++i)
    s(i) = u(rng);
  reset_to(s);
  return state_;
}

void CartPole::reset_to(const Vector &state) {
  if (state.size() != 4)
    throw ConfigError("cart-pole state must have 4 entries");
  state_ = state;
  steps_ = 0;
}

Vector CartPole::integrate(const Vector &s, double force) {
  const double total_mass = cart_mass + pole_mass;
  const double pole_moment = pole_mass * pole_half_length;
  const double x = s(0), x_dot = s(1), theta = s(2), theta_dot = s(3);
  const double sin_t = std::sin(theta), cos_t = std::cos(theta);

  const double temp =
      (force + pole_moment * theta_dot * theta_dot * sin_t) / total_mass;
  const double theta_acc =
      (gravity * sin_t - cos_t * temp) /
      (pole_half_length *
       (4.0 / 3.0 - pole_mass * cos_t * cos_t / total_mass));
  const double x_acc = temp - pole_moment * theta_acc * cos_t / total_mass;

  Vector next(4);
  next(1) = x_dot + dt * x_acc;
  next(0) = x + dt * next(1);
  next(3) = theta_dot + dt * theta_acc;
  next(2) = theta + dt * next(3);
  return next;
}

StepResult CartPole::step(const Vector &action) {
  if (!state_.allFinite())
    throw NumericalFault("cart-pole state is not finite");
  const Vector a = clip_action(spec_, action);
  if (!a.allFinite())
    throw NumericalFault("cart-pole action is not finite");
  state_ = integrate(state_, force_scale * a(0));
  ++steps_;

  StepResult r;
  r.next_state = state_;
  r.reward = 1.0;
  r.terminated = std::abs(state_(2)) > topple_angle;
  r.truncated = !r.terminated && steps_ >= horizon;
  return r;
}

Reacher::Reacher() {
  spec_.obs_dim = 11;
  spec_.act_dim = 2;
  spec_.action_low = Vector::Constant(2, -1.0);
  spec_.action_high = Vector::Constant(2, 1.0);
  spec_.max_episode_steps = horizon;
}

Eigen::Vector2d Reacher::fingertip(const Eigen::Vector2d &q) {
  return {link1 * std::cos(q(0)) + link2 * std::cos(q(0) + q(1)),
          link1 * std::sin(q(0)) + link2 * std::sin(q(0) + q(1))};
}

Eigen::Vector2d Reacher::fingertip_velocity(const Eigen::Vector2d &q,
                                            const Eigen::Vector2d &qdot) {
  const double s1 = std::sin(q(0)), c1 = std::cos(q(0));
  const double s12 = std::sin(q(0) + q(1)), c12 = std::cos(q(0) + q(1));
  Eigen::Matrix2d jac;
  jac << -link1 * s1 - link2 * s12, -link2 * s12, //
      link1 * c1 + link2 * c12, link2 * c12;
  return jac * qdot;
}

double Reacher::reward(const Eigen::Vector2d &d, const Vector &action) {
  return -d.squaredNorm() - action.squaredNorm();
}

bool Reacher::reachable(const Eigen::Vector2d &target) {
  const double r = target.norm();
  return r <= link1 + link2 && r >= std::abs(link1 - link2);
}

Vector Reacher::reset(Rng &rng) {
  std::uniform_real_distribution<double> joint(-joint_reset_range,
                                               joint_reset_range);
  std::uniform_real_distribution<double> coord(-target_radius, target_radius);
  Eigen::Vector2d q(joint(rng), joint(rng));
  Eigen::Vector2d target;
  do {
    target = {coord(rng), coord(rng)};
  } while (target.norm() > target_radius || !reachable(target));
  reset_to(q, Eigen::Vector2d::Zero(), target);
  return observation();
}

void Reacher::reset_to(const Eigen::Vector2d &joints,
                       const Eigen::Vector2d &joint_velocity,
                       const Eigen::Vector2d &target) {
  q_ = joints;
  qdot_ = joint_velocity;
  target_ = target;
  steps_ = 0;
}

Vector Reacher::observation() const {
  const Eigen::Vector2d tip = fingertip(q_);
  const Eigen::Vector2d vel = fingertip_velocity(q_, qdot_);
  Vector obs(11);
  obs << std::cos(q_(0)), std::cos(q_(1)), std::sin(q_(0)), std::sin(q_(1)),
      target_(0), target_(1), vel(0), vel(1), tip(0) - target_(0),
      tip(1) - target_(1), 0.0;
  return obs;
}

StepResult Reacher::step(const Vector &action) {
  if (!q_.allFinite() || !qdot_.allFinite())
    throw NumericalFault("reacher state is not finite");
  const Vector a = clip_action(spec_, action);
  if (!a.allFinite())
    throw NumericalFault("reacher action is not finite");
  qdot_ += dt * (torque_gain * a - damping * qdot_);
  q_ += dt * qdot_;
  ++steps_;

  StepResult r;
  r.next_state = observation();
  r.reward = reward(fingertip(q_) - target_, a);
  r.terminated = false;
  r.truncated = steps_ >= horizon;
  return r;
}

std::unique_ptr<Env> make_env(const std::string &name) {
  if (name == "pendulum")
    return std::make_unique<CartPole>();
  if (name == "reacher")
    return std::make_unique<Reacher>();
  throw ConfigError("unknown environment '" + name +
                    "' (expected pendulum or reacher)");
}

} // namespace isac
