#ifndef ISAC_ENVS_HPP
#define ISAC_ENVS_HPP

#include "isac/common.hpp"

#include <memory>
#include <string>

namespace isac {

struct EnvSpec {
  Index obs_dim = 0;
  Index act_dim = 0;
  Vector action_low;
  Vector action_high;
  int max_episode_steps = 1;
};

struct StepResult {
  Vector next_state;
  double reward = 0.0;
  bool terminated = false; // the task failed; bootstrapping stops here
  bool truncated = false;  // time limit reached
};

/// A single-owner episodic environment. Actions outside the bounds are
/// clipped before use.
class Env {
public:
  virtual ~Env() = default;
  virtual const EnvSpec &spec() const = 0;
  virtual Vector reset(Rng &rng) = 0;
  virtual StepResult step(const Vector &action) = 0;
  virtual int steps_taken() const = 0;
};

/// Cart-pole balancing task: a pole hinged to a cart on a rail, driven by a
/// horizontal force. Observation is (x, x_dot, theta, theta_dot).
class CartPole final : public Env {
public:
  static constexpr double gravity = 9.8;
  static constexpr double cart_mass = 1.0;
  static constexpr double pole_mass = 0.1;
  static constexpr double pole_half_length = 0.5;
  static constexpr double force_scale = 10.0;
  static constexpr double dt = 0.02;
  static constexpr double topple_angle = 0.2;
  static constexpr double reset_range = 0.01;
  static constexpr int horizon = 1000;

  CartPole();

  const EnvSpec &spec() const override { return spec_; }
  Vector reset(Rng &rng) override;
  StepResult step(const Vector &action) override;
  int steps_taken() const override { return steps_; }

  /// Places the system in an explicit state and zeroes the step counter.
  void reset_to(const Vector &state);
  const Vector &state() const { return state_; }

  /// One semi-implicit Euler step of the frictionless cart-pole under
  /// `force` newtons.
  static Vector integrate(const Vector &state, double force);

private:
  EnvSpec spec_;
  Vector state_;
  int steps_ = 0;
};

/// Kinematic two-link planar arm that must bring its end effector onto a
/// random target. Reward is -|d|^2 - |a|^2 with d the end-effector-to-target
/// displacement.
///
/// Observation layout (11):
///   [0..3]  cos q1, cos q2, sin q1, sin q2
///   [4..5]  target x, y
///   [6..7]  end-effector velocity
///   [8..10] end effector minus target, third component fixed at zero
class Reacher final : public Env {
public:
  static constexpr double link1 = 0.1;
  static constexpr double link2 = 0.1;
  static constexpr double dt = 0.05;
  static constexpr double torque_gain = 20.0; // rad/s^2 per unit action
  static constexpr double damping = 5.0;      // 1/s
  static constexpr double target_radius = 0.2;
  static constexpr double joint_reset_range = 0.1;
  static constexpr int horizon = 50;

  Reacher();

  const EnvSpec &spec() const override { return spec_; }
  Vector reset(Rng &rng) override;
  StepResult step(const Vector &action) override;
  int steps_taken() const override { return steps_; }

  void reset_to(const Eigen::Vector2d &joints,
                const Eigen::Vector2d &joint_velocity,
                const Eigen::Vector2d &target);

  static Eigen::Vector2d fingertip(const Eigen::Vector2d &joints);
  static Eigen::Vector2d fingertip_velocity(const Eigen::Vector2d &joints,
                                            const Eigen::Vector2d &joint_velocity);
  static double reward(const Eigen::Vector2d &displacement,
                       const Vector &action);
  static bool reachable(const Eigen::Vector2d &target);

  Vector observation() const;
  const Eigen::Vector2d &joints() const { return q_; }
  const Eigen::Vector2d &target() const { return target_; }

private:
  EnvSpec spec_;
  Eigen::Vector2d q_ = Eigen::Vector2d::Zero();
  Eigen::Vector2d qdot_ = Eigen::Vector2d::Zero();
  Eigen::Vector2d target_ = Eigen::Vector2d::Zero();
  int steps_ = 0;
};

// A swimmer task would reward forward velocity minus 1e-4 |a|^2; its fluid
// dynamics are not modelled here.

std::unique_ptr<Env> make_env(const std::string &name);

/// Clamps `action` into the spec's bounds.
Vector clip_action(const EnvSpec &spec, const Vector &action);

} // namespace isac

#endif
