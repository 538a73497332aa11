#ifndef ISAC_AGENT_HPP
#define ISAC_AGENT_HPP

#include "isac/envs.hpp"
#include "isac/nn.hpp"
#include "isac/replay.hpp"

#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace isac {

struct SacConfig {
  double gamma = 0.99;
  double soft_update_factor = 1e-2;
  double lr = 5e-4;
  std::size_t batch_size = 50;
  int gradient_steps = 1;
  std::vector<Index> hidden{256, 256};
  Activation activation = Activation::relu;
  std::optional<double> target_entropy; // defaults to -act_dim
  double log_std_min = -20.0;
  double log_std_max = 2.0;
  double initial_log_alpha = 0.0;

  void validate() const;
};

/// Maps the policy network's raw output to a squashed Gaussian over the
/// action box.
struct PolicyHead {
  Vector scale;  // (high - low) / 2
  Vector offset; // (high + low) / 2
  double log_std_min = -20.0;
  double log_std_max = 2.0;
  static constexpr double squash_eps = 1e-6;
};

struct SacAgent {
  SacConfig config;
  Index obs_dim = 0;
  Index act_dim = 0;
  PolicyHead head;
  double target_entropy = 0.0;

  Mlp<double> policy; // obs -> (mean, log_std)
  Mlp<double> q1, q2; // (obs, act) -> Q
  Mlp<double> q1_target, q2_target;

  AdamState<double> policy_opt, q1_opt, q2_opt;
  double log_alpha = 0.0;
  ScalarAdamState<double> alpha_opt;

  double alpha() const { return std::exp(log_alpha); }
};

SacAgent make_agent(const EnvSpec &env, const SacConfig &config, Rng &rng);

/// A mini-batch laid out column-wise for the networks.
struct BatchTensors {
  Matrix states;      // obs x k
  Matrix actions;     // act x k
  Vector rewards;     // k
  Matrix next_states; // obs x k
  Vector done;        // k, 1.0 for true termination
  Index size() const { return rewards.size(); }
};

BatchTensors to_tensors(const MiniBatch &batch);

/// Everything produced by one reparameterized pass of the policy.
struct PolicyOutput {
  Matrix mean;
  Matrix raw_log_std;
  Matrix log_std; // clamped
  Matrix noise;   // standard normal draws
  Matrix squashed; // tanh(mean + std * noise)
  Matrix action;   // squashed mapped onto the action box
  Vector log_prob;
  MlpTape<double> tape;
};

Matrix standard_normal(Index rows, Index cols, Rng &rng);

/// Deterministic given `noise`. Records a tape for backpropagation.
PolicyOutput policy_forward(const Mlp<double> &policy, const PolicyHead &head,
                            const Eigen::Ref<const Matrix> &states,
                            const Matrix &noise);

/// a = offset + scale * tanh(u), u ~ N(mean, std^2), with the log-density
/// of a including the tanh and box-scaling Jacobians.
PolicyOutput policy_sample(const SacAgent &agent,
                           const Eigen::Ref<const Matrix> &states, Rng &rng);

/// offset + scale * tanh(mean); no sampling.
Vector policy_mean_action(const SacAgent &agent, const Vector &state);

/// Bootstrapped soft Q targets
/// y = r + gamma (1 - done) (min_i Q_targ,i(s', a') - alpha log pi(a'|s')).
Vector compute_q_targets(const SacAgent &agent, const BatchTensors &batch,
                         Rng &rng);

struct CriticLoss {
  double loss = 0.0;
  Vector td; // Q1(s, a) - y
  MlpGradients<double> grad_q1, grad_q2;
};

/// mean_i w_i [(Q1 - y)^2 + (Q2 - y)^2] and its gradients. `weights` may be
/// null for unit weights.
CriticLoss critic_loss(const Mlp<double> &q1, const Mlp<double> &q2,
                       const BatchTensors &batch, const Vector &targets,
                       const Vector *weights);

struct ActorLoss {
  double loss = 0.0;
  Vector log_prob;
  MlpGradients<double> grad;
};

/// mean_i [alpha log pi(a_i|s_i) - min_j Q_j(s_i, a_i)] with a_i
/// reparameterized through `noise`. Critics are treated as constants.
ActorLoss actor_loss(const Mlp<double> &policy, const PolicyHead &head,
                     const Mlp<double> &q1, const Mlp<double> &q2, double alpha,
                     const Matrix &states, const Matrix &noise);

struct AlphaLoss {
  double loss = 0.0;
  double grad = 0.0; // d loss / d log_alpha
};

/// -log_alpha * mean_i (log pi_i + target_entropy), log-probs held fixed.
AlphaLoss alpha_loss(double log_alpha, const Vector &log_prob,
                     double target_entropy);

struct CriticUpdate {
  Vector td;
  double loss = 0.0;
};

CriticUpdate critic_update(SacAgent &agent, const BatchTensors &batch,
                           const Vector &targets,
                           const Vector *weights = nullptr);

struct ActorUpdate {
  double loss = 0.0;
  Vector log_prob;
};

ActorUpdate actor_update(SacAgent &agent, const BatchTensors &batch, Rng &rng);

/// One Adam step on log_alpha; returns the new alpha.
double alpha_update(SacAgent &agent, const Vector &log_prob);
/// Samples fresh actions for `batch` and adapts alpha to them.
double alpha_update(SacAgent &agent, const BatchTensors &batch, Rng &rng);

void soft_update(SacAgent &agent);

enum class Variant { sac, sac_per, sac_per_ere, isac };

std::string to_string(Variant v);
Variant parse_variant(const std::string &name);

struct ReplayConfig {
  std::size_t capacity = ReplayBuffer::default_capacity;
  std::size_t warmup = 1000;
  double zeta_th = 0.5;
  int xi = 10;
  double beta1 = 0.6;
  double beta2_initial = 0.4;
  double eta0 = 0.996;
  double eta1 = 1.0;
  std::size_t ere_c_min = 5000;

  void validate() const;
};

/// Where the training batch comes from. Owns the replay buffer and whatever
/// side structures the variant needs.
class ReplayStrategy {
public:
  ReplayStrategy(Variant variant, const ReplayConfig &config);

  Variant variant() const { return variant_; }
  const ReplayConfig &config() const { return config_; }

  /// Records an environment step. Variants without delayed infusion insert it
  /// straight into the buffer.
  void store(const AugTransition &t);
  /// Closes the current episode with its undiscounted return.
  void end_episode(double episodic_return);

  bool ready() const { return buffer_.size() >= config_.warmup; }

  struct Draw {
    MiniBatch batch;
    std::optional<Vector> weights;
    std::vector<std::size_t> slots; // PER slots to re-prioritize
    std::size_t uniform_batches = 0;
    bool prioritized = false;
  };

  /// `progress` in [0, 1] drives the PER/ERE annealing schedules;
  /// `episode_step` and `episode_length` drive the ERE window.
  Draw draw(std::size_t k, const AugTransition &latest, double progress,
            std::size_t episode_step, std::size_t episode_length, Rng &rng);

  void report_td_errors(const std::vector<std::size_t> &slots, const Vector &td);

  const ReplayBuffer &buffer() const { return buffer_; }
  const TempBuffer &temp() const { return temp_; }
  const PerState *per() const { return per_ ? &*per_ : nullptr; }
  std::uint64_t sdp_calls() const { return sdp_calls_; }
  std::uint64_t sdp_prioritized() const { return sdp_prioritized_; }
  double prioritized_fraction() const;

private:
  Variant variant_;
  ReplayConfig config_;
  ReplayBuffer buffer_;
  TempBuffer temp_;
  std::optional<PerState> per_;
  std::uint64_t sdp_calls_ = 0;
  std::uint64_t sdp_prioritized_ = 0;
};

struct TrainStats {
  bool trained = false;
  double critic_loss = 0.0;
  double actor_loss = 0.0;
  double alpha = 0.0;
};

struct TrainContext {
  double progress = 0.0;
  std::size_t episode_step = 0;
  std::size_t episode_length = 1;
};

/// One environment step's worth of learning: gradient_steps rounds of
/// batch selection, critic, actor, temperature and target updates. A no-op
/// until the strategy's buffer has finished warming up.
TrainStats train_step(SacAgent &agent, ReplayStrategy &strategy,
                      const AugTransition &latest, const TrainContext &ctx,
                      Rng &rng);

// Checkpoints: a flat binary container of named column-major double arrays.
//
//   "ISACCKPT" | u32 version | u32 count |
//   count x ( u32 name_len | name | u64 rows | u64 cols | rows*cols f64 )
//
// All integers and doubles little-endian.
inline constexpr std::uint32_t checkpoint_version = 1;

using NamedArrays = std::map<std::string, Matrix>;

NamedArrays checkpoint_arrays(const SacAgent &agent);
void restore_arrays(SacAgent &agent, const NamedArrays &arrays);
void write_container(std::ostream &out, const NamedArrays &arrays);
NamedArrays read_container(std::istream &in);
void save_checkpoint(const std::string &path, const SacAgent &agent);
void load_checkpoint(const std::string &path, SacAgent &agent);

} // namespace isac

#endif
