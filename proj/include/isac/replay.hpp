#ifndef ISAC_REPLAY_HPP
#define ISAC_REPLAY_HPP

#include "isac/common.hpp"

#include <cstddef>
#include <optional>
#include <ostream>
#include <span>
#include <vector>

namespace isac {

/// One environment step plus the return of the episode it belongs to.
/// `rho` stays empty until the episode has finished.
struct AugTransition {
  Vector state;
  Vector action;
  double reward = 0.0;
  Vector next_state;
  bool done = false; // true termination only, never time-limit truncation
  std::optional<double> rho;
  std::int64_t episode_id = 0;
};

using MiniBatch = std::vector<AugTransition>;

/// Thrown when a sampler is asked to draw from an empty buffer.
class BufferUnavailable : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Fixed-capacity ring of scored transitions. Once full, each push overwrites
/// the oldest entry. Chronological index 0 is the oldest surviving entry.
class ReplayBuffer {
public:
  static constexpr std::size_t default_capacity = 1'000'000;

  explicit ReplayBuffer(std::size_t capacity = default_capacity);

  /// Inserts `t` and returns the slot it occupies. `t.rho` must be set.
  std::size_t push(AugTransition t);

  std::size_t size() const { return storage_.size(); }
  std::size_t capacity() const { return capacity_; }
  bool empty() const { return storage_.empty(); }
  std::uint64_t total_pushed() const { return pushed_; }

  /// Slot holding the chronological index `i`.
  std::size_t slot_of(std::size_t i) const;
  const AugTransition &at_slot(std::size_t slot) const { return storage_[slot]; }
  const AugTransition &operator[](std::size_t i) const {
    return storage_[slot_of(i)];
  }

private:
  std::size_t capacity_;
  std::size_t next_ = 0;
  std::uint64_t pushed_ = 0;
  std::vector<AugTransition> storage_;
};

/// Staging area for recent episodes before they reach the replay buffer.
class TempBuffer {
public:
  /// Appends to the episode currently being recorded.
  void record_step(AugTransition t);

  /// Stamps `episodic_return` onto every step of the current episode and
  /// closes it. Returns false (and leaves the buffer unchanged) when the
  /// current episode has no steps.
  bool finalize_episode(double episodic_return);

  int episodes_held() const { return static_cast<int>(episodes_.size()); }
  std::size_t current_episode_size() const { return current_.size(); }
  /// All steps held, finished or not.
  std::size_t size() const;
  const std::vector<MiniBatch> &finished_episodes() const { return episodes_; }

  /// Moves the finished episodes, oldest first, into `buffer` and forgets
  /// them. Returns the slots written.
  std::vector<std::size_t> drain_into(ReplayBuffer &buffer);

private:
  std::vector<MiniBatch> episodes_;
  MiniBatch current_;
};

/// Moves everything from `temp` into `buffer` once `xi` episodes have been
/// finalized. Returns whether a flush happened.
bool flush_if_due(TempBuffer &temp, ReplayBuffer &buffer, int xi,
                  std::vector<std::size_t> *slots_written = nullptr);

/// k slot indices drawn uniformly with replacement.
std::vector<std::size_t> sample_uniform_slots(const ReplayBuffer &buffer,
                                              std::size_t k, Rng &rng);
MiniBatch sample_uniform(const ReplayBuffer &buffer, std::size_t k, Rng &rng);

/// Cosine of the angle between `a` and `b`. Returns 1 when either vector
/// has zero norm.
double cosine_similarity(std::span<const double> a, std::span<const double> b);

/// The rho of every transition, in batch order. Throws if any is pending.
std::vector<double> rho_vector(const MiniBatch &batch);

struct SdpResult {
  MiniBatch batch;
  bool prioritized = false;
  double zeta = 1.0;
};

/// Sampled-data prioritization. When the rho vectors of b1 and b2 have
/// cosine similarity <= zeta_th, returns the k highest-rho transitions of
/// their concatenation (ties broken uniformly at random); otherwise returns
/// b1 or b2 with equal probability.
SdpResult sdp_select(const MiniBatch &b1, const MiniBatch &b2, double zeta_th,
                     Rng &rng);

/// Overwrites one uniformly chosen element of `batch` with `latest`.
/// Returns the replaced index.
std::size_t moo_mix_inplace(MiniBatch &batch, const AugTransition &latest,
                            Rng &rng);
MiniBatch moo_mix(MiniBatch batch, const AugTransition &latest, Rng &rng);

/// Binary tree whose internal nodes hold the sum of their children; leaves
/// are per-slot sampling masses.
class SumTree {
public:
  explicit SumTree(std::size_t leaves);

  std::size_t leaf_count() const { return leaves_; }
  void set(std::size_t leaf, double value);
  double get(std::size_t leaf) const { return nodes_[leaves_ + leaf]; }
  double total() const { return nodes_[1]; }
  /// Sum of leaves [0, leaf).
  double prefix(std::size_t leaf) const;
  /// Leaf whose cumulative interval contains `mass`, for mass in [0, total).
  std::size_t find(double mass) const;
  /// Sum of leaves computed directly, for consistency checks.
  double leaf_sum() const;
  /// Largest |node - (left + right)| over internal nodes.
  double max_inconsistency() const;

private:
  std::size_t leaves_;
  std::vector<double> nodes_; // 1-based heap layout, leaves at [leaves_, 2*leaves_)
};

/// Proportional prioritized replay bookkeeping, one leaf per buffer slot.
/// Leaves store priority^beta1.
struct PerState {
  PerState(std::size_t capacity, double beta1);

  SumTree tree;
  double beta1;
  double max_priority = 1.0;
};

struct PerBatch {
  MiniBatch batch;
  std::vector<double> weights; // importance weights, max-normalized
  std::vector<std::size_t> slots;
};

/// Gives a freshly written slot the largest priority seen so far.
void per_on_insert(PerState &per, std::size_t slot);

/// Stratified proportional sampling of k slots. `recent` restricts the draw
/// to the most recent entries (0 means the whole buffer). Weights are
/// (n * P(i))^-beta2 divided by their batch maximum, n being the number of
/// candidate entries.
PerBatch per_sample(const ReplayBuffer &buffer, const PerState &per,
                    std::size_t k, double beta2, Rng &rng,
                    std::size_t recent = 0);

/// Unnormalized importance weights (n * P(i))^-beta2.
std::vector<double> importance_weights(std::span<const double> probabilities,
                                       std::size_t n, double beta2);

/// priority = |td| + 1e-6 for each listed slot.
void per_update_priorities(PerState &per, std::span<const std::size_t> slots,
                           std::span<const double> td_errors);

inline constexpr double per_priority_floor = 1e-6;

/// Size of the recent-experience window: max(n * eta^exponent, c_min),
/// never more than n.
std::size_t ere_window(std::size_t n, double eta, double exponent,
                       std::size_t c_min = 5000);

/// Emphasizing-recent-experience sampling: uniform over the most recent
/// ere_window(...) entries, exponent = update_index * 1000 / K.
MiniBatch ere_sample(const ReplayBuffer &buffer, std::size_t k,
                     std::size_t update_index, std::size_t updates_per_episode,
                     double eta, Rng &rng, std::size_t c_min = 5000,
                     std::vector<std::size_t> *slots = nullptr);

/// Linear interpolation from `start` to `end` as progress goes 0 -> 1.
double anneal(double start, double end, double progress);

/// Tab-separated dump, oldest first. Columns: episode_id, done, reward, rho,
/// state, action, next_state; vector fields are space-separated.
void write_snapshot(std::ostream &out, const ReplayBuffer &buffer);

} // namespace isac

#endif
