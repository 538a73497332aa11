#include "isac/replay.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <iomanip>
#include <iostream>
#include <numeric>

namespace isac {

ReplayBuffer::ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
  if (capacity == 0)
    throw ConfigError("replay buffer capacity must be positive");
}

std::size_t ReplayBuffer::push(AugTransition t) {
  if (!t.rho || !std::isfinite(*t.rho))
    throw ConfigError("replay buffer only accepts scored transitions");
  const std::size_t slot = next_;
  if (storage_.size() < capacity_)
    storage_.push_back(std::move(t));
  else
    storage_[slot] = std::move(t);
  next_ = (next_ + 1) % capacity_;
  ++pushed_;
  return slot;
}

std::size_t ReplayBuffer::slot_of(std::size_t i) const {
  if (storage_.size() < capacity_)
    return i;
  return (next_ + i) % capacity_;
}

void TempBuffer::record_step(AugTransition t) {
  t.rho.reset();
  current_.push_back(std::move(t));
}

bool TempBuffer::finalize_episode(double episodic_return) {
  if (current_.empty()) {
    std::clog << "warning: finalize_episode called on an empty episode\n";
    return false;
  }
  for (auto &t : current_)
    t.rho = episodic_return;
  episodes_.push_back(std::move(current_));
  current_.clear();
  return true;
}

std::size_t TempBuffer::size() const {
  std::size_t n = current_.size();
  for (const auto &e : episodes_)
    n += e.size();
  return n;
}

std::vector<std::size_t> TempBuffer::drain_into(ReplayBuffer &buffer) {
  std::vector<std::size_t> slots;
  for (auto &episode : episodes_)
    for (auto &t : episode)
      slots.push_back(buffer.push(std::move(t)));
  episodes_.clear();
  return slots;
}

bool flush_if_due(TempBuffer &temp, ReplayBuffer &buffer, int xi,
                  std::vector<std::size_t> *slots_written) {
  if (xi < 1)
    throw ConfigError("delay length xi must be at least 1");
  if (temp.episodes_held() < xi)
    return false;
  auto slots = temp.drain_into(buffer);
  if (slots_written)
    *slots_written = std::move(slots);
  return true;
}

std::vector<std::size_t> sample_uniform_slots(const ReplayBuffer &buffer,
                                              std::size_t k, Rng &rng) {
  if (buffer.empty())
    throw BufferUnavailable("cannot sample from an empty replay buffer");
  std::uniform_int_distribution<std::size_t> pick(0, buffer.size() - 1);
  std::vector<std::size_t> slots(k);
  for (auto &s : slots)
    s = pick(rng);
  return slots;
}

MiniBatch sample_uniform(const ReplayBuffer &buffer, std::size_t k, Rng &rng) {
  MiniBatch batch;
  batch.reserve(k);
  for (std::size_t s : sample_uniform_slots(buffer, k, rng))
    batch.push_back(buffer.at_slot(s));
  return batch;
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size())
    throw ConfigError("cosine_similarity: length mismatch");
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0 || nb == 0)
    return 1.0;
  return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

std::vector<double> rho_vector(const MiniBatch &batch) {
  std::vector<double> v;
  v.reserve(batch.size());
  for (const auto &t : batch) {
    if (!t.rho)
      throw ConfigError("transition has no episodic return score yet");
    v.push_back(*t.rho);
  }
  return v;
}

SdpResult sdp_select(const MiniBatch &b1, const MiniBatch &b2, double zeta_th,
                     Rng &rng) {
  if (b1.size() != b2.size() || b1.empty())
    throw ConfigError("sdp_select: mini-batches must be non-empty and of equal size");
  const auto v1 = rho_vector(b1);
  const auto v2 = rho_vector(b2);

  SdpResult out;
  out.zeta = cosine_similarity(v1, v2);
  if (out.zeta > zeta_th) {
    std::bernoulli_distribution coin(0.5);
    out.batch = coin(rng) ? b1 : b2;
    out.prioritized = false;
    return out;
  }

  const std::size_t k = b1.size();
  std::vector<std::size_t> order(2 * k);
  std::iota(order.begin(), order.end(), std::size_t{0});
  // A random permutation followed by a stable sort breaks rho ties uniformly.
  std::shuffle(order.begin(), order.end(), rng);
  auto rho_at = [&](std::size_t i) { return i < k ? v1[i] : v2[i - k]; };
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return rho_at(a) > rho_at(b); });
  out.batch.reserve(k);
  for (std::size_t j = 0; j < k; ++j) {
    const std::size_t i = order[j];
    out.batch.push_back(i < k ? b1[i] : b2[i - k]);
  }
  out.prioritized = true;
  return out;
}

std::size_t moo_mix_inplace(MiniBatch &batch, const AugTransition &latest,
                            Rng &rng) {
  if (batch.empty())
    throw ConfigError("moo_mix: batch must be non-empty");
  std::uniform_int_distribution<std::size_t> pick(0, batch.size() - 1);
  const std::size_t i = pick(rng);
  batch[i] = latest;
  return i;
}

MiniBatch moo_mix(MiniBatch batch, const AugTransition &latest, Rng &rng) {
  moo_mix_inplace(batch, latest, rng);
  return batch;
}

SumTree::SumTree(std::size_t leaves) {
  if (leaves == 0)
    throw ConfigError("sum tree needs at least one leaf");
  leaves_ = std::bit_ceil(leaves);
  nodes_.assign(2 * leaves_, 0.0);
}

void SumTree::set(std::size_t leaf, double value) {
  if (leaf >= leaves_)
    throw ConfigError("sum tree leaf out of range");
  if (!(value >= 0) || !std::isfinite(value))
    throw NumericalFault("sum tree priorities must be finite and non-negative");
  std::size_t i = leaves_ + leaf;
  nodes_[i] = value;
  for (i /= 2; i >= 1; i /= 2)
    nodes_[i] = nodes_[2 * i] + nodes_[2 * i + 1];
}

double SumTree::prefix(std::size_t leaf) const {
  if (leaf >= leaves_)
    return total();
  double acc = 0;
  // Walk from the leaf to the root, adding left siblings.
  for (std::size_t i = leaves_ + leaf; i > 1; i /= 2)
    if (i % 2 == 1)
      acc += nodes_[i - 1];
  return acc;
}

std::size_t SumTree::find(double mass) const {
  std::size_t i = 1;
  while (i < leaves_) {
    const double left = nodes_[2 * i];
    if (mass < left || nodes_[2 * i + 1] <= 0) {
      i = 2 * i;
    } else {
      mass -= left;
      i = 2 * i + 1;
    }
  }
  std::size_t leaf = i - leaves_;
  // Rounding can land on an empty leaf; fall back to the nearest one with mass.
  while (leaf > 0 && nodes_[leaves_ + leaf] <= 0)
    --leaf;
  return leaf;
}

double SumTree::leaf_sum() const {
  double s = 0;
  for (std::size_t i = 0; i < leaves_; ++i)
    s += nodes_[leaves_ + i];
  return s;
}

double SumTree::max_inconsistency() const {
  double worst = 0;
  for (std::size_t i = 1; i < leaves_; ++i)
    worst = std::max(worst, std::abs(nodes_[i] - (nodes_[2 * i] + nodes_[2 * i + 1])));
  return worst;
}

PerState::PerState(std::size_t capacity, double beta1_)
    : tree(capacity), beta1(beta1_) {}

void per_on_insert(PerState &per, std::size_t slot) {
  per.tree.set(slot, std::pow(per.max_priority, per.beta1));
}

std::vector<double> importance_weights(std::span<const double> probabilities,
                                       std::size_t n, double beta2) {
  std::vector<double> w;
  w.reserve(probabilities.size());
  for (double p : probabilities)
    w.push_back(std::pow(static_cast<double>(n) * p, -beta2));
  return w;
}

PerBatch per_sample(const ReplayBuffer &buffer, const PerState &per,
                    std::size_t k, double beta2, Rng &rng, std::size_t recent) {
  if (buffer.empty())
    throw BufferUnavailable("cannot sample from an empty replay buffer");
  if (per.tree.leaf_count() < buffer.capacity() &&
      per.tree.leaf_count() < buffer.size())
    throw std::logic_error("per_sample: sum tree smaller than buffer");
  const std::size_t n = buffer.size();
  const std::size_t window = (recent == 0 || recent > n) ? n : recent;

  // The window is chronological [n - window, n); map it to at most two
  // contiguous slot ranges.
  const std::size_t first = buffer.slot_of(n - window);
  const std::size_t last = buffer.slot_of(n - 1) + 1;
  struct Range {
    std::size_t begin, end;
    double offset, mass;
  };
  std::vector<Range> ranges;
  auto add_range = [&](std::size_t b, std::size_t e) {
    const double off = per.tree.prefix(b);
    ranges.push_back({b, e, off, per.tree.prefix(e) - off});
  };
  if (first < last) {
    add_range(first, last);
  } else {
    add_range(first, buffer.capacity());
    add_range(0, last);
  }
  double mass = 0;
  for (const auto &r : ranges)
    mass += r.mass;
  if (!(mass > 0))
    throw std::logic_error("per_sample: sum tree holds no priority mass");

  PerBatch out;
  out.slots.reserve(k);
  std::vector<double> probs;
  probs.reserve(k);
  const double segment = mass / static_cast<double>(k);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (std::size_t j = 0; j < k; ++j) {
    double u = segment * (static_cast<double>(j) + unit(rng));
    u = std::min(u, mass * (1.0 - 1e-12));
    std::size_t slot = ranges.back().end - 1;
    for (const auto &r : ranges) {
      if (u < r.mass) {
        slot = per.tree.find(r.offset + u);
        slot = std::clamp(slot, r.begin, r.end - 1);
        break;
      }
      u -= r.mass;
    }
    out.slots.push_back(slot);
    probs.push_back(per.tree.get(slot) / mass);
  }
  out.weights = importance_weights(probs, window, beta2);
  const double wmax = *std::max_element(out.weights.begin(), out.weights.end());
  for (auto &w : out.weights)
    w /= wmax;
  out.batch.reserve(k);
  for (std::size_t s : out.slots)
    out.batch.push_back(buffer.at_slot(s));
  return out;
}

void per_update_priorities(PerState &per, std::span<const std::size_t> slots,
                           std::span<const double> td_errors) {
  if (slots.size() != td_errors.size())
    throw ConfigError("per_update_priorities: slots and errors differ in length");
  for (std::size_t i = 0; i < slots.size(); ++i) {
    if (!std::isfinite(td_errors[i]))
      throw NumericalFault("per_update_priorities: non-finite TD error");
    const double priority = std::abs(td_errors[i]) + per_priority_floor;
    per.max_priority = std::max(per.max_priority, priority);
    per.tree.set(slots[i], std::pow(priority, per.beta1));
  }
}

std::size_t ere_window(std::size_t n, double eta, double exponent,
                       std::size_t c_min) {
  const double scaled = static_cast<double>(n) * std::pow(eta, exponent);
  const auto c = std::max(static_cast<std::size_t>(scaled), c_min);
  return std::min(c, n);
}

MiniBatch ere_sample(const ReplayBuffer &buffer, std::size_t k,
                     std::size_t update_index, std::size_t updates_per_episode,
                     double eta, Rng &rng, std::size_t c_min,
                     std::vector<std::size_t> *slots) {
  if (buffer.empty())
    throw BufferUnavailable("cannot sample from an empty replay buffer");
  if (updates_per_episode == 0)
    throw ConfigError("ere_sample: updates per episode must be positive");
  const std::size_t n = buffer.size();
  const double exponent = static_cast<double>(update_index) * 1000.0 /
                          static_cast<double>(updates_per_episode);
  const std::size_t window = ere_window(n, eta, exponent, c_min);
  std::uniform_int_distribution<std::size_t> pick(n - window, n - 1);
  MiniBatch batch;
  batch.reserve(k);
  if (slots)
    slots->clear();
  for (std::size_t j = 0; j < k; ++j) {
    const std::size_t slot = buffer.slot_of(pick(rng));
    if (slots)
      slots->push_back(slot);
    batch.push_back(buffer.at_slot(slot));
  }
  return batch;
}

double anneal(double start, double end, double progress) {
  progress = std::clamp(progress, 0.0, 1.0);
  return start + (end - start) * progress;
}

namespace {
void write_vector(std::ostream &out, const Vector &v) {
  for (Index i = 0; i < v.size(); ++i)
    out << (i ? " " : "") << v(i);
}
} // namespace

void write_snapshot(std::ostream &out, const ReplayBuffer &buffer) {
  const auto old_precision = out.precision(17);
  for (std::size_t i = 0; i < buffer.size(); ++i) {
    const auto &t = buffer[i];
    out << t.episode_id << '\t' << (t.done ? 1 : 0) << '\t' << t.reward << '\t'
        << *t.rho << '\t';
    write_vector(out, t.state);
    out << '\t';
    write_vector(out, t.action);
    out << '\t';
    write_vector(out, t.next_state);
    out << '\n';
  }
  out.precision(old_precision);
}

} // namespace isac
