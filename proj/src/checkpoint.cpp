#include "isac/agent.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace isac {

namespace {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

constexpr char magic[8] = {'I', 'S', 'A', 'C', 'C', 'K', 'P', 'T'};

void add_mlp(NamedArrays &out, const std::string &prefix, const Mlp<double> &net) {
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const std::string p = prefix + "/" + std::to_string(i);
    out[p + "/weight"] = net.layers[i].weight;
    out[p + "/bias"] = net.layers[i].bias;
  }
}

void add_grads(NamedArrays &out, const std::string &prefix,
               const MlpGradients<double> &g) {
  for (std::size_t i = 0; i < g.layers.size(); ++i) {
    const std::string p = prefix + "/" + std::to_string(i);
    out[p + "/weight"] = g.layers[i].weight;
    out[p + "/bias"] = g.layers[i].bias;
  }
}

Matrix scalar(double v) { return Matrix::Constant(1, 1, v); }

const Matrix &fetch(const NamedArrays &in, const std::string &name, Index rows,
                    Index cols) {
  auto it = in.find(name);
  if (it == in.end())
    throw ConfigError("checkpoint is missing array '" + name + "'");
  if (it->second.rows() != rows || it->second.cols() != cols)
    throw ConfigError("checkpoint array '" + name + "' has the wrong shape");
  return it->second;
}

template <typename Layers>
void restore_layers(Layers &layers, const NamedArrays &in,
                    const std::string &prefix) {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const std::string p = prefix + "/" + std::to_string(i);
    auto &l = layers[i];
    l.weight = fetch(in, p + "/weight", l.weight.rows(), l.weight.cols());
    l.bias = fetch(in, p + "/bias", l.bias.size(), 1);
  }
}

double fetch_scalar(const NamedArrays &in, const std::string &name) {
  return fetch(in, name, 1, 1)(0, 0);
}

template <typename T> void put(std::ostream &out, T v) {
  out.write(reinterpret_cast<const char *>(&v), sizeof(T));
}

template <typename T> T get(std::istream &in) {
  T v{};
  in.read(reinterpret_cast<char *>(&v), sizeof(T));
  if (!in)
    throw ConfigError("checkpoint is truncated");
  return v;
}

} // namespace

NamedArrays checkpoint_arrays(const SacAgent &a) {
  NamedArrays out;
  add_mlp(out, "policy", a.policy);
  add_mlp(out, "q1", a.q1);
  add_mlp(out, "q2", a.q2);
  add_mlp(out, "q1_target", a.q1_target);
  add_mlp(out, "q2_target", a.q2_target);
  const std::pair<const char *, const AdamState<double> *> opts[] = {
      {"policy_adam", &a.policy_opt}, {"q1_adam", &a.q1_opt}, {"q2_adam", &a.q2_opt}};
  for (const auto &[name, s] : opts) {
    add_grads(out, std::string(name) + "/m", s->m);
    add_grads(out, std::string(name) + "/v", s->v);
    out[std::string(name) + "/t"] = scalar(static_cast<double>(s->t));
  }
  out["log_alpha"] = scalar(a.log_alpha);
  out["alpha_adam/m"] = scalar(a.alpha_opt.m);
  out["alpha_adam/v"] = scalar(a.alpha_opt.v);
  out["alpha_adam/t"] = scalar(static_cast<double>(a.alpha_opt.t));
  return out;
}

void restore_arrays(SacAgent &a, const NamedArrays &in) {
  restore_layers(a.policy.layers, in, "policy");
  restore_layers(a.q1.layers, in, "q1");
  restore_layers(a.q2.layers, in, "q2");
  restore_layers(a.q1_target.layers, in, "q1_target");
  restore_layers(a.q2_target.layers, in, "q2_target");
  const std::pair<const char *, AdamState<double> *> opts[] = {
      {"policy_adam", &a.policy_opt}, {"q1_adam", &a.q1_opt}, {"q2_adam", &a.q2_opt}};
  for (const auto &[name, s] : opts) {
    restore_layers(s->m.layers, in, std::string(name) + "/m");
    restore_layers(s->v.layers, in, std::string(name) + "/v");
    s->t = static_cast<std::int64_t>(fetch_scalar(in, std::string(name) + "/t"));
  }
  a.log_alpha = fetch_scalar(in, "log_alpha");
  a.alpha_opt.m = fetch_scalar(in, "alpha_adam/m");
  a.alpha_opt.v = fetch_scalar(in, "alpha_adam/v");
  a.alpha_opt.t = static_cast<std::int64_t>(fetch_scalar(in, "alpha_adam/t"));
}

void write_container(std::ostream &out, const NamedArrays &arrays) {
  out.write(magic, sizeof magic);
  put<std::uint32_t>(out, checkpoint_version);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(arrays.size()));
  for (const auto &[name, m] : arrays) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put<std::uint64_t>(out, static_cast<std::uint64_t>(m.rows()));
    put<std::uint64_t>(out, static_cast<std::uint64_t>(m.cols()));
    out.write(reinterpret_cast<const char *>(m.data()),
              static_cast<std::streamsize>(m.size() * sizeof(double)));
  }
}

NamedArrays read_container(std::istream &in) {
  char head[8];
  in.read(head, sizeof head);
  if (!in || std::memcmp(head, magic, sizeof magic) != 0)
    throw ConfigError("not a checkpoint file (bad magic)");
  const auto version = get<std::uint32_t>(in);
  if (version != checkpoint_version)
    throw ConfigError("unsupported checkpoint version " + std::to_string(version));
  const auto count = get<std::uint32_t>(in);
  NamedArrays out;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = get<std::uint32_t>(in);
    std::string name(len, '\0');
    in.read(name.data(), len);
    const auto rows = get<std::uint64_t>(in);
    const auto cols = get<std::uint64_t>(in);
    Matrix m(static_cast<Index>(rows), static_cast<Index>(cols));
    in.read(reinterpret_cast<char *>(m.data()),
            static_cast<std::streamsize>(m.size() * sizeof(double)));
    if (!in)
      throw ConfigError("checkpoint is truncated");
    out.emplace(std::move(name), std::move(m));
  }
  return out;
}

void save_checkpoint(const std::string &path, const SacAgent &agent) {
  std::ofstream out(path, std::ios::binary);
  if (!out)
    throw ConfigError("cannot write checkpoint '" + path + "'");
  write_container(out, checkpoint_arrays(agent));
}

void load_checkpoint(const std::string &path, SacAgent &agent) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw ConfigError("cannot read checkpoint '" + path + "'");
  restore_arrays(agent, read_container(in));
}

} // namespace isac
