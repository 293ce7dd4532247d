#include "fiberloop/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>

#include "fiberloop/errors.hpp"

namespace fiberloop {

namespace {

constexpr char kMagic[8] = {'F', 'L', 'C', 'K', 'P', 'T', '0', '1'};

void write_u32(std::ofstream& f, uint32_t v) {
  f.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

void write_i64(std::ofstream& f, int64_t v) {
  f.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

void write_f64(std::ofstream& f, double v) {
  f.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

void write_doubles(std::ofstream& f, const double* p, std::size_t n) {
  f.write(reinterpret_cast<const char*>(p), n * sizeof(double));
}

uint32_t read_u32(std::ifstream& f) {
  uint32_t v = 0;
  f.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}

int64_t read_i64(std::ifstream& f) {
  int64_t v = 0;
  f.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}

double read_f64(std::ifstream& f) {
  double v = 0;
  f.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}

void read_doubles(std::ifstream& f, double* p, std::size_t n) {
  f.read(reinterpret_cast<char*>(p), n * sizeof(double));
}

void write_mlp(std::ofstream& f, const Mlp& net) {
  write_u32(f, static_cast<uint32_t>(net.layers.size()));
  for (const auto& layer : net.layers) {
    write_u32(f, static_cast<uint32_t>(layer.w.rows()));
    write_u32(f, static_cast<uint32_t>(layer.w.cols()));
    write_doubles(f, layer.w.data(), layer.w.size());
    write_doubles(f, layer.b.data(), layer.b.size());
  }
}

Mlp read_mlp(std::ifstream& f) {
  Mlp net;
  const uint32_t n_layers = read_u32(f);
  if (n_layers == 0 || n_layers > 64) {
    throw ParseError("checkpoint has implausible layer count");
  }
  for (uint32_t i = 0; i < n_layers; ++i) {
    const uint32_t rows = read_u32(f);
    const uint32_t cols = read_u32(f);
    if (rows == 0 || cols == 0 || rows > 65536 || cols > 65536) {
      throw ParseError("checkpoint layer shape is implausible");
    }
    Mlp::Layer layer;
    layer.w.resize(rows, cols);
    layer.b.resize(rows);
    read_doubles(f, layer.w.data(), layer.w.size());
    read_doubles(f, layer.b.data(), layer.b.size());
    net.layers.push_back(std::move(layer));
  }
  return net;
}

}  // namespace

void save_checkpoint(const std::string& path, const PolicyCheckpoint& ckpt) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path + " for writing");

  f.write(kMagic, sizeof(kMagic));
  write_i64(f, ckpt.global_step);
  write_mlp(f, ckpt.params.actor);
  write_mlp(f, ckpt.params.critic);
  write_u32(f, static_cast<uint32_t>(ckpt.params.log_std.size()));
  write_doubles(f, ckpt.params.log_std.data(), ckpt.params.log_std.size());

  write_u32(f, static_cast<uint32_t>(ckpt.obs_norm.dim()));
  write_f64(f, ckpt.obs_norm.count());
  write_f64(f, ckpt.obs_norm.clip());
  write_doubles(f, ckpt.obs_norm.mean().data(), ckpt.obs_norm.dim());
  write_doubles(f, ckpt.obs_norm.m2().data(), ckpt.obs_norm.dim());
  if (!f.good()) throw IoError("write failure on " + path);
}

PolicyCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path);

  char magic[sizeof(kMagic)] = {};
  f.read(magic, sizeof(magic));
  if (!f.good() || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw VersionMismatch("not a fiberloop checkpoint (bad magic): " + path);
  }

  PolicyCheckpoint ckpt;
  ckpt.global_step = read_i64(f);
  ckpt.params.actor = read_mlp(f);
  ckpt.params.critic = read_mlp(f);
  const uint32_t act_dim = read_u32(f);
  ckpt.params.log_std.resize(act_dim);
  read_doubles(f, ckpt.params.log_std.data(), act_dim);

  const uint32_t norm_dim = read_u32(f);
  const double count = read_f64(f);
  const double clip = read_f64(f);
  Eigen::VectorXd mean(norm_dim), m2(norm_dim);
  read_doubles(f, mean.data(), norm_dim);
  read_doubles(f, m2.data(), norm_dim);
  ckpt.obs_norm =
      RunningNorm::from_state(std::move(mean), std::move(m2), count, clip);

  if (!f.good()) throw IoError("checkpoint truncated: " + path);
  if (static_cast<int>(norm_dim) != ckpt.params.obs_dim()) {
    throw InvariantViolation(
        "checkpoint normalization dimension disagrees with the policy input");
  }
  return ckpt;
}

}  // namespace fiberloop
