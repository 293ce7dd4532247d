#include "fiberloop/mlp.hpp"

#include <cmath>

#include "fiberloop/errors.hpp"

namespace fiberloop {

namespace {

// Orthogonal matrix via Householder QR of a Gaussian draw, sign-fixed by the
// R diagonal.
Eigen::MatrixXd orthogonal(int rows, int cols, Rng& rng, double gain) {
  const int big = std::max(rows, cols);
  const int small = std::min(rows, cols);
  Eigen::MatrixXd a(big, small);
  for (int i = 0; i < big; ++i) {
    for (int j = 0; j < small; ++j) a(i, j) = rng.normal();
  }
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
  Eigen::MatrixXd q =
      qr.householderQ() * Eigen::MatrixXd::Identity(big, small);
  const Eigen::MatrixXd r = qr.matrixQR().topRows(small);
  for (int j = 0; j < small; ++j) {
    if (r(j, j) < 0) q.col(j) = -q.col(j);
  }
  Eigen::MatrixXd w = rows >= cols ? q : Eigen::MatrixXd(q.transpose());
  return gain * w;
}

}  // namespace

Mlp Mlp::make(const std::vector<int>& sizes, Rng& rng, double head_gain) {
  if (sizes.size() < 2) {
    throw InvariantViolation("mlp needs at least input and output sizes");
  }
  Mlp net;
  for (std::size_t i = 0; i + 1 < sizes.size(); ++i) {
    const bool last = i + 2 == sizes.size();
    Layer layer;
    layer.w = orthogonal(sizes[i + 1], sizes[i], rng,
                         last ? head_gain : std::sqrt(2.0));
    layer.b = Eigen::VectorXd::Zero(sizes[i + 1]);
    net.layers.push_back(std::move(layer));
  }
  return net;
}

Eigen::MatrixXd Mlp::forward(const Eigen::MatrixXd& x,
                             std::vector<Eigen::MatrixXd>* cache) const {
  if (x.cols() != layers.front().w.cols()) {
    throw ShapeMismatch("mlp input has " + std::to_string(x.cols()) +
                        " columns, expected " +
                        std::to_string(layers.front().w.cols()));
  }
  if (cache != nullptr) {
    cache->clear();
    cache->push_back(x);
  }
  Eigen::MatrixXd h = x;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    Eigen::MatrixXd z =
        (h * layers[i].w.transpose()).rowwise() + layers[i].b.transpose();
    if (i + 1 < layers.size()) {
      h = z.cwiseMax(0.0);
      if (cache != nullptr) cache->push_back(h);
    } else {
      h = std::move(z);
    }
  }
  return h;
}

void Mlp::backward(const std::vector<Eigen::MatrixXd>& cache,
                   const Eigen::MatrixXd& dout, Mlp& grads) const {
  Eigen::MatrixXd dz = dout;
  for (int i = static_cast<int>(layers.size()) - 1; i >= 0; --i) {
    const Eigen::MatrixXd& input = cache[i];
    grads.layers[i].w.noalias() += dz.transpose() * input;
    grads.layers[i].b += dz.colwise().sum().transpose();
    if (i > 0) {
      Eigen::MatrixXd dh = dz * layers[i].w;
      // ReLU mask from the cached post-activation.
      dz = ((cache[i].array() > 0.0).cast<double>() * dh.array()).matrix();
    }
  }
}

Mlp Mlp::zeros_like() const {
  Mlp z;
  for (const Layer& l : layers) {
    Layer zl;
    zl.w = Eigen::MatrixXd::Zero(l.w.rows(), l.w.cols());
    zl.b = Eigen::VectorXd::Zero(l.b.size());
    z.layers.push_back(std::move(zl));
  }
  return z;
}

void Mlp::set_zero() {
  for (Layer& l : layers) {
    l.w.setZero();
    l.b.setZero();
  }
}

double Mlp::squared_norm() const {
  double s = 0.0;
  for (const Layer& l : layers) {
    s += l.w.squaredNorm() + l.b.squaredNorm();
  }
  return s;
}

void Mlp::scale(double s) {
  for (Layer& l : layers) {
    l.w *= s;
    l.b *= s;
  }
}

PolicyParams PolicyParams::make(int obs_dim, const std::vector<int>& hidden,
                                int act_dim, Rng& rng) {
  std::vector<int> actor_sizes{obs_dim};
  actor_sizes.insert(actor_sizes.end(), hidden.begin(), hidden.end());
  actor_sizes.push_back(act_dim);
  std::vector<int> critic_sizes{obs_dim};
  critic_sizes.insert(critic_sizes.end(), hidden.begin(), hidden.end());
  critic_sizes.push_back(1);

  PolicyParams p;
  p.actor = Mlp::make(actor_sizes, rng, 0.01);
  p.critic = Mlp::make(critic_sizes, rng, 1.0);
  p.log_std = Eigen::VectorXd::Zero(act_dim);
  return p;
}

PolicyGrads PolicyGrads::zeros_like(const PolicyParams& p) {
  PolicyGrads g;
  g.actor = p.actor.zeros_like();
  g.critic = p.critic.zeros_like();
  g.log_std = Eigen::VectorXd::Zero(p.log_std.size());
  return g;
}

void PolicyGrads::set_zero() {
  actor.set_zero();
  critic.set_zero();
  log_std.setZero();
}

double PolicyGrads::global_norm() const {
  return std::sqrt(actor.squared_norm() + critic.squared_norm() +
                   log_std.squaredNorm());
}

void PolicyGrads::clip_global_norm(double max_norm) {
  const double n = global_norm();
  if (n > max_norm && n > 0.0) {
    const double s = max_norm / n;
    actor.scale(s);
    critic.scale(s);
    log_std *= s;
  }
}

Adam::Adam(const PolicyParams& p)
    : m_(PolicyGrads::zeros_like(p)), v_(PolicyGrads::zeros_like(p)) {}

namespace {

void adam_tensor(Eigen::MatrixXd& p, const Eigen::MatrixXd& g,
                 Eigen::MatrixXd& m, Eigen::MatrixXd& v, double lr, double bc1,
                 double bc2) {
  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
  m = kBeta1 * m + (1.0 - kBeta1) * g;
  v = kBeta2 * v + (1.0 - kBeta2) * g.cwiseProduct(g);
  const Eigen::ArrayXXd mhat = m.array() / bc1;
  const Eigen::ArrayXXd vhat = v.array() / bc2;
  p.array() -= lr * mhat / (vhat.sqrt() + kEps);
}

void adam_vector(Eigen::VectorXd& p, const Eigen::VectorXd& g,
                 Eigen::VectorXd& m, Eigen::VectorXd& v, double lr, double bc1,
                 double bc2) {
  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
  m = kBeta1 * m + (1.0 - kBeta1) * g;
  v = kBeta2 * v + (1.0 - kBeta2) * g.cwiseProduct(g);
  const Eigen::ArrayXd mhat = m.array() / bc1;
  const Eigen::ArrayXd vhat = v.array() / bc2;
  p.array() -= lr * mhat / (vhat.sqrt() + kEps);
}

}  // namespace

void Adam::step(PolicyParams& p, const PolicyGrads& g, double lr) {
  t_ += 1;
  const double bc1 = 1.0 - std::pow(0.9, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(0.999, static_cast<double>(t_));
  for (std::size_t i = 0; i < p.actor.layers.size(); ++i) {
    adam_tensor(p.actor.layers[i].w, g.actor.layers[i].w, m_.actor.layers[i].w,
                v_.actor.layers[i].w, lr, bc1, bc2);
    adam_vector(p.actor.layers[i].b, g.actor.layers[i].b, m_.actor.layers[i].b,
                v_.actor.layers[i].b, lr, bc1, bc2);
  }
  for (std::size_t i = 0; i < p.critic.layers.size(); ++i) {
    adam_tensor(p.critic.layers[i].w, g.critic.layers[i].w,
                m_.critic.layers[i].w, v_.critic.layers[i].w, lr, bc1, bc2);
    adam_vector(p.critic.layers[i].b, g.critic.layers[i].b,
                m_.critic.layers[i].b, v_.critic.layers[i].b, lr, bc1, bc2);
  }
  adam_vector(p.log_std, g.log_std, m_.log_std, v_.log_std, lr, bc1, bc2);
}

PolicyEval policy_forward(const PolicyParams& params,
                          const Eigen::VectorXd& obs_normalized) {
  if (obs_normalized.size() != params.obs_dim()) {
    throw ShapeMismatch("observation has dimension " +
                        std::to_string(obs_normalized.size()) + ", expected " +
                        std::to_string(params.obs_dim()));
  }
  const Eigen::MatrixXd x = obs_normalized.transpose();
  PolicyEval out;
  out.action_mean = params.actor.forward(x).row(0).transpose();
  out.log_std = params.log_std;
  out.value = params.critic.forward(x)(0, 0);
  return out;
}

}  // namespace fiberloop
