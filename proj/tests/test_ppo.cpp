#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>

#include "fiberloop/checkpoint.hpp"
#include "fiberloop/errors.hpp"
#include "fiberloop/mlp.hpp"
#include "fiberloop/ppo.hpp"

using namespace fiberloop;

namespace {

// Brute-force GAE: A_t = sum_k (gamma*lambda)^k delta_{t+k}, cutting the sum
// at terminal transitions.
void gae_oracle(const RolloutBuffer& buf, double gamma, double lambda,
                Eigen::VectorXd& adv) {
  adv.resize(buf.rows());
  for (int e = 0; e < buf.n_envs; ++e) {
    for (int t = 0; t < buf.length; ++t) {
      double acc = 0.0;
      double weight = 1.0;
      for (int k = t; k < buf.length; ++k) {
        const int i = buf.row(e, k);
        const double nonterminal = buf.dones[i] ? 0.0 : 1.0;
        const double next_value = k + 1 < buf.length
                                      ? buf.values[buf.row(e, k + 1)]
                                      : buf.bootstrap[e];
        const double delta = buf.rewards[i] +
                             gamma * next_value * nonterminal - buf.values[i];
        acc += weight * delta;
        if (buf.dones[i]) break;
        weight *= gamma * lambda;
      }
      adv[buf.row(e, t)] = acc;
    }
  }
}

RolloutBuffer random_buffer(Rng& rng, int n_envs, int length, int obs_dim,
                            int act_dim, double done_prob) {
  RolloutBuffer buf;
  buf.resize(n_envs, length, obs_dim, act_dim);
  for (int i = 0; i < buf.rows(); ++i) {
    for (int c = 0; c < obs_dim; ++c) buf.obs(i, c) = rng.uniform(-2, 2);
    for (int c = 0; c < act_dim; ++c) buf.actions(i, c) = rng.uniform(-1, 1);
    buf.logp[i] = rng.uniform(-4, 0);
    buf.values[i] = rng.uniform(-2, 2);
    buf.rewards[i] = rng.uniform(-1, 1);
    buf.dones[i] = rng.uniform() < done_prob ? 1 : 0;
  }
  for (int e = 0; e < n_envs; ++e) buf.bootstrap[e] = rng.uniform(-2, 2);
  return buf;
}

struct FlatParams {
  std::vector<double*> slots;
  explicit FlatParams(PolicyParams& p) {
    for (auto& l : p.actor.layers) {
      for (int i = 0; i < l.w.size(); ++i) slots.push_back(l.w.data() + i);
      for (int i = 0; i < l.b.size(); ++i) slots.push_back(l.b.data() + i);
    }
    for (auto& l : p.critic.layers) {
      for (int i = 0; i < l.w.size(); ++i) slots.push_back(l.w.data() + i);
      for (int i = 0; i < l.b.size(); ++i) slots.push_back(l.b.data() + i);
    }
    for (int i = 0; i < p.log_std.size(); ++i) {
      slots.push_back(p.log_std.data() + i);
    }
  }
};

std::vector<double> flatten_grads(const PolicyGrads& g) {
  std::vector<double> out;
  for (auto& l : g.actor.layers) {
    for (int i = 0; i < l.w.size(); ++i) out.push_back(l.w.data()[i]);
    for (int i = 0; i < l.b.size(); ++i) out.push_back(l.b.data()[i]);
  }
  for (auto& l : g.critic.layers) {
    for (int i = 0; i < l.w.size(); ++i) out.push_back(l.w.data()[i]);
    for (int i = 0; i < l.b.size(); ++i) out.push_back(l.b.data()[i]);
  }
  for (int i = 0; i < g.log_std.size(); ++i) out.push_back(g.log_std[i]);
  return out;
}

}  // namespace

TEST_CASE("running norm matches two-pass statistics") {
  Rng rng(stream_seed(1, "norm"));
  const int dim = 7;
  RunningNorm norm(dim, 10.0);
  std::vector<Eigen::VectorXd> stream;
  for (int i = 0; i < 500; ++i) {
    Eigen::VectorXd x(dim);
    for (int c = 0; c < dim; ++c) x[c] = rng.uniform(-5, 5) + 3.0 * c;
    stream.push_back(x);
    norm.update(x);
  }
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(dim);
  for (const auto& x : stream) mean += x;
  mean /= stream.size();
  Eigen::VectorXd var = Eigen::VectorXd::Zero(dim);
  for (const auto& x : stream) var += (x - mean).cwiseProduct(x - mean);
  var /= stream.size();

  for (int c = 0; c < dim; ++c) {
    CHECK(std::abs(norm.mean()[c] - mean[c]) <=
          1e-9 * std::max(1.0, std::abs(mean[c])));
    CHECK(std::abs(norm.variance()[c] - var[c]) <=
          1e-9 * std::max(1.0, std::abs(var[c])));
  }
}

TEST_CASE("running norm of a constant stream yields zeros") {
  RunningNorm norm(3, 10.0);
  Eigen::VectorXd x(3);
  x << 4.0, -1.5, 0.25;
  for (int i = 0; i < 50; ++i) norm.update(x);
  const Eigen::VectorXd z = norm.normalize(x);
  for (int c = 0; c < 3; ++c) CHECK(z[c] == 0.0);
}

TEST_CASE("running norm clips extreme values") {
  RunningNorm norm(1, 5.0);
  Eigen::VectorXd x(1);
  for (int i = 0; i < 100; ++i) {
    x[0] = (i % 2 == 0) ? 1.0 : -1.0;
    norm.update(x);
  }
  x[0] = 1e9;
  CHECK(norm.normalize(x)[0] == 5.0);
  x[0] = -1e9;
  CHECK(norm.normalize(x)[0] == -5.0);
}

TEST_CASE("gae: telescoping with gamma=1, lambda=1 on a terminal episode") {
  RolloutBuffer buf;
  buf.resize(1, 3, 1, 1);
  buf.rewards << 1.0, -2.0, 0.5;
  buf.values << 0.3, 0.1, -0.2;
  buf.dones = {0, 0, 1};
  buf.bootstrap[0] = 99.0;  // must be ignored past the terminal
  compute_gae(buf, 1.0, 1.0);
  CHECK(buf.advantages[0] ==
        doctest::Approx(1.0 - 2.0 + 0.5 - 0.3).epsilon(1e-12));
}

TEST_CASE("gae: lambda=0 reduces to the one-step TD residual") {
  Rng rng(stream_seed(2, "gae0"));
  RolloutBuffer buf = random_buffer(rng, 2, 6, 1, 1, 0.2);
  const double gamma = 0.97;
  compute_gae(buf, gamma, 0.0);
  for (int e = 0; e < buf.n_envs; ++e) {
    for (int t = 0; t < buf.length; ++t) {
      const int i = buf.row(e, t);
      const double nonterminal = buf.dones[i] ? 0.0 : 1.0;
      const double nv = t + 1 < buf.length ? buf.values[buf.row(e, t + 1)]
                                           : buf.bootstrap[e];
      const double delta =
          buf.rewards[i] + gamma * nv * nonterminal - buf.values[i];
      CHECK(std::abs(buf.advantages[i] - delta) <= 1e-12);
    }
  }
}

TEST_CASE("gae: brute-force oracle on random trajectories and parameters") {
  Rng rng(stream_seed(3, "gae-oracle"));
  for (int trial = 0; trial < 50; ++trial) {
    RolloutBuffer buf = random_buffer(rng, 3, 5, 1, 1, 0.25);
    const double gamma = rng.uniform(0, 1);
    const double lambda = rng.uniform(0, 1);
    compute_gae(buf, gamma, lambda);
    Eigen::VectorXd expect;
    gae_oracle(buf, gamma, lambda, expect);
    for (int i = 0; i < buf.rows(); ++i) {
      CHECK(std::abs(buf.advantages[i] - expect[i]) <= 1e-10);
      CHECK(std::abs(buf.returns[i] - (expect[i] + buf.values[i])) <= 1e-10);
    }
  }
}

TEST_CASE("lr_schedule endpoints exact, midpoint at the mean") {
  CHECK(lr_schedule(0, 1000, 6e-4, 2e-4) == 6e-4);
  CHECK(lr_schedule(1000, 1000, 6e-4, 2e-4) == 2e-4);
  CHECK(lr_schedule(500, 1000, 6e-4, 2e-4) ==
        doctest::Approx(4e-4).epsilon(1e-12));
  // Monotone non-increasing along the decay.
  double prev = 1.0;
  for (int s = 0; s <= 100; ++s) {
    const double lr = lr_schedule(s, 100, 6e-4, 2e-4);
    CHECK(lr <= prev + 1e-18);
    prev = lr;
  }
}

TEST_CASE("forward: zero weights give zero outputs; input independence") {
  Rng rng(stream_seed(4, "fwd"));
  PolicyParams p = PolicyParams::make(52, {8}, 4, rng);
  for (auto& l : p.actor.layers) {
    l.w.setZero();
    l.b.setZero();
  }
  for (auto& l : p.critic.layers) {
    l.w.setZero();
    l.b.setZero();
  }
  Eigen::VectorXd obs = Eigen::VectorXd::Constant(52, 0.7);
  PolicyEval out = policy_forward(p, obs);
  for (int i = 0; i < 4; ++i) CHECK(out.action_mean[i] == 0.0);
  CHECK(out.value == 0.0);

  // Doubling first-layer weights with zero input leaves the output alone.
  PolicyParams q = PolicyParams::make(52, {8}, 4, rng);
  Eigen::VectorXd zero = Eigen::VectorXd::Zero(52);
  PolicyEval before = policy_forward(q, zero);
  q.actor.layers[0].w *= 2.0;
  PolicyEval after = policy_forward(q, zero);
  for (int i = 0; i < 4; ++i) {
    CHECK(after.action_mean[i] == before.action_mean[i]);
  }

  // Finite outputs under fuzz.
  for (int t = 0; t < 10000; ++t) {
    Eigen::VectorXd x(52);
    for (int i = 0; i < 52; ++i) x[i] = rng.uniform(-50, 50);
    PolicyEval e = policy_forward(q, x);
    for (int i = 0; i < 4; ++i) CHECK(std::isfinite(e.action_mean[i]));
    CHECK(std::isfinite(e.value));
  }

  Eigen::VectorXd bad(7);
  bad.setZero();
  CHECK_THROWS_AS(policy_forward(q, bad), ShapeMismatch);
}

TEST_CASE("gaussian entropy matches the closed form") {
  Rng rng(stream_seed(5, "ent"));
  for (int t = 0; t < 20; ++t) {
    Eigen::VectorXd ls(4);
    for (int i = 0; i < 4; ++i) ls[i] = rng.uniform(-2, 1);
    double expect = 0.0;
    for (int i = 0; i < 4; ++i) {
      expect += ls[i] + 0.5 * std::log(2.0 * M_PI * M_E);
    }
    CHECK(std::abs(gaussian_entropy(ls) - expect) <= 1e-12);
  }
}

TEST_CASE("ppo gradients match central finite differences") {
  Rng rng(stream_seed(6, "fd"));
  PolicyParams p = PolicyParams::make(52, {8}, 4, rng);
  // Make log_std non-trivial so its gradient path is exercised.
  for (int i = 0; i < 4; ++i) p.log_std[i] = rng.uniform(-0.8, 0.2);

  const int b = 3;
  Eigen::MatrixXd obs(b, 52), act(b, 4);
  for (int i = 0; i < b; ++i) {
    for (int c = 0; c < 52; ++c) obs(i, c) = rng.uniform(-1, 1);
    for (int c = 0; c < 4; ++c) act(i, c) = rng.uniform(-1, 1);
  }
  // Old log-probs offset from the current ones so ratios straddle the clip
  // boundary in both directions.
  Eigen::VectorXd logp_old =
      gaussian_log_prob(p.actor.forward(obs), p.log_std, act);
  logp_old[0] += 0.4;
  logp_old[1] -= 0.4;
  Eigen::VectorXd adv(b), ret(b);
  adv << 1.3, -0.7, 0.2;
  ret << 0.5, -0.1, 0.9;

  PpoConfig cfg;
  cfg.clip = 0.2;
  cfg.value_coef = 0.5;
  cfg.entropy_coef = 0.01;

  PolicyGrads grads = PolicyGrads::zeros_like(p);
  ppo_loss_and_grads(p, obs, act, logp_old, adv, ret, cfg, grads);
  const std::vector<double> analytic = flatten_grads(grads);

  FlatParams flat(p);
  REQUIRE(flat.slots.size() == analytic.size());
  const double h = 1e-6;
  double max_rel = 0.0;
  PolicyGrads scratch = PolicyGrads::zeros_like(p);
  for (std::size_t k = 0; k < flat.slots.size(); ++k) {
    const double saved = *flat.slots[k];
    *flat.slots[k] = saved + h;
    scratch.set_zero();
    const double lp =
        ppo_loss_and_grads(p, obs, act, logp_old, adv, ret, cfg, scratch);
    *flat.slots[k] = saved - h;
    scratch.set_zero();
    const double lm =
        ppo_loss_and_grads(p, obs, act, logp_old, adv, ret, cfg, scratch);
    *flat.slots[k] = saved;
    const double fd = (lp - lm) / (2.0 * h);
    // The 1e-4 floor keeps pure FD roundoff on (near-)zero gradients, e.g.
    // weights into ReLU units dead for the whole batch, from registering as
    // relative error.
    const double rel = std::abs(fd - analytic[k]) /
                       std::max({std::abs(fd), std::abs(analytic[k]), 1e-4});
    max_rel = std::max(max_rel, rel);
  }
  CHECK(max_rel < 1e-5);
}

TEST_CASE("ppo update: ratio 1 on the first minibatch means zero clipping") {
  Rng rng(stream_seed(7, "ratio1"));
  PolicyParams p = PolicyParams::make(6, {8}, 2, rng);

  const int b = 16;
  Eigen::MatrixXd obs(b, 6), act(b, 2);
  for (int i = 0; i < b; ++i) {
    for (int c = 0; c < 6; ++c) obs(i, c) = rng.uniform(-1, 1);
    for (int c = 0; c < 2; ++c) act(i, c) = rng.uniform(-1, 1);
  }
  const Eigen::VectorXd logp_old =
      gaussian_log_prob(p.actor.forward(obs), p.log_std, act);
  Eigen::VectorXd adv = Eigen::VectorXd::LinSpaced(b, -1, 1);
  Eigen::VectorXd ret = Eigen::VectorXd::Zero(b);

  PpoConfig cfg;
  PolicyGrads grads = PolicyGrads::zeros_like(p);
  LossReport report;
  ppo_loss_and_grads(p, obs, act, logp_old, adv, ret, cfg, grads, &report);
  CHECK(report.clip_fraction == 0.0);
  CHECK(std::abs(report.approx_kl) < 1e-12);
  // Unclipped and clipped surrogate coincide at ratio 1: loss = -mean(adv).
  CHECK(report.policy_loss == doctest::Approx(-adv.mean()).epsilon(1e-12));
}

TEST_CASE("per-minibatch advantage normalization is exact") {
  // Mirrors the normalization arithmetic used inside ppo_update.
  Rng rng(stream_seed(8, "advn"));
  const int b = 256;
  Eigen::VectorXd adv(b);
  for (int i = 0; i < b; ++i) adv[i] = rng.uniform(-10, 10) + 3.0;
  const double mean = adv.mean();
  const double sd =
      std::sqrt((adv.array() - mean).square().sum() / (b - 1));
  Eigen::VectorXd n = ((adv.array() - mean) / std::max(sd, 1e-8)).matrix();
  CHECK(std::abs(n.mean()) < 1e-12);
  const double nsd = std::sqrt((n.array() - n.mean()).square().sum() / (b - 1));
  CHECK(std::abs(nsd - 1.0) < 1e-9);
}

TEST_CASE("ppo_update runs and is deterministic given the rng stream") {
  Rng init_rng(stream_seed(9, "upd"));
  PolicyParams p1 = PolicyParams::make(10, {16, 8}, 3, init_rng);
  PolicyParams p2 = p1;

  PpoConfig cfg;
  cfg.batch = 32;
  cfg.epochs_per_rollout = 3;
  cfg.n_envs = 2;
  cfg.rollout_length = 32;

  Rng data_rng(stream_seed(10, "data"));
  RolloutBuffer buf = random_buffer(data_rng, 2, 32, 10, 3, 0.1);
  compute_gae(buf, cfg.gamma, cfg.gae_lambda);

  Adam opt1(p1), opt2(p2);
  Rng r1(42), r2(42);
  LossReport a = ppo_update(p1, opt1, buf, cfg, 3e-4, r1);
  LossReport b = ppo_update(p2, opt2, buf, cfg, 3e-4, r2);
  CHECK(a.policy_loss == b.policy_loss);
  CHECK(a.value_loss == b.value_loss);
  for (std::size_t i = 0; i < p1.actor.layers.size(); ++i) {
    CHECK((p1.actor.layers[i].w - p2.actor.layers[i].w).norm() == 0.0);
  }
  CHECK(std::isfinite(a.grad_norm));
}

TEST_CASE("checkpoint round trip preserves forward outputs exactly") {
  Rng rng(stream_seed(11, "ckpt"));
  PolicyParams p = PolicyParams::make(52, {128, 128, 64}, 4, rng);
  for (int i = 0; i < 4; ++i) p.log_std[i] = rng.uniform(-1, 0);
  RunningNorm norm(52, 10.0);
  for (int i = 0; i < 200; ++i) {
    Eigen::VectorXd x(52);
    for (int c = 0; c < 52; ++c) x[c] = rng.uniform(-3, 3) + 0.1 * c;
    norm.update(x);
  }

  PolicyCheckpoint ckpt;
  ckpt.params = p;
  ckpt.obs_norm = norm;
  ckpt.global_step = 123456789LL;
  const std::string path = "/tmp/fiberloop_test_ckpt.bin";
  save_checkpoint(path, ckpt);
  PolicyCheckpoint back = load_checkpoint(path);
  CHECK(back.global_step == ckpt.global_step);

  for (int t = 0; t < 100; ++t) {
    Eigen::VectorXd x(52);
    for (int c = 0; c < 52; ++c) x[c] = rng.uniform(-5, 5);
    const Eigen::VectorXd n1 = norm.normalize(x);
    const Eigen::VectorXd n2 = back.obs_norm.normalize(x);
    for (int c = 0; c < 52; ++c) CHECK(n1[c] == n2[c]);
    PolicyEval e1 = policy_forward(p, n1);
    PolicyEval e2 = policy_forward(back.params, n2);
    for (int i = 0; i < 4; ++i) {
      CHECK(e1.action_mean[i] == e2.action_mean[i]);
    }
    CHECK(e1.value == e2.value);
  }
  std::remove(path.c_str());

  // Truncated or foreign files are rejected.
  const std::string bad = "/tmp/fiberloop_test_ckpt_bad.bin";
  {
    std::ofstream f(bad, std::ios::binary);
    f << "definitely not a checkpoint";
  }
  CHECK_THROWS_AS(load_checkpoint(bad), VersionMismatch);
  std::remove(bad.c_str());
}
