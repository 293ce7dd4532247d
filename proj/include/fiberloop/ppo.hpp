#ifndef FIBERLOOP_PPO_HPP_
#define FIBERLOOP_PPO_HPP_

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "fiberloop/mlp.hpp"
#include "fiberloop/rng.hpp"

namespace fiberloop {

// Streaming per-dimension mean/variance (Welford) with a clip bound on
// normalized values. Frozen copies ship inside every checkpoint so that
// deployment normalization matches training exactly.
class RunningNorm {
 public:
  RunningNorm() = default;
  RunningNorm(int dim, double clip);

  void update(const Eigen::VectorXd& x);
  Eigen::VectorXd normalize(const Eigen::VectorXd& x) const;

  int dim() const { return static_cast<int>(mean_.size()); }
  double count() const { return count_; }
  double clip() const { return clip_; }
  const Eigen::VectorXd& mean() const { return mean_; }
  Eigen::VectorXd variance() const;  // population variance

  // Raw state access for checkpoint serialization.
  const Eigen::VectorXd& m2() const { return m2_; }
  static RunningNorm from_state(Eigen::VectorXd mean, Eigen::VectorXd m2,
                                double count, double clip);

 private:
  Eigen::VectorXd mean_;
  Eigen::VectorXd m2_;
  double count_ = 0.0;
  double clip_ = 10.0;
};

struct PpoConfig {
  double gamma = 0.99;
  double gae_lambda = 0.95;
  double clip = 0.2;
  int batch = 1024;
  int epochs_per_rollout = 10;
  double entropy_coef = 0.01;
  int n_envs = 30;
  long long total_steps = 20000000;
  double lr_init = 6e-4;
  double lr_final = 2e-4;
  int rollout_length = 512;
  // Not fixed by Table I; config-exposed.
  double value_coef = 0.5;
  double max_grad_norm = 0.5;
  double norm_clip = 10.0;
  int checkpoint_every = 50;  // updates between checkpoints

  void validate() const;  // throws InvariantViolation
};

// Flat per-env rollout storage; row index = env * length + t.
struct RolloutBuffer {
  int n_envs = 0;
  int length = 0;
  Eigen::MatrixXd obs;      // normalized observations fed to the policy
  Eigen::MatrixXd actions;  // raw Gaussian samples (pre-clip)
  Eigen::VectorXd logp;
  Eigen::VectorXd values;
  Eigen::VectorXd rewards;
  std::vector<uint8_t> dones;
  Eigen::VectorXd bootstrap;  // V(s_T) per env, used when the segment is cut

  Eigen::VectorXd advantages;
  Eigen::VectorXd returns;
  bool gae_ready = false;

  void resize(int n_envs_, int length_, int obs_dim, int act_dim);
  int rows() const { return n_envs * length; }
  int row(int env, int t) const { return env * length + t; }
};

// Standard recursive GAE per env stream; returns = advantages + values.
void compute_gae(RolloutBuffer& buf, double gamma, double lambda);

// lr_final + 1/2 (lr_init - lr_final)(1 + cos(pi step/total)), arranged so
// the endpoints are exact in floating point.
double lr_schedule(long long step, long long total, double lr_init,
                   double lr_final);

// Diagonal-Gaussian log density of x under (mean row, log_std).
Eigen::VectorXd gaussian_log_prob(const Eigen::MatrixXd& mean,
                                  const Eigen::VectorXd& log_std,
                                  const Eigen::MatrixXd& x);

// Closed-form entropy of the diagonal Gaussian policy.
double gaussian_entropy(const Eigen::VectorXd& log_std);

struct LossReport {
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double clip_fraction = 0.0;
  double approx_kl = 0.0;
  double grad_norm = 0.0;
};

// Loss and analytic gradients for one minibatch (advantages already
// normalized by the caller). Exposed so tests can difference it directly.
double ppo_loss_and_grads(const PolicyParams& params,
                          const Eigen::MatrixXd& obs,
                          const Eigen::MatrixXd& actions,
                          const Eigen::VectorXd& logp_old,
                          const Eigen::VectorXd& advantages,
                          const Eigen::VectorXd& returns,
                          const PpoConfig& cfg, PolicyGrads& grads,
                          LossReport* report = nullptr);

// epochs_per_rollout passes of shuffled minibatches with the clipped
// surrogate, value, and entropy terms. Throws NonFiniteLoss on divergence.
LossReport ppo_update(PolicyParams& params, Adam& opt,
                      const RolloutBuffer& buf, const PpoConfig& cfg,
                      double lr, Rng& rng);

}  // namespace fiberloop

#endif  // FIBERLOOP_PPO_HPP_
