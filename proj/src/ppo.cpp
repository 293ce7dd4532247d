#include "fiberloop/ppo.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "fiberloop/errors.hpp"

namespace fiberloop {

namespace {
constexpr double kNormEps = 1e-8;
constexpr double kLog2Pi = 1.8378770664093454836;  // log(2*pi)
}  // namespace

RunningNorm::RunningNorm(int dim, double clip)
    : mean_(Eigen::VectorXd::Zero(dim)),
      m2_(Eigen::VectorXd::Zero(dim)),
      clip_(clip) {}

void RunningNorm::update(const Eigen::VectorXd& x) {
  if (x.size() != mean_.size()) {
    throw ShapeMismatch("running-norm update dimension mismatch");
  }
  count_ += 1.0;
  const Eigen::VectorXd delta = x - mean_;
  mean_ += delta / count_;
  m2_ += delta.cwiseProduct(x - mean_);
}

Eigen::VectorXd RunningNorm::variance() const {
  if (count_ < 1.0) return Eigen::VectorXd::Zero(mean_.size());
  return m2_ / count_;
}

Eigen::VectorXd RunningNorm::normalize(const Eigen::VectorXd& x) const {
  if (count_ < 1.0) return x;
  const Eigen::ArrayXd sd = (variance().array() + kNormEps).sqrt();
  Eigen::ArrayXd z = (x.array() - mean_.array()) / sd;
  return z.min(clip_).max(-clip_).matrix();
}

RunningNorm RunningNorm::from_state(Eigen::VectorXd mean, Eigen::VectorXd m2,
                                    double count, double clip) {
  RunningNorm n;
  n.mean_ = std::move(mean);
  n.m2_ = std::move(m2);
  n.count_ = count;
  n.clip_ = clip;
  return n;
}

void PpoConfig::validate() const {
  std::vector<std::string> bad;
  if (!(gamma > 0.0) || gamma > 1.0) bad.push_back("gamma must be in (0, 1]");
  if (gae_lambda < 0.0 || gae_lambda > 1.0) {
    bad.push_back("gae_lambda must be in [0, 1]");
  }
  if (!(clip > 0.0)) bad.push_back("clip must be > 0");
  if (batch < 1) bad.push_back("batch must be >= 1");
  if (epochs_per_rollout < 1) bad.push_back("epochs_per_rollout must be >= 1");
  if (entropy_coef < 0.0) bad.push_back("entropy_coef must be >= 0");
  if (n_envs < 1) bad.push_back("n_envs must be >= 1");
  if (total_steps < 1) bad.push_back("total_steps must be >= 1");
  if (!(lr_init > 0.0) || !(lr_final > 0.0)) {
    bad.push_back("learning rates must be > 0");
  }
  if (rollout_length < 1) bad.push_back("rollout_length must be >= 1");
  if (n_envs * rollout_length < batch) {
    bad.push_back("rollout (n_envs * rollout_length) smaller than batch");
  }
  if (!(value_coef >= 0.0)) bad.push_back("value_coef must be >= 0");
  if (!(max_grad_norm > 0.0)) bad.push_back("max_grad_norm must be > 0");
  if (!(norm_clip > 0.0)) bad.push_back("norm_clip must be > 0");
  if (checkpoint_every < 1) bad.push_back("checkpoint_every must be >= 1");
  if (!bad.empty()) {
    std::string msg = "invalid PpoConfig:";
    for (const auto& b : bad) msg += " " + b + ";";
    throw InvariantViolation(msg);
  }
}

void RolloutBuffer::resize(int n_envs_, int length_, int obs_dim,
                           int act_dim) {
  n_envs = n_envs_;
  length = length_;
  obs.resize(rows(), obs_dim);
  actions.resize(rows(), act_dim);
  logp.resize(rows());
  values.resize(rows());
  rewards.resize(rows());
  dones.assign(rows(), 0);
  bootstrap = Eigen::VectorXd::Zero(n_envs);
  advantages.resize(rows());
  returns.resize(rows());
  gae_ready = false;
}

void compute_gae(RolloutBuffer& buf, double gamma, double lambda) {
  for (int e = 0; e < buf.n_envs; ++e) {
    double acc = 0.0;
    for (int t = buf.length - 1; t >= 0; --t) {
      const int i = buf.row(e, t);
      const double nonterminal = buf.dones[i] ? 0.0 : 1.0;
      const double next_value =
          t + 1 < buf.length ? buf.values[buf.row(e, t + 1)] : buf.bootstrap[e];
      const double delta = buf.rewards[i] +
                           gamma * next_value * nonterminal - buf.values[i];
      acc = delta + gamma * lambda * nonterminal * acc;
      buf.advantages[i] = acc;
    }
  }
  buf.returns = buf.advantages + buf.values;
  buf.gae_ready = true;
}

double lr_schedule(long long step, long long total, double lr_init,
                   double lr_final) {
  const double w =
      0.5 * (1.0 + std::cos(M_PI * static_cast<double>(step) /
                            static_cast<double>(total)));
  return lr_init * w + lr_final * (1.0 - w);
}

Eigen::VectorXd gaussian_log_prob(const Eigen::MatrixXd& mean,
                                  const Eigen::VectorXd& log_std,
                                  const Eigen::MatrixXd& x) {
  const int d = static_cast<int>(log_std.size());
  const Eigen::ArrayXd inv_var = (-2.0 * log_std.array()).exp();
  const Eigen::ArrayXXd diff = (x - mean).array();
  Eigen::VectorXd lp =
      (-0.5 * (diff.square().rowwise() * inv_var.transpose()).rowwise().sum())
          .matrix();
  lp.array() += -log_std.sum() - 0.5 * d * kLog2Pi;
  return lp;
}

double gaussian_entropy(const Eigen::VectorXd& log_std) {
  const int d = static_cast<int>(log_std.size());
  return log_std.sum() + 0.5 * d * (1.0 + kLog2Pi);
}

double ppo_loss_and_grads(const PolicyParams& params,
                          const Eigen::MatrixXd& obs,
                          const Eigen::MatrixXd& actions,
                          const Eigen::VectorXd& logp_old,
                          const Eigen::VectorXd& advantages,
                          const Eigen::VectorXd& returns,
                          const PpoConfig& cfg, PolicyGrads& grads,
                          LossReport* report) {
  const int b = static_cast<int>(obs.rows());
  const double inv_b = 1.0 / static_cast<double>(b);

  std::vector<Eigen::MatrixXd> actor_cache, critic_cache;
  const Eigen::MatrixXd mean = params.actor.forward(obs, &actor_cache);
  const Eigen::VectorXd value =
      params.critic.forward(obs, &critic_cache).col(0);

  const Eigen::VectorXd logp =
      gaussian_log_prob(mean, params.log_std, actions);
  const Eigen::ArrayXd log_ratio = (logp - logp_old).array();
  const Eigen::ArrayXd ratio = log_ratio.exp();

  // Clipped surrogate. The gradient flows through the ratio only where the
  // unclipped branch is the active minimum.
  const Eigen::ArrayXd adv = advantages.array();
  const Eigen::ArrayXd surr1 = ratio * adv;
  const Eigen::ArrayXd surr2 =
      ratio.min(1.0 + cfg.clip).max(1.0 - cfg.clip) * adv;
  double policy_loss = 0.0;
  int clipped = 0;
  Eigen::VectorXd dlogp = Eigen::VectorXd::Zero(b);
  for (int i = 0; i < b; ++i) {
    if (surr1[i] <= surr2[i]) {
      policy_loss -= surr1[i] * inv_b;
      dlogp[i] = -adv[i] * ratio[i] * inv_b;
    } else {
      policy_loss -= surr2[i] * inv_b;
    }
    if (std::abs(ratio[i] - 1.0) > cfg.clip) ++clipped;
  }

  // Value loss: mean squared error against the GAE returns.
  const Eigen::VectorXd verr = value - returns;
  const double value_loss = verr.squaredNorm() * inv_b;

  const double entropy = gaussian_entropy(params.log_std);
  const double loss =
      policy_loss + cfg.value_coef * value_loss - cfg.entropy_coef * entropy;
  if (!std::isfinite(loss)) {
    throw NonFiniteLoss("ppo loss is not finite");
  }

  // Backward. d logp / d mean = (a - mean) / sigma^2 per dimension.
  const Eigen::ArrayXd inv_var = (-2.0 * params.log_std.array()).exp();
  const Eigen::ArrayXXd diff = (actions - mean).array();
  const Eigen::MatrixXd dmean =
      ((diff.rowwise() * inv_var.transpose()).colwise() * dlogp.array())
          .matrix();
  params.actor.backward(actor_cache, dmean, grads.actor);

  // d logp / d log_std_k = diff^2 / sigma^2 - 1.
  const Eigen::ArrayXXd dls_terms =
      diff.square().rowwise() * inv_var.transpose() - 1.0;
  grads.log_std +=
      (dls_terms.colwise() * dlogp.array()).colwise().sum().matrix().transpose();
  grads.log_std.array() -= cfg.entropy_coef;  // entropy bonus gradient

  const Eigen::MatrixXd dvalue =
      (2.0 * cfg.value_coef * inv_b) * verr;
  params.critic.backward(critic_cache, dvalue, grads.critic);

  if (report != nullptr) {
    report->policy_loss = policy_loss;
    report->value_loss = value_loss;
    report->entropy = entropy;
    report->clip_fraction = static_cast<double>(clipped) * inv_b;
    report->approx_kl = ((ratio - 1.0) - log_ratio).mean();
  }
  return loss;
}

LossReport ppo_update(PolicyParams& params, Adam& opt,
                      const RolloutBuffer& buf, const PpoConfig& cfg,
                      double lr, Rng& rng) {
  if (!buf.gae_ready) {
    throw InvariantViolation("ppo_update called before compute_gae");
  }
  const int rows = buf.rows();
  std::vector<int> order(rows);
  for (int i = 0; i < rows; ++i) order[i] = i;

  PolicyGrads grads = PolicyGrads::zeros_like(params);
  LossReport last;
  double kl_sum = 0.0, pl_sum = 0.0, vl_sum = 0.0, cf_sum = 0.0, gn_sum = 0.0;
  int n_batches = 0;

  const int act_dim = params.act_dim();
  const int obs_dim = params.obs_dim();
  Eigen::MatrixXd mb_obs(cfg.batch, obs_dim);
  Eigen::MatrixXd mb_act(cfg.batch, act_dim);
  Eigen::VectorXd mb_logp(cfg.batch), mb_adv(cfg.batch), mb_ret(cfg.batch);

  for (int epoch = 0; epoch < cfg.epochs_per_rollout; ++epoch) {
    // Fisher-Yates with the caller's stream keeps shuffles reproducible.
    for (int i = rows - 1; i > 0; --i) {
      const int j = static_cast<int>(rng.uniform_index(i + 1));
      std::swap(order[i], order[j]);
    }
    for (int start = 0; start + cfg.batch <= rows; start += cfg.batch) {
      for (int k = 0; k < cfg.batch; ++k) {
        const int src = order[start + k];
        mb_obs.row(k) = buf.obs.row(src);
        mb_act.row(k) = buf.actions.row(src);
        mb_logp[k] = buf.logp[src];
        mb_adv[k] = buf.advantages[src];
        mb_ret[k] = buf.returns[src];
      }
      // Per-minibatch advantage normalization (exact unit variance; the
      // epsilon only guards the all-equal-advantages case).
      const double mean = mb_adv.mean();
      const double sd = std::sqrt((mb_adv.array() - mean).square().sum() /
                                  std::max(1, cfg.batch - 1));
      const Eigen::VectorXd adv_n =
          ((mb_adv.array() - mean) / std::max(sd, kNormEps)).matrix();

      grads.set_zero();
      LossReport report;
      ppo_loss_and_grads(params, mb_obs, mb_act, mb_logp, adv_n, mb_ret, cfg,
                         grads, &report);
      report.grad_norm = grads.global_norm();
      grads.clip_global_norm(cfg.max_grad_norm);
      opt.step(params, grads, lr);

      kl_sum += report.approx_kl;
      pl_sum += report.policy_loss;
      vl_sum += report.value_loss;
      cf_sum += report.clip_fraction;
      gn_sum += report.grad_norm;
      last = report;
      ++n_batches;
    }
  }

  LossReport avg = last;
  if (n_batches > 0) {
    avg.approx_kl = kl_sum / n_batches;
    avg.policy_loss = pl_sum / n_batches;
    avg.value_loss = vl_sum / n_batches;
    avg.clip_fraction = cf_sum / n_batches;
    avg.grad_norm = gn_sum / n_batches;
    avg.entropy = gaussian_entropy(params.log_std);
  }
  return avg;
}

}  // namespace fiberloop
