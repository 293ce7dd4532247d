#ifndef FIBERLOOP_MLP_HPP_
#define FIBERLOOP_MLP_HPP_

#include <Eigen/Dense>
#include <vector>

#include "fiberloop/rng.hpp"

namespace fiberloop {

// Dense feedforward net with ReLU hidden activations and a linear output
// layer. Rows of the batch matrices are samples. Everything is 64-bit; the
// nets are tiny and double precision keeps gradient-check tolerances strict.
struct Mlp {
  struct Layer {
    Eigen::MatrixXd w;  // out x in
    Eigen::VectorXd b;  // out
  };
  std::vector<Layer> layers;

  // Orthogonal-style init: hidden layers with gain sqrt(2), output layer
  // with head_gain. Biases start at zero.
  static Mlp make(const std::vector<int>& sizes, Rng& rng, double head_gain);

  int input_dim() const { return static_cast<int>(layers.front().w.cols()); }
  int output_dim() const { return static_cast<int>(layers.back().w.rows()); }

  // x: B x in. Returns B x out. When cache is non-null it receives the input
  // to every layer (cache->front() aliases x) for use by backward().
  Eigen::MatrixXd forward(const Eigen::MatrixXd& x,
                          std::vector<Eigen::MatrixXd>* cache = nullptr) const;

  // dout: B x out gradient of the loss in the output. Accumulates parameter
  // gradients into grads (same shapes as *this).
  void backward(const std::vector<Eigen::MatrixXd>& cache,
                const Eigen::MatrixXd& dout, Mlp& grads) const;

  Mlp zeros_like() const;
  void set_zero();
  double squared_norm() const;
  void scale(double s);
};

// Actor trunk, state-independent log-std head, and a separate critic trunk.
struct PolicyParams {
  Mlp actor;
  Mlp critic;
  Eigen::VectorXd log_std;

  static PolicyParams make(int obs_dim, const std::vector<int>& hidden,
                           int act_dim, Rng& rng);

  int obs_dim() const { return actor.input_dim(); }
  int act_dim() const { return actor.output_dim(); }
};

struct PolicyGrads {
  Mlp actor;
  Mlp critic;
  Eigen::VectorXd log_std;

  static PolicyGrads zeros_like(const PolicyParams& p);
  void set_zero();
  double global_norm() const;
  void clip_global_norm(double max_norm);
};

// Minimal Adam with bias correction; one state slot per parameter tensor.
class Adam {
 public:
  explicit Adam(const PolicyParams& p);
  void step(PolicyParams& p, const PolicyGrads& g, double lr);

 private:
  PolicyGrads m_, v_;
  long t_ = 0;
};

// Single-observation convenience used at deployment time.
struct PolicyEval {
  Eigen::VectorXd action_mean;
  Eigen::VectorXd log_std;
  double value = 0.0;
};
PolicyEval policy_forward(const PolicyParams& params,
                          const Eigen::VectorXd& obs_normalized);

}  // namespace fiberloop

#endif  // FIBERLOOP_MLP_HPP_
