#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "pivae/tensor.hpp"

namespace pivae {

// A differentiable log density on R^P. Implementations must be deterministic
// and safe for concurrent read-only use; chains that need mutable scratch
// (e.g. graph-backed posteriors) get an independent copy via clone().
class LogDensityTarget {
 public:
  virtual ~LogDensityTarget() = default;
  virtual int dim() const = 0;
  // Log density at q, up to an additive constant. When grad is non-null it
  // receives d log p / d q (length dim()).
  virtual double log_density_grad(const VectorXd& q,
                                  VectorXd* grad) const = 0;
  virtual std::unique_ptr<LogDensityTarget> clone() const = 0;
};

struct HmcConfig {
  int chains = 4;
  int warmup = 500;
  int draws = 2000;
  // Leapfrog steps per transition, jittered uniformly in [L/2, 3L/2].
  int leapfrog = 32;
  double target_accept = 0.8;
  // Chains start uniformly in [-init_radius, init_radius]^P unless explicit
  // per-chain inits are given.
  double init_radius = 1.0;
  int threads = 0;  // 0 = one per available core
  std::uint64_t seed = 1;
  std::vector<VectorXd> inits;  // empty, or one start point per chain

  void validate() const;
};

struct ChainSet {
  std::vector<MatrixXd> draws;      // per chain: S x P, in draw order
  VectorXd accept_rate;             // per chain, mean post-warmup accept prob
  VectorXd step_size;               // per chain, frozen after warmup
  // Diagonal of the inverse mass matrix per chain, i.e. the warmup estimate
  // of the per-parameter posterior variance.
  std::vector<VectorXd> mass_diag;
  std::vector<int> divergences;     // per chain, post-warmup divergent count
  std::uint64_t seed = 0;

  int chains() const { return static_cast<int>(draws.size()); }
  int num_draws() const {
    return draws.empty() ? 0 : static_cast<int>(draws[0].rows());
  }
  int dim() const {
    return draws.empty() ? 0 : static_cast<int>(draws[0].cols());
  }
  int total_divergences() const;
  void validate() const;
  // All chains stacked in chain order: (C*S) x P.
  MatrixXd flattened() const;
};

struct Diagnostics {
  VectorXd rhat;          // per parameter; NaN where degenerate
  VectorXd ess;           // per parameter; NaN where degenerate
  VectorXd ess_per_draw;  // ess / (C*S)
  std::vector<bool> degenerate;  // zero-variance parameters
  int divergence_count = 0;

  // Worst non-degenerate values; NaN when every parameter is degenerate.
  double max_rhat() const;
  double min_ess_per_draw() const;
};

// Static-trajectory Hamiltonian Monte Carlo with dual-averaging step-size
// adaptation and windowed diagonal mass estimation during warmup; both are
// frozen for the sampling phase. Deterministic given the seed: each chain
// draws from its own stream keyed by (seed, chain index), so results do not
// depend on how chains are scheduled.
ChainSet hmc_sample(const LogDensityTarget& target, const HmcConfig& config);

// Split-chain potential scale reduction: each chain is halved and the usual
// between/within variance ratio is taken over the 2C half-chains.
VectorXd rhat(const ChainSet& chains);

// Effective sample size from the combined autocorrelation sequence of the
// split chains, truncated by Geyer's initial positive/monotone rule and
// clamped to (0, C*S].
VectorXd ess(const ChainSet& chains);

Diagnostics diagnose(const ChainSet& chains);

// Turns diagnostics into a verdict: appends one warning per degenerate
// parameter, per parameter whose split R-hat exceeds `threshold`, and for
// any post-warmup divergences. Returns false when the R-hat bar is missed.
bool convergence_report(const Diagnostics& diagnostics,
                        const std::vector<std::string>& names,
                        std::vector<std::string>* warnings,
                        double threshold = 1.01);

// One replicate per stride-th draw, walking chains in order. Predictor
// exceptions are rethrown with the chain and draw index attached.
std::vector<VectorXd> posterior_predictive(
    const ChainSet& chains,
    const std::function<VectorXd(const VectorXd&)>& predictor, int stride = 1);

// One row per draw: chain, draw, then one column per parameter name.
void write_chains_csv(const ChainSet& chains,
                      const std::vector<std::string>& parameter_names,
                      const std::string& path);

// Exposed integrator: n_steps of size `step` under the diagonal
// posterior-variance metric `inv_mass`. valid is false when the trajectory
// left the support (log density -inf); a NaN density or gradient raises.
struct LeapfrogResult {
  VectorXd q;
  VectorXd p;
  double log_density = 0.0;
  bool valid = true;
};
LeapfrogResult leapfrog(const LogDensityTarget& target, VectorXd q, VectorXd p,
                        const VectorXd& inv_mass, double step, int n_steps);

}  // namespace pivae
