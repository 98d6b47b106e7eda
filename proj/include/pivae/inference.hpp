#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "pivae/mcmc.hpp"
#include "pivae/model.hpp"
#include "pivae/rng.hpp"
#include "pivae/tensor.hpp"

namespace pivae {

// Observations for stage-2 inference. Gaussian families read (location,
// value) pairs; the point-process family reads event locations only and
// `values` must be empty.
struct ObservedData {
  MatrixXd locations;  // J x D
  VectorXd values;     // J, or empty for point-process data

  int count() const { return static_cast<int>(locations.rows()); }
};

struct NoiseModel {
  enum class Family {
    kGaussianUnknownSigma,  // sigma sampled on log scale
    kGaussianFixedSigma,
    kPoissonProcess,  // events + cumulative-intensity channel
  };
  Family family = Family::kGaussianUnknownSigma;
  double fixed_sigma = 1.0;        // kGaussianFixedSigma only
  double sigma_prior_scale = 1.0;  // half-normal scale on sigma
  double horizon = 0.0;            // kPoissonProcess observation window end

  bool samples_sigma() const { return family == Family::kGaussianUnknownSigma; }
  void validate() const;
};

// Frozen-decoder posterior over q = [z (, log sigma)]:
//   Gaussian:  sum_j log N(y_j | f_z(s_j), sigma^2) - |z|^2/2
//              - sigma^2/(2 a^2) + log sigma            (when sigma sampled)
//   Poisson:   sum_events log f_z(s_j) - F_z(horizon) - |z|^2/2
// where f_z is the decoded value channel in data units and F_z the decoded
// cumulative channel. Values are up to an additive constant. Data pairs are
// put into a canonical order at construction, so any permutation of the same
// observations defines the bitwise-identical density.
class PosteriorTarget : public LogDensityTarget {
 public:
  PosteriorTarget(const PiVaeModel& model, const ObservedData& data,
                  const NoiseModel& noise);
  ~PosteriorTarget() override;
  PosteriorTarget(const PosteriorTarget&) = delete;
  PosteriorTarget& operator=(const PosteriorTarget&) = delete;

  int dim() const override;  // L, or L+1 with log sigma appended
  // Returns -inf (without touching grad) when the parameters leave the
  // support, e.g. a non-positive decoded intensity at an event.
  double log_density_grad(const VectorXd& q, VectorXd* grad) const override;
  std::unique_ptr<LogDensityTarget> clone() const override;

  // As log_density_grad, but a non-finite result raises NumericError naming
  // the offending component (likelihood or prior).
  double value_or_throw(const VectorXd& q) const;

  const PiVaeModel& model() const;
  const NoiseModel& noise() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

// Log posterior density and gradient at (z, log sigma); log_sigma is ignored
// for families that do not sample sigma. Raises on non-finite results with
// the component named.
double log_posterior(const PiVaeModel& model, const ObservedData& data,
                     const NoiseModel& noise, const VectorXd& z,
                     double log_sigma, VectorXd* grad_z = nullptr,
                     double* grad_log_sigma = nullptr);

// Generative branch of stage 2: one z ~ N(0, I) shared by all locations,
// decoded and evaluated per location. Returns K x channels in data units.
MatrixXd generate(const PiVaeModel& model, const MatrixXd& locations,
                  Rng& rng);

struct OptimizeConfig {
  int steps = 400;
  double learning_rate = 0.05;
  double init_log_sigma = 0.0;

  void validate() const;
};

struct OptimizeResult {
  VectorXd z;
  double log_sigma = 0.0;  // log(fixed sigma) when sigma is not sampled
  double objective = 0.0;  // negative log posterior at the returned point
};

// Adam on the negative log posterior from z = 0; returns the best point
// visited. Used both for fast point prediction and to seed the sampler.
OptimizeResult optimize_latent(const PiVaeModel& model,
                               const ObservedData& data,
                               const NoiseModel& noise,
                               const OptimizeConfig& config = {});

struct LatentPosterior {
  ChainSet chains;  // columns z0..z{L-1} (, log_sigma)
  Diagnostics diagnostics;
  PiVaeModel model;
  NoiseModel noise;
  bool converged = true;  // false when R-hat exceeds 1.01 anywhere
  std::vector<std::string> warnings;

  bool has_sigma() const { return noise.samples_sigma(); }
  int latent_dim() const { return model.latent; }
};

// Chain column labels: z0.., then log_sigma when sampled.
std::vector<std::string> parameter_names(const LatentPosterior& posterior);

// Sigma draws (data units) flattened across chains; empty when fixed.
VectorXd sigma_draws(const LatentPosterior& posterior);

// Full Bayesian stage 2: optimize for a start point, jitter it per chain,
// run the sampler, attach diagnostics. Convergence failures are soft: the
// posterior is returned with converged=false and explanatory warnings.
LatentPosterior infer(const PiVaeModel& model, const ObservedData& data,
                      const NoiseModel& noise, const HmcConfig& mcmc,
                      const OptimizeConfig& optimize = {});

// Decoded function values per retained draw: rows are thinned draws in chain
// order, columns the requested locations.
MatrixXd function_draws(const LatentPosterior& posterior,
                        const MatrixXd& locations, int stride = 1,
                        int channel = 0);

struct PredictConfig {
  int stride = 1;
  bool include_noise = false;  // add sigma-scaled observation noise per draw
  std::uint64_t seed = 1;
  int channel = 0;
};

struct PredictionSummary {
  VectorXd mean, sd, q025, q50, q975;  // one entry per location
};

// Per-column mean, sample standard deviation, and linearly interpolated
// quantiles of a draws-by-locations matrix.
PredictionSummary summarize_function_draws(const MatrixXd& draws);

PredictionSummary predict(const LatentPosterior& posterior,
                          const MatrixXd& locations,
                          const PredictConfig& config = {});

// One row per location: its coordinates, then mean, sd, q2.5, q50, q97.5.
void write_predictions_csv(const MatrixXd& locations,
                           const PredictionSummary& summary,
                           const std::string& path);

}  // namespace pivae
