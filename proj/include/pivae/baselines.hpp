#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pivae/dataset.hpp"
#include "pivae/inference.hpp"
#include "pivae/kernels.hpp"
#include "pivae/mcmc.hpp"
#include "pivae/model.hpp"
#include "pivae/tensor.hpp"

namespace pivae {

// Exact full-rank GP regressor. Fitting factorizes the n x n training
// covariance, so cost grows as O(n^3) time and O(n^2) memory; intended for
// desk-scale comparison runs.
struct GpRegressor {
  KernelSpec kernel;
  double noise_variance = 1.0;  // observation noise sigma_n^2
  MatrixXd inputs;              // n x D
  VectorXd targets;             // n

  void validate() const;
};

struct GpPrediction {
  VectorXd mean;      // per test point
  VectorXd variance;  // latent-function variance, observation noise excluded
  double log_marginal = 0.0;
};

// Exact posterior conditionals via Cholesky. The diagonal jitter from the
// kernel spec is escalated on factorization failure; if it still fails a
// NumericError is raised.
GpPrediction gp_fit_predict(const GpRegressor& reg, const MatrixXd& test);

// Log marginal likelihood of the training data; when grad is non-null it
// receives the derivative with respect to (log lengthscale, log amplitude,
// log sigma_n), in that order.
double gp_log_marginal(const GpRegressor& reg, VectorXd* grad = nullptr);

struct GpOptimizeConfig {
  int restarts = 3;  // additional perturbed starts beyond the heuristic one
  int steps = 200;
  double learning_rate = 0.05;
  std::uint64_t seed = 1;

  void validate() const;
};

// Adam ascent on the log marginal likelihood over log-parameterized
// (lengthscale, amplitude, sigma_n). The first start is a data heuristic
// (median pairwise distance, target variance); the rest are perturbations of
// it. Returns the best point visited across all restarts.
GpRegressor optimize_gp_hyperparameters(const MatrixXd& inputs,
                                        const VectorXd& targets,
                                        KernelFamily family,
                                        const GpOptimizeConfig& config = {});

// Plain VAE over functions sampled on one fixed grid, kept as the negative
// control: it has no notion of location, so inference is only defined for
// values laid out in the training grid's order.
struct GridVaeModel {
  MatrixXd grid;  // K x D training locations, in training order
  int latent = 10;
  Mlp encoder_trunk;  // K -> H, tanh after every layer
  MatrixXd enc_mu_w, enc_mu_b;  // H -> L
  MatrixXd enc_sd_w, enc_sd_b;  // H -> L, log scale
  Mlp decoder;  // L -> K, tanh hidden, linear final
  double value_shift = 0.0;  // scalar standardization of grid values
  double value_scale = 1.0;

  void validate() const;
  int grid_size() const { return static_cast<int>(grid.rows()); }
  // Mean and standard deviation of the latent code for one grid function
  // (data units in, standardized internally).
  std::pair<VectorXd, VectorXd> encode_grid(const VectorXd& values) const;
  // Decoded grid function in data units, length K.
  VectorXd decode_grid(const VectorXd& z) const;
};

struct GridVaeConfig {
  int latent = 10;
  std::vector<int> encoder_hidden = {32};
  std::vector<int> decoder_hidden = {32};
  int epochs = 100;
  int batch = 20;
  double learning_rate = 1e-3;
  double kl_weight = 1.0;
  std::uint64_t seed = 0;

  void validate() const;
};

struct GridVaeResult {
  GridVaeModel model;
  std::vector<double> epoch_losses;  // mean per-function loss per epoch
};

// Stochastic-gradient training of the evidence lower bound with Gaussian
// reconstruction. Every draw must lie on the identical grid; anything else
// is rejected, which is exactly the limitation this baseline demonstrates.
GridVaeResult train_grid_vae(const PriorDataset& dataset,
                             const GridVaeConfig& config);

struct GridPosterior {
  ChainSet chains;  // columns z0..z{L-1} (, log_sigma)
  Diagnostics diagnostics;
  GridVaeModel model;
  NoiseModel noise;
  bool converged = true;
  std::vector<std::string> warnings;

  bool has_sigma() const { return noise.samples_sigma(); }
};

// Decoder-frozen sampling of z (and optionally log sigma) given observations
// that must match training grid rows exactly, as an in-order subset. Off-grid
// or reordered locations raise ShapeError: the model cannot evaluate them.
// Only Gaussian noise families are supported. Chains start at the origin
// with a small deterministic jitter.
GridPosterior infer_grid_vae(const GridVaeModel& model,
                             const ObservedData& data, const NoiseModel& noise,
                             const HmcConfig& mcmc);

// Decoded grid functions per retained draw (thinned, chain order), K columns
// in data units.
MatrixXd grid_function_draws(const GridPosterior& posterior, int stride = 1);

}  // namespace pivae
