#include "pivae/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <memory>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "pivae/adam.hpp"
#include "pivae/errors.hpp"
#include "pivae/graph.hpp"
#include "pivae/rng.hpp"
#include "mlp_util.hpp"

namespace pivae {

using namespace detail;

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

// Kernel matrix without jitter or noise on the diagonal.
MatrixXd kernel_cross(const KernelSpec& spec, const MatrixXd& a,
                      const MatrixXd& b) {
  MatrixXd k(a.rows(), b.rows());
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index j = 0; j < b.rows(); ++j) {
      k(i, j) = kernel_eval(spec, (a.row(i) - b.row(j)).norm());
    }
  }
  return k;
}

struct GpFactor {
  MatrixXd kf;     // n x n kernel part, no diagonal additions
  MatrixXd lower;  // Cholesky factor of kf + (noise + jitter) I
  VectorXd alpha;  // (K + noise I)^{-1} y
};

GpFactor gp_factor(const GpRegressor& reg) {
  GpFactor f;
  f.kf = kernel_cross(reg.kernel, reg.inputs, reg.inputs);
  MatrixXd k = f.kf;
  k.diagonal().array() += reg.noise_variance + reg.kernel.jitter;
  f.lower = robust_cholesky_lower(std::move(k), reg.kernel.jitter, "gp");
  f.alpha = f.lower.transpose().triangularView<Eigen::Upper>().solve(
      f.lower.triangularView<Eigen::Lower>().solve(reg.targets));
  return f;
}

double gp_evidence(const GpRegressor& reg, const GpFactor& f) {
  const double n = static_cast<double>(reg.inputs.rows());
  return -0.5 * reg.targets.dot(f.alpha) -
         f.lower.diagonal().array().log().sum() - 0.5 * n * kLog2Pi;
}

// Elementwise d k / d log(lengthscale) over the training pairs.
MatrixXd kernel_lengthscale_grad(const KernelSpec& spec, const MatrixXd& x,
                                 const MatrixXd& kf) {
  const Eigen::Index n = x.rows();
  MatrixXd g(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      const double r2 = (x.row(i) - x.row(j)).squaredNorm();
      if (spec.family == KernelFamily::kRbf) {
        g(i, j) = kf(i, j) * 2.0 * r2 /
                  (spec.lengthscale * spec.lengthscale);
      } else {
        const double u = std::sqrt(3.0 * r2) / spec.lengthscale;
        g(i, j) = spec.amplitude * u * u * std::exp(-u);
      }
    }
  }
  return g;
}

}  // namespace

void GpRegressor::validate() const {
  kernel.validate();
  if (!(noise_variance >= 0.0) || !std::isfinite(noise_variance)) {
    throw ConfigError("gp: noise variance must be finite and non-negative");
  }
  if (inputs.rows() < 1) throw ShapeError("gp: training set is empty");
  if (targets.size() != inputs.rows()) {
    throw ShapeError("gp: " + std::to_string(targets.size()) +
                     " targets for " + std::to_string(inputs.rows()) +
                     " inputs");
  }
  if (!inputs.allFinite() || !targets.allFinite()) {
    throw NumericError("gp: non-finite training data");
  }
}

GpPrediction gp_fit_predict(const GpRegressor& reg, const MatrixXd& test) {
  reg.validate();
  if (test.rows() > 0 && test.cols() != reg.inputs.cols()) {
    throw ShapeError("gp: test inputs have dimension " +
                     std::to_string(test.cols()) + ", training has " +
                     std::to_string(reg.inputs.cols()));
  }
  if (!test.allFinite()) throw NumericError("gp: non-finite test input");

  const GpFactor f = gp_factor(reg);
  GpPrediction out;
  out.log_marginal = gp_evidence(reg, f);
  const Eigen::Index m = test.rows();
  out.mean.resize(m);
  out.variance.resize(m);
  if (m == 0) return out;

  const MatrixXd kstar = kernel_cross(reg.kernel, reg.inputs, test);  // n x m
  out.mean = kstar.transpose() * f.alpha;
  const MatrixXd v = f.lower.triangularView<Eigen::Lower>().solve(kstar);
  for (Eigen::Index j = 0; j < m; ++j) {
    out.variance(j) =
        std::max(0.0, reg.kernel.amplitude - v.col(j).squaredNorm());
  }
  return out;
}

double gp_log_marginal(const GpRegressor& reg, VectorXd* grad) {
  reg.validate();
  const GpFactor f = gp_factor(reg);
  const double value = gp_evidence(reg, f);
  if (grad == nullptr) return value;

  const Eigen::Index n = reg.inputs.rows();
  const MatrixXd kinv = f.lower.transpose().triangularView<Eigen::Upper>().solve(
      f.lower.triangularView<Eigen::Lower>().solve(
          MatrixXd::Identity(n, n)));
  const MatrixXd outer = f.alpha * f.alpha.transpose() - kinv;

  grad->resize(3);
  (*grad)(0) = 0.5 * outer.cwiseProduct(kernel_lengthscale_grad(
                                            reg.kernel, reg.inputs, f.kf))
                         .sum();
  (*grad)(1) = 0.5 * outer.cwiseProduct(f.kf).sum();
  (*grad)(2) = reg.noise_variance * outer.trace();
  return value;
}

void GpOptimizeConfig::validate() const {
  if (restarts < 0) throw ConfigError("gp.restarts: must be non-negative");
  if (steps < 1) throw ConfigError("gp.steps: must be at least 1");
  if (!(learning_rate > 0.0)) {
    throw ConfigError("gp.learning_rate: must be positive");
  }
}

GpRegressor optimize_gp_hyperparameters(const MatrixXd& inputs,
                                        const VectorXd& targets,
                                        KernelFamily family,
                                        const GpOptimizeConfig& config) {
  config.validate();
  const Eigen::Index n = inputs.rows();
  if (n < 1) throw ShapeError("gp: training set is empty");
  if (targets.size() != n) {
    throw ShapeError("gp: " + std::to_string(targets.size()) +
                     " targets for " + std::to_string(n) + " inputs");
  }
  if (!inputs.allFinite() || !targets.allFinite()) {
    throw NumericError("gp: non-finite training data");
  }

  // Data-driven starting point: the typical pairwise distance and the
  // target variance, with a tenth of the variance offered as noise.
  std::vector<double> dists;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      dists.push_back((inputs.row(i) - inputs.row(j)).norm());
    }
  }
  double med = 1.0;
  if (!dists.empty()) {
    auto mid = dists.begin() + static_cast<std::ptrdiff_t>(dists.size() / 2);
    std::nth_element(dists.begin(), mid, dists.end());
    if (*mid > 0.0) med = *mid;
  }
  const double mean = targets.mean();
  double vary = (targets.array() - mean).square().sum() /
                std::max<double>(1.0, static_cast<double>(n - 1));
  if (!(vary > 1e-12)) vary = 1.0;
  VectorXd base(3);
  base << std::log(med), std::log(vary), 0.5 * std::log(0.1 * vary);

  const auto regressor_at = [&](const VectorXd& theta) {
    GpRegressor reg;
    reg.kernel.family = family;
    reg.kernel.lengthscale = std::exp(theta(0));
    reg.kernel.amplitude = std::exp(theta(1));
    reg.noise_variance = std::exp(2.0 * theta(2));
    reg.inputs = inputs;
    reg.targets = targets;
    return reg;
  };

  bool found = false;
  double best = 0.0;
  VectorXd best_theta;
  std::string last_error = "no evaluation succeeded";
  for (int r = 0; r <= config.restarts; ++r) {
    Rng rng(Rng::mix(config.seed, static_cast<std::uint64_t>(r)));
    Tensor theta(3, 1);
    theta.col(0) = base;
    if (r > 0) {
      for (int i = 0; i < 3; ++i) theta(i, 0) += rng.uniform(-1.5, 1.5);
    }
    AdamConfig adam;
    adam.learning_rate = config.learning_rate;
    AdamState state = make_adam_state({&theta}, adam);
    Tensor g(3, 1);
    for (int step = 0; step < config.steps; ++step) {
      VectorXd grad;
      double value;
      try {
        value = gp_log_marginal(regressor_at(theta.col(0)), &grad);
      } catch (const NumericError& e) {
        last_error = e.what();
        break;
      }
      if (std::isfinite(value) && (!found || value > best)) {
        found = true;
        best = value;
        best_theta = theta.col(0);
      }
      g.col(0) = -grad;
      adam_step({&theta}, {&g}, state);
    }
  }
  if (!found) {
    throw NumericError("gp optimization failed: " + last_error);
  }
  return regressor_at(best_theta);
}

void GridVaeModel::validate() const {
  if (grid.rows() < 1 || grid.cols() < 1) {
    throw ShapeError("grid vae: empty grid");
  }
  if (latent < 1) throw ShapeError("grid vae: latent dimension must be >= 1");
  const Eigen::Index k = grid.rows();
  check_mlp(encoder_trunk, k, mlp_out(encoder_trunk, k),
            "grid_vae.encoder_trunk");
  const Eigen::Index trunk_out = mlp_out(encoder_trunk, k);
  if (enc_mu_w.rows() != trunk_out || enc_mu_w.cols() != latent ||
      enc_mu_b.rows() != 1 || enc_mu_b.cols() != latent ||
      enc_sd_w.rows() != trunk_out || enc_sd_w.cols() != latent ||
      enc_sd_b.rows() != 1 || enc_sd_b.cols() != latent) {
    throw ShapeError("grid vae: encoder head shapes inconsistent");
  }
  check_mlp(decoder, latent, k, "grid_vae.decoder");
  if (!(value_scale > 0.0)) {
    throw ShapeError("grid vae: value scale must be positive");
  }
}

std::pair<VectorXd, VectorXd> GridVaeModel::encode_grid(
    const VectorXd& values) const {
  if (values.size() != grid.rows()) {
    throw ShapeError("grid vae: encoding " + std::to_string(values.size()) +
                     " values on a grid of " + std::to_string(grid.rows()));
  }
  if (!values.allFinite()) throw NumericError("grid vae: non-finite values");
  const MatrixXd x =
      ((values.array() - value_shift) / value_scale).matrix().transpose();
  const MatrixXd h = mlp_hidden(encoder_trunk, x);
  const VectorXd mu =
      ((h * enc_mu_w).rowwise() + enc_mu_b.row(0)).transpose();
  const VectorXd sd = ((h * enc_sd_w).rowwise() + enc_sd_b.row(0))
                          .array()
                          .exp()
                          .transpose();
  if (!mu.allFinite() || !sd.allFinite()) {
    throw NumericError("grid vae: encoder produced non-finite output");
  }
  return {mu, sd};
}

VectorXd GridVaeModel::decode_grid(const VectorXd& z) const {
  if (z.size() != latent) {
    throw ShapeError("grid vae: latent point has length " +
                     std::to_string(z.size()) + ", expected " +
                     std::to_string(latent));
  }
  if (!z.allFinite()) throw NumericError("grid vae: non-finite latent point");
  const MatrixXd row = mlp_linear_out(decoder, z.transpose());
  VectorXd out = (row.array() * value_scale + value_shift).transpose();
  if (!out.allFinite()) {
    throw NumericError("grid vae: decoder produced non-finite output");
  }
  return out;
}

void GridVaeConfig::validate() const {
  if (latent < 1) throw ConfigError("grid_vae.latent: must be at least 1");
  for (const int w : encoder_hidden) {
    if (w < 1) throw ConfigError("grid_vae.encoder_hidden: widths must be >= 1");
  }
  for (const int w : decoder_hidden) {
    if (w < 1) throw ConfigError("grid_vae.decoder_hidden: widths must be >= 1");
  }
  if (epochs < 1) throw ConfigError("grid_vae.epochs: must be at least 1");
  if (batch < 1) throw ConfigError("grid_vae.batch: must be at least 1");
  if (!(learning_rate > 0.0)) {
    throw ConfigError("grid_vae.learning_rate: must be positive");
  }
  if (!(kl_weight >= 0.0)) {
    throw ConfigError("grid_vae.kl_weight: must be non-negative");
  }
}

GridVaeResult train_grid_vae(const PriorDataset& dataset,
                             const GridVaeConfig& config) {
  config.validate();
  dataset.validate();
  if (dataset.draws.empty()) {
    throw ShapeError("train_grid_vae: dataset is empty");
  }
  if (dataset.with_integral) {
    throw ShapeError(
        "train_grid_vae: integral channels are not supported by the grid "
        "baseline");
  }
  const MatrixXd& grid = dataset.draws[0].locations;
  const Eigen::Index k = grid.rows();
  const int n = static_cast<int>(dataset.draws.size());
  for (int i = 1; i < n; ++i) {
    const MatrixXd& locs = dataset.draws[static_cast<std::size_t>(i)].locations;
    if (locs.rows() != k || locs.cols() != grid.cols() ||
        !(locs.array() == grid.array()).all()) {
      throw ShapeError("train_grid_vae: draw " + std::to_string(i) +
                       " departs from the shared grid; the plain VAE needs "
                       "every function sampled on one fixed grid");
    }
  }

  double sum = 0.0;
  for (const FunctionDraw& d : dataset.draws) sum += d.values.sum();
  const double total = static_cast<double>(n) * static_cast<double>(k);
  const double shift = sum / total;
  double var = 0.0;
  for (const FunctionDraw& d : dataset.draws) {
    var += (d.values.array() - shift).square().sum();
  }
  var /= total;
  const double scale = var > 1e-24 ? std::sqrt(var) : 1.0;

  Rng rng(config.seed);
  GridVaeModel model;
  model.grid = grid;
  model.latent = config.latent;
  model.value_shift = shift;
  model.value_scale = scale;
  model.encoder_trunk = make_hidden_stack(k, config.encoder_hidden, rng);
  const Eigen::Index trunk_out = mlp_out(model.encoder_trunk, k);
  model.enc_mu_w = glorot(trunk_out, config.latent, rng);
  model.enc_mu_b = MatrixXd::Zero(1, config.latent);
  model.enc_sd_w = MatrixXd::Zero(trunk_out, config.latent);
  model.enc_sd_b = MatrixXd::Zero(1, config.latent);
  model.decoder = make_mlp(config.latent, config.decoder_hidden, k, rng);
  model.validate();

  ParameterStore store;
  register_mlp(store, model.encoder_trunk, "enc");
  store.add("enc.mu.w", model.enc_mu_w);
  store.add("enc.mu.b", model.enc_mu_b);
  store.add("enc.sd.w", model.enc_sd_w);
  store.add("enc.sd.b", model.enc_sd_b);
  register_mlp(store, model.decoder, "dec");

  AdamConfig adam;
  adam.learning_rate = config.learning_rate;
  AdamOptimizer opt(store, adam);

  MatrixXd values(n, k);
  for (int i = 0; i < n; ++i) {
    values.row(i) =
        ((dataset.draws[static_cast<std::size_t>(i)].values.array() - shift) /
         scale)
            .matrix()
            .transpose();
  }

  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);

  GridVaeResult result;
  result.epoch_losses.reserve(static_cast<std::size_t>(config.epochs));
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    rng.shuffle(order);
    double epoch_sum = 0.0;
    for (int start = 0, batch_index = 0; start < n;
         start += config.batch, ++batch_index) {
      const int b = std::min(config.batch, n - start);
      MatrixXd x(b, k);
      for (int i = 0; i < b; ++i) {
        x.row(i) = values.row(order[static_cast<std::size_t>(start + i)]);
      }
      MatrixXd eps(b, config.latent);
      for (Eigen::Index i = 0; i < eps.size(); ++i) {
        eps(i / config.latent, i % config.latent) = rng.normal();
      }

      Graph g(&store);
      const NodeId xin = g.input("x");
      const NodeId ein = g.input("eps");
      const NodeId h = graph_mlp_hidden(
          g, xin, model.encoder_trunk.weights.size(), "enc");
      const NodeId mu = g.affine(h, g.param("enc.mu.w"), g.param("enc.mu.b"));
      const NodeId sd =
          g.exp(g.affine(h, g.param("enc.sd.w"), g.param("enc.sd.b")));
      const NodeId z = g.add(mu, g.mul(sd, ein));
      const NodeId recon =
          graph_mlp_linear_out(g, z, model.decoder.weights.size(), "dec");
      const NodeId loss =
          g.scale(g.add(g.squared_error(xin, recon),
                        g.scale(g.gaussian_kl(mu, sd), config.kl_weight)),
                  1.0 / b);
      g.bind(xin, std::move(x));
      g.bind(ein, std::move(eps));

      double value = 0.0;
      try {
        value = scalar_value(g.forward(loss));
        store.zero_grads();
        g.backward(loss);
        opt.step();
      } catch (const NumericError& e) {
        throw NumericError("train_grid_vae: diverged at epoch " +
                           std::to_string(epoch) + ", batch " +
                           std::to_string(batch_index) + ": " + e.what());
      }
      epoch_sum += value * b;
    }
    result.epoch_losses.push_back(epoch_sum / n);
  }

  extract_mlp(store, model.encoder_trunk, "enc");
  model.enc_mu_w = store.value("enc.mu.w");
  model.enc_mu_b = store.value("enc.mu.b");
  model.enc_sd_w = store.value("enc.sd.w");
  model.enc_sd_b = store.value("enc.sd.b");
  extract_mlp(store, model.decoder, "dec");
  result.model = std::move(model);
  return result;
}

namespace {

// Decoder-frozen posterior over the grid VAE's latent code: the decoded grid
// values at the observed rows enter a Gaussian likelihood, plus the standard
// normal prior on z (and the half-normal noise prior when sigma is sampled).
class GridTarget : public LogDensityTarget {
 public:
  GridTarget(const GridVaeModel& model, std::vector<int> indices, VectorXd y,
             const NoiseModel& noise)
      : model_(model),
        indices_(std::move(indices)),
        y_(std::move(y)),
        noise_(noise),
        sample_sigma_(noise.samples_sigma()),
        dim_(model.latent + (noise.samples_sigma() ? 1 : 0)) {
    store_.add("z", MatrixXd::Zero(1, model_.latent));
    if (sample_sigma_) store_.add("log_sigma", make_scalar(0.0));
    graph_ = Graph(&store_);
    Graph& g = graph_;

    NodeId h = g.param("z");
    const std::size_t layers = model_.decoder.weights.size();
    for (std::size_t l = 0; l < layers; ++l) {
      h = g.affine(h, g.constant(model_.decoder.weights[l]),
                   g.constant(model_.decoder.biases[l]));
      if (l + 1 < layers) h = g.tanh(h);
    }
    NodeId likelihood = -1;
    NodeId log_sigma = -1;
    if (sample_sigma_) {
      log_sigma = g.param("log_sigma");
    } else {
      log_sigma = g.constant_scalar(std::log(noise_.fixed_sigma));
    }
    if (!indices_.empty()) {
      const NodeId column = g.reshape(h, model_.grid.rows(), 1);
      const NodeId mean =
          g.shift(g.scale(g.gather_rows(column, indices_),
                          model_.value_scale),
                  model_.value_shift);
      MatrixXd yt(y_.size(), 1);
      yt.col(0) = y_;
      likelihood = g.gaussian_loglik(g.constant(yt), mean, log_sigma);
    }
    NodeId total =
        g.scale(g.reduce_sum(g.square(g.param("z"))), -0.5);
    if (likelihood >= 0) total = g.add(total, likelihood);
    if (sample_sigma_) {
      const double a = noise_.sigma_prior_scale;
      total = g.add(total, g.add(g.scale(g.square(g.exp(log_sigma)),
                                         -0.5 / (a * a)),
                                 log_sigma));
    }
    total_ = total;
  }

  int dim() const override { return dim_; }

  double log_density_grad(const VectorXd& q, VectorXd* grad) const override {
    if (q.size() != dim_) {
      throw ShapeError("grid posterior: parameter vector has length " +
                       std::to_string(q.size()) + ", expected " +
                       std::to_string(dim_));
    }
    store_.value("z") = q.head(model_.latent).transpose();
    if (sample_sigma_) {
      store_.value("log_sigma")(0, 0) = q(model_.latent);
    }
    store_.bump_version();
    double value;
    try {
      value = scalar_value(graph_.forward(total_));
      if (grad != nullptr) {
        store_.zero_grads();
        graph_.backward(total_);
      }
    } catch (const NumericError&) {
      return -std::numeric_limits<double>::infinity();
    }
    if (grad != nullptr) {
      grad->resize(dim_);
      grad->head(model_.latent) = store_.grad("z").row(0).transpose();
      if (sample_sigma_) (*grad)(model_.latent) = store_.grad("log_sigma")(0, 0);
    }
    return value;
  }

  std::unique_ptr<LogDensityTarget> clone() const override {
    return std::make_unique<GridTarget>(model_, indices_, y_, noise_);
  }

 private:
  GridVaeModel model_;
  std::vector<int> indices_;
  VectorXd y_;
  NoiseModel noise_;
  bool sample_sigma_;
  int dim_;
  // Scratch state for density evaluations; logically the target is
  // immutable, so concurrent users take clones.
  mutable ParameterStore store_;
  mutable Graph graph_{nullptr};
  NodeId total_ = -1;
};

}  // namespace

GridPosterior infer_grid_vae(const GridVaeModel& model,
                             const ObservedData& data, const NoiseModel& noise,
                             const HmcConfig& mcmc) {
  model.validate();
  noise.validate();
  mcmc.validate();
  if (noise.family == NoiseModel::Family::kPoissonProcess) {
    throw ConfigError(
        "grid inference: only Gaussian noise families are supported");
  }
  const int j = data.count();
  if (j > 0 && data.locations.cols() != model.grid.cols()) {
    throw ShapeError("grid inference: locations have dimension " +
                     std::to_string(data.locations.cols()) +
                     ", the training grid has " +
                     std::to_string(model.grid.cols()));
  }
  if (data.values.size() != j) {
    throw ShapeError("grid inference: need one value per location, got " +
                     std::to_string(data.values.size()) + " for " +
                     std::to_string(j));
  }
  if (!data.locations.allFinite() || !data.values.allFinite()) {
    throw NumericError("grid inference: non-finite observation");
  }

  // Observations must be an in-order subset of the training grid: the plain
  // VAE reads values positionally, so reordered or repeated rows are
  // meaningless and off-grid rows cannot be evaluated at all.
  std::vector<int> indices;
  indices.reserve(static_cast<std::size_t>(j));
  int cursor = 0;
  const auto matches = [&](int row, int obs) {
    return (model.grid.row(row).array() ==
            data.locations.row(obs).array())
        .all();
  };
  for (int o = 0; o < j; ++o) {
    int found = -1;
    for (int r = cursor; r < model.grid_size(); ++r) {
      if (matches(r, o)) {
        found = r;
        break;
      }
    }
    if (found < 0) {
      for (int r = 0; r < cursor; ++r) {
        if (matches(r, o)) {
          throw ShapeError(
              "grid inference: observation " + std::to_string(o) +
              " breaks the training grid order; the grid VAE only accepts an "
              "in-order subset of its grid (no permutations or repeats)");
        }
      }
      throw ShapeError("grid inference: observation " + std::to_string(o) +
                       " is off the training grid; the grid VAE cannot "
                       "evaluate locations it was not trained on");
    }
    indices.push_back(found);
    cursor = found + 1;
  }

  const GridTarget target(model, indices, data.values, noise);
  HmcConfig local = mcmc;
  local.inits.clear();
  Rng jitter(Rng::mix(mcmc.seed, 0x9E1Dull));
  for (int c = 0; c < mcmc.chains; ++c) {
    VectorXd init = VectorXd::Zero(target.dim());
    for (Eigen::Index i = 0; i < init.size(); ++i) {
      init(i) += 0.01 * jitter.normal();
    }
    local.inits.push_back(std::move(init));
  }

  GridPosterior post;
  post.model = model;
  post.noise = noise;
  post.chains = hmc_sample(target, local);
  post.diagnostics = diagnose(post.chains);
  std::vector<std::string> names;
  for (int l = 0; l < model.latent; ++l) {
    names.push_back("z" + std::to_string(l));
  }
  if (post.has_sigma()) names.push_back("log_sigma");
  post.converged =
      convergence_report(post.diagnostics, names, &post.warnings);
  return post;
}

MatrixXd grid_function_draws(const GridPosterior& posterior, int stride) {
  if (stride < 1) {
    throw ConfigError("grid_function_draws: stride must be >= 1");
  }
  const GridVaeModel& model = posterior.model;
  const int per_chain = (posterior.chains.num_draws() + stride - 1) / stride;
  const int rows = posterior.chains.chains() * per_chain;
  MatrixXd out(rows, model.grid.rows());
  int r = 0;
  for (int c = 0; c < posterior.chains.chains(); ++c) {
    const MatrixXd& d = posterior.chains.draws[static_cast<std::size_t>(c)];
    for (int s = 0; s < posterior.chains.num_draws(); s += stride, ++r) {
      out.row(r) =
          model.decode_grid(d.row(s).head(model.latent).transpose())
              .transpose();
    }
  }
  return out;
}

}  // namespace pivae
