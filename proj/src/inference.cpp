#include "pivae/inference.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <utility>

#include "pivae/adam.hpp"
#include "pivae/errors.hpp"
#include "pivae/graph.hpp"

namespace pivae {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// Canonical observation order: lexicographic in the location coordinates,
// then the value. Any permutation of the same pairs produces the same
// layout, which makes the posterior bitwise permutation-invariant.
void sort_observations(MatrixXd& locations, VectorXd& values) {
  const Eigen::Index j = locations.rows();
  std::vector<Eigen::Index> order(static_cast<std::size_t>(j));
  std::iota(order.begin(), order.end(), 0);
  const bool has_values = values.size() == j;
  std::sort(order.begin(), order.end(),
            [&](Eigen::Index a, Eigen::Index b) {
              for (Eigen::Index d = 0; d < locations.cols(); ++d) {
                if (locations(a, d) != locations(b, d)) {
                  return locations(a, d) < locations(b, d);
                }
              }
              if (has_values && values(a) != values(b)) {
                return values(a) < values(b);
              }
              return false;
            });
  MatrixXd sl(locations.rows(), locations.cols());
  VectorXd sv(values.size());
  for (Eigen::Index i = 0; i < j; ++i) {
    sl.row(i) = locations.row(order[static_cast<std::size_t>(i)]);
    if (has_values) sv(i) = values(order[static_cast<std::size_t>(i)]);
  }
  locations = std::move(sl);
  values = std::move(sv);
}

NodeId constant_decoder(Graph& g, const PiVaeModel& model, NodeId z) {
  NodeId h = z;
  const std::size_t layers = model.decoder.weights.size();
  for (std::size_t k = 0; k < layers; ++k) {
    h = g.affine(h, g.constant(model.decoder.weights[k]),
                 g.constant(model.decoder.biases[k]));
    if (k + 1 < layers) h = g.tanh(h);
  }
  return h;
}

}  // namespace

void NoiseModel::validate() const {
  if (!(sigma_prior_scale > 0.0) || !std::isfinite(sigma_prior_scale)) {
    throw ConfigError("noise.sigma_prior_scale: must be a positive real");
  }
  if (family == Family::kGaussianFixedSigma &&
      (!(fixed_sigma > 0.0) || !std::isfinite(fixed_sigma))) {
    throw ConfigError("noise.fixed_sigma: must be a positive real");
  }
  if (family == Family::kPoissonProcess &&
      (!(horizon > 0.0) || !std::isfinite(horizon))) {
    throw ConfigError("noise.horizon: must be a positive real");
  }
}

struct PosteriorTarget::Impl {
  PiVaeModel model;
  ObservedData data;  // canonical order
  NoiseModel noise;
  bool sample_sigma = false;
  int dim = 0;

  ParameterStore store;
  Graph graph{nullptr};
  NodeId total = -1;
  NodeId likelihood = -1;
  NodeId prior_z = -1;
  NodeId prior_sigma = -1;

  void set_parameters(const VectorXd& q) {
    if (q.size() != dim) {
      throw ShapeError("posterior: parameter vector has length " +
                       std::to_string(q.size()) + ", expected " +
                       std::to_string(dim));
    }
    store.value("z") = q.head(model.latent).transpose();
    if (sample_sigma) {
      store.value("log_sigma")(0, 0) = q(model.latent);
    }
    store.bump_version();
  }
};

PosteriorTarget::PosteriorTarget(const PiVaeModel& model,
                                 const ObservedData& data,
                                 const NoiseModel& noise)
    : impl_(std::make_unique<Impl>()) {
  model.validate();
  noise.validate();
  Impl& im = *impl_;
  im.model = model;
  im.noise = noise;
  im.data = data;

  const int j = data.count();
  if (j > 0 && data.locations.cols() != model.dim) {
    throw ShapeError("posterior: data locations have dimension " +
                     std::to_string(data.locations.cols()) + ", model has " +
                     std::to_string(model.dim));
  }
  if (!data.locations.allFinite() || !data.values.allFinite()) {
    throw NumericError("posterior: non-finite observation");
  }
  const bool poisson = noise.family == NoiseModel::Family::kPoissonProcess;
  if (poisson) {
    if (data.values.size() != 0) {
      throw ShapeError("posterior: point-process data must not carry values");
    }
    if (model.channels != 2) {
      throw ShapeError("posterior: point-process inference needs a model "
                       "with the cumulative channel");
    }
    if (model.dim != 1) {
      throw ShapeError("posterior: point-process inference is defined on "
                       "one-dimensional locations");
    }
  } else if (data.values.size() != j) {
    throw ShapeError("posterior: need one value per location, got " +
                     std::to_string(data.values.size()) + " for " +
                     std::to_string(j));
  }
  sort_observations(im.data.locations, im.data.values);

  im.sample_sigma = noise.samples_sigma();
  im.dim = model.latent + (im.sample_sigma ? 1 : 0);

  im.store.add("z", MatrixXd::Zero(1, model.latent));
  if (im.sample_sigma) im.store.add("log_sigma", make_scalar(0.0));
  im.graph = Graph(&im.store);
  Graph& g = im.graph;

  const NodeId z = g.param("z");
  const NodeId beta_hat = constant_decoder(g, model, z);
  const int f = model.features;

  if (poisson) {
    const NodeId beta1 =
        g.reshape(g.slice_cols(beta_hat, f, 2 * f), f, 1);
    MatrixXd phi_t(1, f);
    VectorXd t(1);
    t << noise.horizon;
    phi_t.row(0) = model.phi(t).transpose();
    const NodeId cumulative =
        g.shift(g.scale(g.matmul(g.constant(phi_t), beta1),
                        model.channel_scale(1)),
                model.channel_shift(1));
    if (j > 0) {
      const NodeId beta0 = g.reshape(g.slice_cols(beta_hat, 0, f), f, 1);
      const NodeId intensity =
          g.shift(g.scale(g.matmul(g.constant(im.model.phi_rows(
                                       im.data.locations)),
                                   beta0),
                          model.channel_scale(0)),
                  model.channel_shift(0));
      im.likelihood = g.sub(g.reduce_sum(g.log(intensity)),
                            g.reduce_sum(cumulative));
    } else {
      im.likelihood = g.scale(g.reduce_sum(cumulative), -1.0);
    }
  } else {
    const NodeId log_sigma =
        im.sample_sigma
            ? g.param("log_sigma")
            : g.constant_scalar(std::log(noise.fixed_sigma));
    if (j > 0) {
      const NodeId beta0 = g.reshape(g.slice_cols(beta_hat, 0, f), f, 1);
      const NodeId mean =
          g.shift(g.scale(g.matmul(g.constant(im.model.phi_rows(
                                       im.data.locations)),
                                   beta0),
                          model.channel_scale(0)),
                  model.channel_shift(0));
      MatrixXd y(j, 1);
      y.col(0) = im.data.values;
      im.likelihood = g.gaussian_loglik(g.constant(y), mean, log_sigma);
    }
    if (im.sample_sigma) {
      const NodeId sigma = g.exp(log_sigma);
      const double a = noise.sigma_prior_scale;
      im.prior_sigma =
          g.add(g.scale(g.square(sigma), -0.5 / (a * a)), log_sigma);
    }
  }

  im.prior_z = g.scale(g.reduce_sum(g.square(z)), -0.5);

  NodeId total = im.prior_z;
  if (im.likelihood >= 0) total = g.add(total, im.likelihood);
  if (im.prior_sigma >= 0) total = g.add(total, im.prior_sigma);
  im.total = total;
}

PosteriorTarget::~PosteriorTarget() = default;

int PosteriorTarget::dim() const { return impl_->dim; }
const PiVaeModel& PosteriorTarget::model() const { return impl_->model; }
const NoiseModel& PosteriorTarget::noise() const { return impl_->noise; }

double PosteriorTarget::log_density_grad(const VectorXd& q,
                                         VectorXd* grad) const {
  Impl& im = *impl_;
  im.set_parameters(q);
  double value;
  try {
    value = scalar_value(im.graph.forward(im.total));
    if (grad != nullptr) {
      im.store.zero_grads();
      im.graph.backward(im.total);
    }
  } catch (const NumericError&) {
    // Out of support (e.g. non-positive intensity at an event, or an
    // overflowing noise scale): the sampler treats this as a rejection.
    return kNegInf;
  }
  if (grad != nullptr) {
    grad->resize(im.dim);
    grad->head(im.model.latent) = im.store.grad("z").row(0).transpose();
    if (im.sample_sigma) {
      (*grad)(im.model.latent) = im.store.grad("log_sigma")(0, 0);
    }
  }
  return value;
}

std::unique_ptr<LogDensityTarget> PosteriorTarget::clone() const {
  return std::make_unique<PosteriorTarget>(impl_->model, impl_->data,
                                           impl_->noise);
}

double PosteriorTarget::value_or_throw(const VectorXd& q) const {
  Impl& im = *impl_;
  im.set_parameters(q);
  try {
    return scalar_value(im.graph.forward(im.total));
  } catch (const NumericError& original) {
    const auto blame = [&](NodeId node, const char* name) {
      if (node < 0) return;
      try {
        im.graph.forward(node);
      } catch (const NumericError& inner) {
        throw NumericError(std::string("log_posterior: ") + name +
                           " term is non-finite: " + inner.what());
      }
    };
    blame(im.likelihood, "likelihood");
    blame(im.prior_z, "latent prior");
    blame(im.prior_sigma, "noise prior");
    throw NumericError(std::string("log_posterior: ") + original.what());
  }
}

double log_posterior(const PiVaeModel& model, const ObservedData& data,
                     const NoiseModel& noise, const VectorXd& z,
                     double log_sigma, VectorXd* grad_z,
                     double* grad_log_sigma) {
  if (z.size() != model.latent) {
    throw ShapeError("log_posterior: z has length " + std::to_string(z.size()) +
                     ", model latent dimension is " +
                     std::to_string(model.latent));
  }
  const PosteriorTarget target(model, data, noise);
  VectorXd q(target.dim());
  q.head(model.latent) = z;
  if (noise.samples_sigma()) q(model.latent) = log_sigma;
  const double value = target.value_or_throw(q);
  if (grad_z != nullptr || grad_log_sigma != nullptr) {
    VectorXd g;
    target.log_density_grad(q, &g);
    if (grad_z != nullptr) *grad_z = g.head(model.latent);
    if (grad_log_sigma != nullptr) {
      *grad_log_sigma = noise.samples_sigma() ? g(model.latent) : 0.0;
    }
  }
  return value;
}

MatrixXd generate(const PiVaeModel& model, const MatrixXd& locations,
                  Rng& rng) {
  model.validate();
  if (locations.rows() == 0) return MatrixXd(0, model.channels);
  if (locations.cols() != model.dim) {
    throw ShapeError("generate: locations have dimension " +
                     std::to_string(locations.cols()) + ", model has " +
                     std::to_string(model.dim));
  }
  VectorXd z(model.latent);
  for (int l = 0; l < model.latent; ++l) z(l) = rng.normal();
  const VectorXd beta = model.decode(z);
  MatrixXd out(locations.rows(), model.channels);
  for (Eigen::Index k = 0; k < locations.rows(); ++k) {
    for (int c = 0; c < model.channels; ++c) {
      out(k, c) = model.function_value(beta, locations.row(k).transpose(), c);
    }
  }
  return out;
}

void OptimizeConfig::validate() const {
  if (steps < 1) throw ConfigError("optimize.steps: must be at least 1");
  if (!(learning_rate > 0.0)) {
    throw ConfigError("optimize.learning_rate: must be positive");
  }
  if (!std::isfinite(init_log_sigma)) {
    throw ConfigError("optimize.init_log_sigma: must be finite");
  }
}

OptimizeResult optimize_latent(const PiVaeModel& model,
                               const ObservedData& data,
                               const NoiseModel& noise,
                               const OptimizeConfig& config) {
  config.validate();
  const PosteriorTarget target(model, data, noise);
  const int dim = target.dim();

  Tensor q = Tensor::Zero(dim, 1);
  if (noise.samples_sigma()) q(model.latent, 0) = config.init_log_sigma;
  VectorXd grad(dim);
  double lp = target.log_density_grad(q.col(0), &grad);
  if (!std::isfinite(lp)) {
    throw NumericError(
        "optimize_latent: objective is not finite at initialization");
  }
  VectorXd best_q = q.col(0);
  double best = -lp;

  AdamConfig adam;
  adam.learning_rate = config.learning_rate;
  AdamState state = make_adam_state({&q}, adam);
  Tensor g(dim, 1);
  for (int step = 0; step < config.steps; ++step) {
    g.col(0) = -grad;
    adam_step({&q}, {&g}, state);
    lp = target.log_density_grad(q.col(0), &grad);
    if (!std::isfinite(lp)) {
      throw NumericError("optimize_latent: diverged at step " +
                         std::to_string(step));
    }
    if (-lp < best) {
      best = -lp;
      best_q = q.col(0);
    }
  }

  OptimizeResult out;
  out.z = best_q.head(model.latent);
  if (noise.samples_sigma()) {
    out.log_sigma = best_q(model.latent);
  } else if (noise.family == NoiseModel::Family::kGaussianFixedSigma) {
    out.log_sigma = std::log(noise.fixed_sigma);
  } else {
    out.log_sigma = 0.0;
  }
  out.objective = best;
  return out;
}

std::vector<std::string> parameter_names(const LatentPosterior& posterior) {
  std::vector<std::string> names;
  for (int l = 0; l < posterior.latent_dim(); ++l) {
    names.push_back("z" + std::to_string(l));
  }
  if (posterior.has_sigma()) names.push_back("log_sigma");
  return names;
}

VectorXd sigma_draws(const LatentPosterior& posterior) {
  if (!posterior.has_sigma()) return VectorXd();
  const MatrixXd all = posterior.chains.flattened();
  return all.col(all.cols() - 1).array().exp().matrix();
}

LatentPosterior infer(const PiVaeModel& model, const ObservedData& data,
                      const NoiseModel& noise, const HmcConfig& mcmc,
                      const OptimizeConfig& optimize) {
  mcmc.validate();
  const OptimizeResult start = optimize_latent(model, data, noise, optimize);
  const PosteriorTarget target(model, data, noise);

  HmcConfig local = mcmc;
  local.inits.clear();
  VectorXd centre(target.dim());
  centre.head(model.latent) = start.z;
  if (noise.samples_sigma()) centre(model.latent) = start.log_sigma;
  Rng jitter(Rng::mix(mcmc.seed, 0xA11C3ull));
  for (int c = 0; c < mcmc.chains; ++c) {
    VectorXd init = centre;
    for (Eigen::Index k = 0; k < init.size(); ++k) {
      init(k) += 0.01 * jitter.normal();
    }
    local.inits.push_back(std::move(init));
  }

  LatentPosterior post;
  post.model = model;
  post.noise = noise;
  post.chains = hmc_sample(target, local);
  post.diagnostics = diagnose(post.chains);
  post.converged = convergence_report(post.diagnostics, parameter_names(post),
                                      &post.warnings);
  return post;
}

MatrixXd function_draws(const LatentPosterior& posterior,
                        const MatrixXd& locations, int stride, int channel) {
  if (stride < 1) throw ConfigError("function_draws: stride must be >= 1");
  const PiVaeModel& model = posterior.model;
  if (channel < 0 || channel >= model.channels) {
    throw ShapeError("function_draws: channel out of range");
  }
  if (locations.cols() != model.dim) {
    throw ShapeError("function_draws: locations have dimension " +
                     std::to_string(locations.cols()) + ", model has " +
                     std::to_string(model.dim));
  }
  const MatrixXd phi = model.phi_rows(locations);
  std::vector<VectorXd> feats;
  feats.reserve(static_cast<std::size_t>(locations.rows()));
  for (Eigen::Index k = 0; k < locations.rows(); ++k) {
    feats.emplace_back(phi.row(k).transpose());
  }
  const int per_chain = (posterior.chains.num_draws() + stride - 1) / stride;
  const int rows = posterior.chains.chains() * per_chain;
  MatrixXd out(rows, locations.rows());
  int r = 0;
  for (int c = 0; c < posterior.chains.chains(); ++c) {
    const MatrixXd& d = posterior.chains.draws[static_cast<std::size_t>(c)];
    for (int s = 0; s < posterior.chains.num_draws(); s += stride, ++r) {
      const VectorXd beta =
          model.decode(d.row(s).head(model.latent).transpose());
      for (Eigen::Index k = 0; k < locations.rows(); ++k) {
        out(r, k) =
            beta.segment(static_cast<Eigen::Index>(channel) * model.features,
                         model.features)
                .dot(feats[static_cast<std::size_t>(k)]) *
                model.channel_scale(channel) +
            model.channel_shift(channel);
      }
    }
  }
  return out;
}

namespace {

double sorted_quantile(const std::vector<double>& sorted, double p) {
  const std::size_t n = sorted.size();
  if (n == 1) return sorted[0];
  const double pos = p * static_cast<double>(n - 1);
  const std::size_t lo = static_cast<std::size_t>(pos);
  const std::size_t hi = std::min(lo + 1, n - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] * (1.0 - frac) + sorted[hi] * frac;
}

}  // namespace

PredictionSummary summarize_function_draws(const MatrixXd& draws) {
  if (draws.rows() < 1) {
    throw ShapeError("summarize: need at least one draw");
  }
  const Eigen::Index n = draws.rows();
  PredictionSummary out;
  out.mean.resize(draws.cols());
  out.sd.resize(draws.cols());
  out.q025.resize(draws.cols());
  out.q50.resize(draws.cols());
  out.q975.resize(draws.cols());
  std::vector<double> column(static_cast<std::size_t>(n));
  for (Eigen::Index k = 0; k < draws.cols(); ++k) {
    const double mean = draws.col(k).mean();
    out.mean(k) = mean;
    out.sd(k) = n > 1 ? std::sqrt((draws.col(k).array() - mean).square().sum() /
                                  static_cast<double>(n - 1))
                      : 0.0;
    for (Eigen::Index r = 0; r < n; ++r) {
      column[static_cast<std::size_t>(r)] = draws(r, k);
    }
    std::sort(column.begin(), column.end());
    out.q025(k) = sorted_quantile(column, 0.025);
    out.q50(k) = sorted_quantile(column, 0.5);
    out.q975(k) = sorted_quantile(column, 0.975);
  }
  return out;
}

PredictionSummary predict(const LatentPosterior& posterior,
                          const MatrixXd& locations,
                          const PredictConfig& config) {
  MatrixXd draws =
      function_draws(posterior, locations, config.stride, config.channel);
  if (config.include_noise) {
    if (posterior.noise.family == NoiseModel::Family::kPoissonProcess) {
      throw ConfigError(
          "predict: additive noise bands apply to Gaussian families only");
    }
    VectorXd sigma(draws.rows());
    if (posterior.has_sigma()) {
      const VectorXd all = sigma_draws(posterior);
      int r = 0;
      for (int c = 0; c < posterior.chains.chains(); ++c) {
        for (int s = 0; s < posterior.chains.num_draws();
             s += config.stride, ++r) {
          sigma(r) = all(static_cast<Eigen::Index>(c) *
                             posterior.chains.num_draws() +
                         s);
        }
      }
    } else {
      sigma.setConstant(posterior.noise.fixed_sigma);
    }
    Rng rng(config.seed);
    for (Eigen::Index r = 0; r < draws.rows(); ++r) {
      for (Eigen::Index k = 0; k < draws.cols(); ++k) {
        draws(r, k) += sigma(r) * rng.normal();
      }
    }
  }
  return summarize_function_draws(draws);
}

namespace {

void append_double(std::string& out, double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  out.append(buf, res.ptr);
}

}  // namespace

void write_predictions_csv(const MatrixXd& locations,
                           const PredictionSummary& summary,
                           const std::string& path) {
  if (summary.mean.size() != locations.rows() ||
      summary.sd.size() != locations.rows() ||
      summary.q025.size() != locations.rows() ||
      summary.q50.size() != locations.rows() ||
      summary.q975.size() != locations.rows()) {
    throw ShapeError("predictions csv: summary size does not match locations");
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  std::string line;
  for (Eigen::Index d = 0; d < locations.cols(); ++d) {
    line += "s" + std::to_string(d) + ",";
  }
  line += "mean,sd,q2.5,q50,q97.5\n";
  out << line;
  for (Eigen::Index k = 0; k < locations.rows(); ++k) {
    line.clear();
    for (Eigen::Index d = 0; d < locations.cols(); ++d) {
      append_double(line, locations(k, d));
      line += ',';
    }
    append_double(line, summary.mean(k));
    line += ',';
    append_double(line, summary.sd(k));
    line += ',';
    append_double(line, summary.q025(k));
    line += ',';
    append_double(line, summary.q50(k));
    line += ',';
    append_double(line, summary.q975(k));
    line += '\n';
    out << line;
  }
  if (!out) throw IoError("write to '" + path + "' failed");
}

}  // namespace pivae
