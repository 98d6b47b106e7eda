#include "pivae/samplers.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <sstream>

#include "pivae/errors.hpp"

namespace pivae {

namespace {

VectorXd standard_normal(Eigen::Index n, Rng& rng) {
  VectorXd z(n);
  for (Eigen::Index i = 0; i < n; ++i) z(i) = rng.normal();
  return z;
}

void check_range(const Range& r, const std::string& name) {
  if (!std::isfinite(r.lo) || !std::isfinite(r.hi) || r.lo > r.hi) {
    throw ConfigError(name + ": invalid range [" + std::to_string(r.lo) +
                      ", " + std::to_string(r.hi) + "]");
  }
}

}  // namespace

VectorXd sample_gp(const KernelSpec& spec, const MatrixXd& locations,
                   Rng& rng) {
  spec.validate();
  if (locations.rows() < 1) {
    throw ShapeError("sample_gp: need at least one location");
  }
  if (!all_finite(locations)) {
    throw NumericError("sample_gp: non-finite locations");
  }
  const MatrixXd chol = robust_cholesky_lower(
      covariance_matrix(spec, locations), spec.jitter, "sample_gp");
  return chol * standard_normal(locations.rows(), rng);
}

// --------------------------------------------------------------------------
// Monotone cubic family

void CubicConfig::validate() const {
  check_range(a, "cubic.a");
  check_range(b, "cubic.b");
  check_range(c, "cubic.c");
  check_range(d, "cubic.d");
  check_range(interval, "cubic.interval");
  if (interval.lo >= interval.hi) {
    throw ConfigError("cubic.interval: must have positive width");
  }
  if (points < 1) throw ConfigError("cubic.points: need at least one point");
  if (budget < 1) throw ConfigError("cubic.budget: must be positive");
}

double cubic_eval(double a, double b, double c, double d, double s) {
  return ((a * s + b) * s + c) * s + d;
}

bool cubic_is_monotone(double a, double b, double c, double lo, double hi) {
  // Derivative p(s) = 3a s^2 + 2b s + c changes sign on (lo, hi) exactly when
  // a simple root lies strictly inside.
  const double pa = 3.0 * a;
  const double pb = 2.0 * b;
  const double pc = c;
  if (pa == 0.0) {
    if (pb == 0.0) return true;  // constant derivative
    const double root = -pc / pb;
    return !(root > lo && root < hi);
  }
  const double disc = pb * pb - 4.0 * pa * pc;
  if (disc <= 0.0) return true;  // no simple real roots
  const double sq = std::sqrt(disc);
  const double q = -0.5 * (pb + std::copysign(sq, pb == 0.0 ? 1.0 : pb));
  double r1 = q / pa;
  double r2 = pc / q;
  if (r1 > r2) std::swap(r1, r2);
  return !((r1 > lo && r1 < hi) || (r2 > lo && r2 < hi));
}

FunctionDraw sample_cubic(Rng& rng, const CubicConfig& config) {
  config.validate();
  for (int attempt = 0; attempt < config.budget; ++attempt) {
    const double a = rng.uniform(config.a.lo, config.a.hi);
    const double b = rng.uniform(config.b.lo, config.b.hi);
    const double c = rng.uniform(config.c.lo, config.c.hi);
    const double d = rng.uniform(config.d.lo, config.d.hi);
    if (!cubic_is_monotone(a, b, c, config.interval.lo, config.interval.hi)) {
      continue;
    }
    FunctionDraw out;
    out.locations.resize(config.points, 1);
    out.values.resize(config.points);
    for (int k = 0; k < config.points; ++k) {
      const double s = rng.uniform(config.interval.lo, config.interval.hi);
      out.locations(k, 0) = s;
      out.values(k) = cubic_eval(a, b, c, d, s);
    }
    return out;
  }
  throw ConfigError("sample_cubic: no monotone cubic in " +
                    std::to_string(config.budget) +
                    " attempts; widen the coefficient ranges");
}

// --------------------------------------------------------------------------
// Log-Gaussian Cox process

double LgcpDraw::intensity_at(double t) const {
  if (!(t >= 0.0 && t <= horizon)) {
    throw Error("lgcp: time " + std::to_string(t) + " outside [0, " +
                std::to_string(horizon) + "]");
  }
  const Eigen::Index cells = gp.size() - 1;
  const double u = t / horizon * static_cast<double>(cells);
  const Eigen::Index i =
      std::min<Eigen::Index>(static_cast<Eigen::Index>(u), cells - 1);
  const double f = u - static_cast<double>(i);
  return std::exp(gp(i) * (1.0 - f) + gp(i + 1) * f);
}

double LgcpDraw::integral_at(double t) const {
  if (!(t >= 0.0 && t <= horizon)) {
    throw Error("lgcp: time " + std::to_string(t) + " outside [0, " +
                std::to_string(horizon) + "]");
  }
  const Eigen::Index cells = gp.size() - 1;
  const double u = t / horizon * static_cast<double>(cells);
  const Eigen::Index i =
      std::min<Eigen::Index>(static_cast<Eigen::Index>(u), cells - 1);
  const double partial = t - grid(i);
  return cumulative(i) + partial * 0.5 * (intensity(i) + intensity_at(t));
}

const MatrixXd& GridCholeskyCache::factor(const KernelSpec& spec,
                                          double horizon, int resolution) {
  std::ostringstream key;
  key.precision(17);
  key << kernel_family_name(spec.family) << '|' << spec.lengthscale << '|'
      << spec.amplitude << '|' << spec.jitter << '|' << horizon << '|'
      << resolution;
  auto it = cache_.find(key.str());
  if (it != cache_.end()) return it->second;

  const Eigen::Index pts = resolution + 1;
  MatrixXd grid(pts, 1);
  for (Eigen::Index i = 0; i < pts; ++i) {
    grid(i, 0) = horizon * static_cast<double>(i) /
                 static_cast<double>(resolution);
  }
  MatrixXd chol = robust_cholesky_lower(covariance_matrix(spec, grid),
                                        spec.jitter, "sample_lgcp");
  return cache_.emplace(key.str(), std::move(chol)).first->second;
}

LgcpDraw sample_lgcp(const KernelSpec& spec, double horizon, int resolution,
                     int target_events, Rng& rng, double gp_mean,
                     GridCholeskyCache* cache) {
  spec.validate();
  if (!(horizon > 0.0) || !std::isfinite(horizon)) {
    throw ConfigError("sample_lgcp: horizon must be positive and finite");
  }
  if (resolution < 256) {
    throw ConfigError("sample_lgcp: resolution must be at least 256 cells");
  }
  const Eigen::Index pts = resolution + 1;

  VectorXd gp;
  if (cache != nullptr) {
    gp = cache->factor(spec, horizon, resolution) * standard_normal(pts, rng);
  } else {
    MatrixXd grid(pts, 1);
    for (Eigen::Index i = 0; i < pts; ++i) {
      grid(i, 0) = horizon * static_cast<double>(i) /
                   static_cast<double>(resolution);
    }
    const MatrixXd chol = robust_cholesky_lower(
        covariance_matrix(spec, grid), spec.jitter, "sample_lgcp");
    gp = chol * standard_normal(pts, rng);
  }
  gp.array() += gp_mean;
  if (!gp.allFinite()) throw NumericError("sample_lgcp: non-finite latent");
  // Scalar std::exp, entry for entry, so exp(stored latent) reproduces the
  // stored intensity bit-exactly (vectorized exp differs in the last ulp).
  VectorXd lambda(pts);
  for (Eigen::Index i = 0; i < pts; ++i) lambda(i) = std::exp(gp(i));
  if (!lambda.allFinite()) {
    throw NumericError("sample_lgcp: intensity overflow");
  }
  const double lambda_max = lambda.maxCoeff();

  // Log-linear interpolation of the latent on the (possibly dilated) axis.
  const auto intensity_on = [&](double t, double span) {
    const double u = t / span * static_cast<double>(resolution);
    const Eigen::Index i = std::min<Eigen::Index>(
        static_cast<Eigen::Index>(u), static_cast<Eigen::Index>(resolution) - 1);
    const double f = u - static_cast<double>(i);
    return std::exp(gp(i) * (1.0 - f) + gp(i + 1) * f);
  };
  const auto thin = [&](double span) {
    std::vector<double> events;
    for (double t = rng.exponential(lambda_max); t < span;
         t += rng.exponential(lambda_max)) {
      if (rng.uniform() * lambda_max < intensity_on(t, span)) {
        events.push_back(t);
      }
    }
    return events;
  };

  // Retarget the event count by dilating the time axis: the latent values are
  // kept, the horizon is rescaled by target/realized, and thinning reruns on
  // the stretched grid.
  double span = horizon;
  std::vector<double> events = thin(span);
  if (target_events > 0) {
    double best_span = span;
    std::vector<double> best = events;
    auto miss = [&](std::size_t n) {
      return std::abs(static_cast<long>(n) -
                      static_cast<long>(target_events));
    };
    for (int retry = 0;
         retry < 20 && miss(events.size()) != 0; ++retry) {
      const double realized =
          std::max<double>(1.0, static_cast<double>(events.size()));
      span *= static_cast<double>(target_events) / realized;
      events = thin(span);
      if (miss(events.size()) < miss(best.size())) {
        best = events;
        best_span = span;
      }
    }
    if (miss(events.size()) > miss(best.size())) {
      events = best;
      span = best_span;
    }
  }

  LgcpDraw out;
  out.horizon = span;
  out.gp = gp;
  out.intensity = lambda;
  out.grid.resize(pts);
  out.cumulative.resize(pts);
  const double dt = span / static_cast<double>(resolution);
  out.cumulative(0) = 0.0;
  for (Eigen::Index i = 0; i < pts; ++i) {
    out.grid(i) = span * static_cast<double>(i) /
                  static_cast<double>(resolution);
    if (i > 0) {
      out.cumulative(i) =
          out.cumulative(i - 1) + dt * 0.5 * (lambda(i - 1) + lambda(i));
    }
  }
  out.events = std::move(events);
  return out;
}

// --------------------------------------------------------------------------
// Corpus generation

std::vector<Range> PriorConfig::effective_box() const {
  if (!box.empty()) return box;
  return std::vector<Range>(static_cast<std::size_t>(dim), Range{-1.0, 1.0});
}

void PriorConfig::validate() const {
  if (draws < 1) throw ConfigError("prior.draws: need at least one draw");
  if (points < 1) throw ConfigError("prior.points: need at least one point");
  if (dim < 1) throw ConfigError("prior.dim: dimension must be at least 1");
  if (!box.empty() && static_cast<int>(box.size()) != dim) {
    throw ConfigError("prior.box: expected " + std::to_string(dim) +
                      " ranges, got " + std::to_string(box.size()));
  }
  for (std::size_t i = 0; i < box.size(); ++i) {
    check_range(box[i], "prior.box[" + std::to_string(i) + "]");
    if (box[i].lo >= box[i].hi) {
      throw ConfigError("prior.box[" + std::to_string(i) +
                        "]: must have positive width");
    }
  }
  switch (family) {
    case PriorFamily::kGp:
      if (!(lengthscale.lo > 0.0) || lengthscale.lo > lengthscale.hi) {
        throw ConfigError("prior.lengthscale: need 0 < lo <= hi");
      }
      if (!(amplitude > 0.0)) {
        throw ConfigError("prior.amplitude: must be positive");
      }
      break;
    case PriorFamily::kCubic:
      if (dim != 1) throw ConfigError("prior.cubic: requires dim 1");
      break;
    case PriorFamily::kLgcp:
      if (dim != 1) throw ConfigError("prior.lgcp: requires dim 1");
      if (!(lengthscale.lo > 0.0) || lengthscale.lo > lengthscale.hi) {
        throw ConfigError("prior.lengthscale: need 0 < lo <= hi");
      }
      if (!(lgcp.horizon > 0.0)) {
        throw ConfigError("prior.lgcp.horizon: must be positive");
      }
      if (lgcp.resolution < 256) {
        throw ConfigError("prior.lgcp.resolution: must be at least 256");
      }
      break;
  }
}

PriorDataset build_prior_dataset(const PriorConfig& config, Rng& rng,
                                 std::vector<double>* lengthscales_out) {
  config.validate();
  const std::vector<Range> box = config.effective_box();
  if (lengthscales_out != nullptr) lengthscales_out->clear();

  const auto sample_lengthscale = [&] {
    const double lo = std::log(config.lengthscale.lo);
    const double hi = std::log(config.lengthscale.hi);
    return std::exp(rng.uniform(lo, hi));
  };
  const auto sample_box_locations = [&](int k) {
    MatrixXd locs(k, config.dim);
    for (int i = 0; i < k; ++i) {
      for (int j = 0; j < config.dim; ++j) {
        locs(i, j) = rng.uniform(box[static_cast<std::size_t>(j)].lo,
                                 box[static_cast<std::size_t>(j)].hi);
      }
    }
    return locs;
  };

  PriorDataset dataset;
  dataset.dim = config.dim;
  dataset.with_integral = config.family == PriorFamily::kLgcp;
  dataset.draws.reserve(static_cast<std::size_t>(config.draws));

  GridCholeskyCache lgcp_cache;
  CubicConfig cubic = config.cubic;
  cubic.points = config.points;
  cubic.interval = box[0];

  for (int i = 0; i < config.draws; ++i) {
    FunctionDraw draw;
    switch (config.family) {
      case PriorFamily::kGp: {
        KernelSpec spec{config.kernel, sample_lengthscale(), config.amplitude,
                        config.jitter};
        if (lengthscales_out != nullptr) {
          lengthscales_out->push_back(spec.lengthscale);
        }
        draw.locations = sample_box_locations(config.points);
        draw.values = sample_gp(spec, draw.locations, rng);
        break;
      }
      case PriorFamily::kCubic:
        draw = sample_cubic(rng, cubic);
        break;
      case PriorFamily::kLgcp: {
        // A draw with no events carries no training signal; redraw.
        for (int redraw = 0; redraw < 100; ++redraw) {
          KernelSpec spec{config.kernel, sample_lengthscale(),
                          config.amplitude, config.jitter};
          const LgcpDraw lgcp =
              sample_lgcp(spec, config.lgcp.horizon, config.lgcp.resolution,
                          config.points, rng, config.lgcp.gp_mean,
                          &lgcp_cache);
          if (lgcp.events.empty()) continue;
          if (lengthscales_out != nullptr) {
            lengthscales_out->push_back(spec.lengthscale);
          }
          const Eigen::Index k =
              static_cast<Eigen::Index>(lgcp.events.size());
          draw.locations.resize(k, 1);
          draw.values.resize(k);
          draw.integral.resize(k);
          for (Eigen::Index e = 0; e < k; ++e) {
            const double t = lgcp.events[static_cast<std::size_t>(e)];
            draw.locations(e, 0) = t;
            draw.values(e) = lgcp.intensity_at(t);
            draw.integral(e) = lgcp.integral_at(t);
          }
          break;
        }
        if (draw.values.size() == 0) {
          throw NumericError(
              "build_prior_dataset: lgcp produced no events in 100 draws");
        }
        break;
      }
    }
    draw.id = i + 1;
    dataset.draws.push_back(std::move(draw));
  }
  dataset.validate();
  return dataset;
}

}  // namespace pivae
