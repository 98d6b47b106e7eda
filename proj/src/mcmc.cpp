#include "pivae/mcmc.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

#include "pivae/errors.hpp"
#include "pivae/parallel.hpp"
#include "pivae/rng.hpp"

namespace pivae {

void HmcConfig::validate() const {
  if (chains < 1) throw ConfigError("hmc.chains: must be at least 1");
  if (warmup < 0) throw ConfigError("hmc.warmup: must be non-negative");
  if (draws < 1) throw ConfigError("hmc.draws: must be at least 1");
  if (leapfrog < 1) throw ConfigError("hmc.leapfrog: must be at least 1");
  if (!(target_accept > 0.0) || !(target_accept < 1.0)) {
    throw ConfigError("hmc.target_accept: must lie in (0, 1)");
  }
  if (!(init_radius > 0.0)) {
    throw ConfigError("hmc.init_radius: must be positive");
  }
  if (!inits.empty() && static_cast<int>(inits.size()) != chains) {
    throw ConfigError("hmc.inits: need one start point per chain");
  }
}

int ChainSet::total_divergences() const {
  int total = 0;
  for (const int d : divergences) total += d;
  return total;
}

void ChainSet::validate() const {
  if (draws.empty()) throw ShapeError("chains: empty");
  const Eigen::Index s = draws[0].rows();
  const Eigen::Index p = draws[0].cols();
  for (const MatrixXd& d : draws) {
    if (d.rows() != s || d.cols() != p) {
      throw ShapeError("chains: ragged draw matrices");
    }
    if (!d.allFinite()) throw NumericError("chains: non-finite draw");
  }
}

MatrixXd ChainSet::flattened() const {
  validate();
  MatrixXd out(static_cast<Eigen::Index>(chains()) * num_draws(), dim());
  for (int c = 0; c < chains(); ++c) {
    out.middleRows(static_cast<Eigen::Index>(c) * num_draws(), num_draws()) =
        draws[static_cast<std::size_t>(c)];
  }
  return out;
}

namespace {

double kinetic_energy(const VectorXd& p, const VectorXd& inv_mass) {
  return 0.5 * (inv_mass.array() * p.array().square()).sum();
}

// Integrator state shared by the public helper and the sampler; starts from
// a point whose density and gradient are already known.
struct TrajectoryState {
  VectorXd q, p, grad;
  double log_density = 0.0;
  bool valid = true;  // false once the trajectory leaves the support
};

void integrate(const LogDensityTarget& target, TrajectoryState& s,
               const VectorXd& inv_mass, double step, int n_steps,
               const std::string& where) {
  s.p += 0.5 * step * s.grad;
  for (int k = 0; k < n_steps; ++k) {
    s.q.array() += step * inv_mass.array() * s.p.array();
    s.log_density = target.log_density_grad(s.q, &s.grad);
    if (s.log_density == -std::numeric_limits<double>::infinity()) {
      s.valid = false;
      return;
    }
    if (!std::isfinite(s.log_density) || !s.grad.allFinite()) {
      throw NumericError(where + ": non-finite log density or gradient "
                                 "during integration");
    }
    s.p += (k + 1 < n_steps ? step : 0.5 * step) * s.grad;
  }
}

// Finite-difference spot check of the target gradient at the start point.
// Probes that step outside the support are skipped.
void check_gradient(const LogDensityTarget& target, const VectorXd& q,
                    const VectorXd& grad, const std::string& where) {
  VectorXd probe = q;
  for (int k = 0; k < q.size(); ++k) {
    const double h = 1e-5 * std::max(1.0, std::abs(q(k)));
    probe(k) = q(k) + h;
    const double hi = target.log_density_grad(probe, nullptr);
    probe(k) = q(k) - h;
    const double lo = target.log_density_grad(probe, nullptr);
    probe(k) = q(k);
    if (!std::isfinite(hi) || !std::isfinite(lo)) continue;
    const double fd = (hi - lo) / (2.0 * h);
    const double rel = std::abs(fd - grad(k)) /
                       std::max({1.0, std::abs(fd), std::abs(grad(k))});
    if (!(rel < 5e-3)) {
      throw NumericError(where + ": gradient check failed at coordinate " +
                         std::to_string(k) + " (analytic " +
                         std::to_string(grad(k)) + ", finite difference " +
                         std::to_string(fd) + ")");
    }
  }
}

// Doubling/halving search for a step size whose single-step acceptance
// probability straddles 1/2.
double initial_step_size(const LogDensityTarget& target,
                         const TrajectoryState& start,
                         const VectorXd& inv_mass, Rng& rng,
                         const std::string& where) {
  VectorXd p(start.q.size());
  for (Eigen::Index k = 0; k < p.size(); ++k) {
    p(k) = rng.normal() / std::sqrt(inv_mass(k));
  }
  const double h0 = -start.log_density + kinetic_energy(p, inv_mass);
  double eps = 1.0;
  auto log_accept = [&](double step) {
    TrajectoryState s = start;
    s.p = p;
    integrate(target, s, inv_mass, step, 1, where);
    if (!s.valid) return -std::numeric_limits<double>::infinity();
    return h0 - (-s.log_density + kinetic_energy(s.p, inv_mass));
  };
  const double crit = std::log(0.5);
  const bool grow = log_accept(eps) > crit;
  for (int iter = 0; iter < 100; ++iter) {
    eps *= grow ? 2.0 : 0.5;
    if (eps > 1e12 || eps < 1e-12) break;
    const bool above = log_accept(eps) > crit;
    if (above != grow) break;
  }
  return std::min(eps, 1e12);
}

// Warmup schedule: a step-size-only opening buffer, doubling mass-estimation
// windows, and a step-size-only closing buffer.
struct MassWindows {
  int first = 0;                // start of the estimation region
  std::vector<int> ends;        // iterations (exclusive) closing each window
};

MassWindows plan_windows(int warmup) {
  MassWindows w;
  if (warmup < 20) return w;
  const int init_buf = std::max(1, static_cast<int>(0.15 * warmup));
  const int term_buf = std::max(1, static_cast<int>(0.10 * warmup));
  const int middle = warmup - init_buf - term_buf;
  if (middle < 5) return w;
  w.first = init_buf;
  if (middle < 25) {
    w.ends.push_back(init_buf + middle);
    return w;
  }
  int size = 25;
  int at = init_buf;
  int remaining = middle;
  while (remaining > 0) {
    int take = size;
    if (remaining < 2 * size) take = remaining;
    at += take;
    remaining -= take;
    w.ends.push_back(at);
    size *= 2;
  }
  return w;
}

struct ChainOutput {
  MatrixXd draws;
  double accept_rate = 0.0;
  double step_size = 0.0;
  VectorXd mass_diag;
  int divergences = 0;
};

ChainOutput run_chain(const LogDensityTarget& target, const HmcConfig& config,
                      int chain_index) {
  const std::string where = "hmc (chain " + std::to_string(chain_index) + ")";
  const int P = target.dim();
  Rng rng(Rng::mix(config.seed, static_cast<std::uint64_t>(chain_index)));

  TrajectoryState cur;
  if (!config.inits.empty()) {
    cur.q = config.inits[static_cast<std::size_t>(chain_index)];
    if (cur.q.size() != P) {
      throw ShapeError(where + ": init point has wrong dimension");
    }
  } else {
    cur.q.resize(P);
    for (int k = 0; k < P; ++k) {
      cur.q(k) = rng.uniform(-config.init_radius, config.init_radius);
    }
  }
  cur.grad.resize(P);
  cur.log_density = target.log_density_grad(cur.q, &cur.grad);
  if (!std::isfinite(cur.log_density) || !cur.grad.allFinite()) {
    throw NumericError(where + ": non-finite log density or gradient at "
                               "initialization");
  }
  check_gradient(target, cur.q, cur.grad, where);

  VectorXd inv_mass = VectorXd::Ones(P);
  double eps = initial_step_size(target, cur, inv_mass, rng, where);

  // Dual averaging (restarted whenever the mass matrix changes).
  const double gamma = 0.05, t0 = 10.0, kappa = 0.75;
  double mu = std::log(10.0 * eps);
  double log_eps = std::log(eps);
  double log_eps_bar = log_eps;
  double h_bar = 0.0;
  int adapt_m = 0;

  const MassWindows windows = plan_windows(config.warmup);
  std::size_t next_window = 0;
  VectorXd welford_mean = VectorXd::Zero(P);
  VectorXd welford_m2 = VectorXd::Zero(P);
  int welford_n = 0;

  const int l_lo = std::max(1, config.leapfrog / 2);
  const int l_hi = std::max(l_lo, (3 * config.leapfrog) / 2);

  ChainOutput out;
  out.draws.resize(config.draws, P);
  int warmup_accepts = 0;
  double accept_sum = 0.0;

  const int total = config.warmup + config.draws;
  for (int iter = 0; iter < total; ++iter) {
    const bool warming = iter < config.warmup;
    const int n_steps =
        l_lo + static_cast<int>(rng.integer(
                   static_cast<std::uint64_t>(l_hi - l_lo + 1)));
    TrajectoryState prop = cur;
    prop.p.resize(P);
    for (int k = 0; k < P; ++k) {
      prop.p(k) = rng.normal() / std::sqrt(inv_mass(k));
    }
    const double h0 = -cur.log_density + kinetic_energy(prop.p, inv_mass);
    integrate(target, prop, inv_mass, eps, n_steps, where);

    double alpha = 0.0;
    bool divergent = false;
    if (!prop.valid) {
      divergent = true;
    } else {
      const double h1 =
          -prop.log_density + kinetic_energy(prop.p, inv_mass);
      const double dh = h1 - h0;
      if (!std::isfinite(dh) || dh > 1000.0) {
        divergent = true;
      } else {
        alpha = std::min(1.0, std::exp(-dh));
      }
    }
    const bool accept = rng.uniform() < alpha;
    if (accept) {
      cur.q = prop.q;
      cur.log_density = prop.log_density;
      cur.grad = prop.grad;
    }

    if (warming) {
      warmup_accepts += accept ? 1 : 0;
      adapt_m += 1;
      h_bar = (1.0 - 1.0 / (adapt_m + t0)) * h_bar +
              (config.target_accept - alpha) / (adapt_m + t0);
      log_eps = mu - std::sqrt(static_cast<double>(adapt_m)) / gamma * h_bar;
      const double eta = std::pow(static_cast<double>(adapt_m), -kappa);
      log_eps_bar = eta * log_eps + (1.0 - eta) * log_eps_bar;
      eps = std::exp(log_eps);
      if (!std::isfinite(eps) || eps < 1e-300) {
        throw NumericError(where + ": step size collapsed during warmup");
      }

      if (next_window < windows.ends.size() && iter >= windows.first) {
        welford_n += 1;
        const VectorXd delta = cur.q - welford_mean;
        welford_mean += delta / welford_n;
        welford_m2.array() +=
            delta.array() * (cur.q - welford_mean).array();
        if (iter + 1 == windows.ends[next_window]) {
          if (welford_n >= 3) {
            const double n = static_cast<double>(welford_n);
            const VectorXd var = welford_m2 / (n - 1.0);
            const VectorXd reg =
                ((n / (n + 5.0)) * var.array() + 1e-3 * (5.0 / (n + 5.0)))
                    .matrix();
            if (reg.allFinite() && (reg.array() > 0.0).all()) {
              inv_mass = reg;
            }
          }
          welford_mean.setZero();
          welford_m2.setZero();
          welford_n = 0;
          next_window += 1;
          // Restart step-size adaptation against the new metric.
          eps = initial_step_size(target, cur, inv_mass, rng, where);
          mu = std::log(10.0 * eps);
          log_eps = std::log(eps);
          log_eps_bar = log_eps;
          h_bar = 0.0;
          adapt_m = 0;
        }
      }

      if (iter + 1 == config.warmup) {
        if (warmup_accepts == 0) {
          throw NumericError(where + ": step size collapsed (no proposal "
                                     "accepted during warmup)");
        }
        eps = std::exp(log_eps_bar);
      }
    } else {
      out.draws.row(iter - config.warmup) = cur.q.transpose();
      accept_sum += alpha;
      if (divergent) out.divergences += 1;
    }
  }

  out.accept_rate = accept_sum / config.draws;
  out.step_size = eps;
  out.mass_diag = inv_mass;
  return out;
}

}  // namespace

LeapfrogResult leapfrog(const LogDensityTarget& target, VectorXd q, VectorXd p,
                        const VectorXd& inv_mass, double step, int n_steps) {
  if (q.size() != target.dim() || p.size() != q.size() ||
      inv_mass.size() != q.size()) {
    throw ShapeError("leapfrog: dimension mismatch");
  }
  if (n_steps < 1) throw ConfigError("leapfrog: need at least one step");
  TrajectoryState s;
  s.q = std::move(q);
  s.p = std::move(p);
  s.grad.resize(s.q.size());
  s.log_density = target.log_density_grad(s.q, &s.grad);
  if (s.log_density == -std::numeric_limits<double>::infinity()) {
    return {s.q, s.p, s.log_density, false};
  }
  if (!std::isfinite(s.log_density) || !s.grad.allFinite()) {
    throw NumericError("leapfrog: non-finite log density or gradient at "
                       "start point");
  }
  integrate(target, s, inv_mass, step, n_steps, "leapfrog");
  return {s.q, s.p, s.log_density, s.valid};
}

ChainSet hmc_sample(const LogDensityTarget& target, const HmcConfig& config) {
  config.validate();
  if (target.dim() < 1) throw ShapeError("hmc: target dimension must be >= 1");
  for (const VectorXd& init : config.inits) {
    if (init.size() != target.dim()) {
      throw ShapeError("hmc: init point dimension mismatch");
    }
    if (!init.allFinite()) throw NumericError("hmc: non-finite init point");
  }

  ChainSet set;
  set.seed = config.seed;
  set.draws.resize(static_cast<std::size_t>(config.chains));
  set.accept_rate.resize(config.chains);
  set.step_size.resize(config.chains);
  set.mass_diag.resize(static_cast<std::size_t>(config.chains));
  set.divergences.assign(static_cast<std::size_t>(config.chains), 0);

  std::vector<std::exception_ptr> failures(
      static_cast<std::size_t>(config.chains));
  parallel_for(static_cast<std::size_t>(config.chains), config.threads,
               [&](std::size_t c) {
                 try {
                   const auto local = target.clone();
                   ChainOutput out =
                       run_chain(*local, config, static_cast<int>(c));
                   set.draws[c] = std::move(out.draws);
                   set.accept_rate(static_cast<Eigen::Index>(c)) =
                       out.accept_rate;
                   set.step_size(static_cast<Eigen::Index>(c)) =
                       out.step_size;
                   set.mass_diag[c] = std::move(out.mass_diag);
                   set.divergences[c] = out.divergences;
                 } catch (...) {
                   failures[c] = std::current_exception();
                 }
               });
  for (const auto& failure : failures) {
    if (failure) std::rethrow_exception(failure);
  }
  set.validate();
  return set;
}

namespace {

// Split every chain into halves (dropping the middle draw when odd) and
// return the sequences for one parameter.
std::vector<VectorXd> split_sequences(const ChainSet& chains, int param) {
  const int h = chains.num_draws() / 2;
  std::vector<VectorXd> seq;
  seq.reserve(static_cast<std::size_t>(2 * chains.chains()));
  for (const MatrixXd& d : chains.draws) {
    seq.push_back(d.col(param).head(h));
    seq.push_back(d.col(param).tail(h));
  }
  return seq;
}

struct PooledVariance {
  double within = 0.0;    // W: mean within-sequence variance
  double var_plus = 0.0;  // (h-1)/h W + B/h
  bool degenerate = false;
};

PooledVariance pooled_variance(const std::vector<VectorXd>& seq) {
  const double h = static_cast<double>(seq[0].size());
  const double m = static_cast<double>(seq.size());
  double w = 0.0;
  VectorXd means(seq.size());
  for (std::size_t i = 0; i < seq.size(); ++i) {
    means(static_cast<Eigen::Index>(i)) = seq[i].mean();
    w += (seq[i].array() - means(static_cast<Eigen::Index>(i)))
             .square()
             .sum() /
         (h - 1.0);
  }
  w /= m;
  const double var_means =
      (means.array() - means.mean()).square().sum() / (m - 1.0);
  PooledVariance out;
  out.within = w;
  out.var_plus = (h - 1.0) / h * w + var_means;
  out.degenerate = !(out.var_plus > 1e-300) || !(w > 1e-300);
  return out;
}

void check_diagnosable(const ChainSet& chains) {
  chains.validate();
  if (chains.chains() < 2) {
    throw ShapeError("diagnostics: need at least 2 chains");
  }
  if (chains.num_draws() < 4) {
    throw ShapeError("diagnostics: need at least 4 draws per chain");
  }
}

}  // namespace

VectorXd rhat(const ChainSet& chains) {
  check_diagnosable(chains);
  VectorXd out(chains.dim());
  for (int j = 0; j < chains.dim(); ++j) {
    const auto seq = split_sequences(chains, j);
    const PooledVariance v = pooled_variance(seq);
    out(j) = v.degenerate ? std::numeric_limits<double>::quiet_NaN()
                          : std::sqrt(v.var_plus / v.within);
  }
  return out;
}

VectorXd ess(const ChainSet& chains) {
  check_diagnosable(chains);
  const int C = chains.chains();
  const int S = chains.num_draws();
  const double cap = static_cast<double>(C) * S;
  VectorXd out(chains.dim());
  for (int j = 0; j < chains.dim(); ++j) {
    const auto seq = split_sequences(chains, j);
    const PooledVariance v = pooled_variance(seq);
    if (v.degenerate) {
      out(j) = std::numeric_limits<double>::quiet_NaN();
      continue;
    }
    const Eigen::Index h = seq[0].size();
    std::vector<VectorXd> centered;
    centered.reserve(seq.size());
    for (const VectorXd& s : seq) {
      centered.push_back((s.array() - s.mean()).matrix());
    }
    auto mean_autocov = [&](Eigen::Index t) {
      double acc = 0.0;
      for (const VectorXd& s : centered) {
        acc += s.head(h - t).dot(s.tail(h - t)) / static_cast<double>(h);
      }
      return acc / static_cast<double>(centered.size());
    };
    auto rho = [&](Eigen::Index t) {
      return t == 0 ? 1.0
                    : 1.0 - (v.within - mean_autocov(t)) / v.var_plus;
    };
    // Sum autocorrelations in consecutive pairs, truncating at the first
    // non-positive pair and forcing the pair sums non-increasing.
    double tau = 0.0;
    double prev_pair = std::numeric_limits<double>::infinity();
    for (Eigen::Index t = 0; t + 1 < h; t += 2) {
      double pair = rho(t) + rho(t + 1);
      if (!(pair > 0.0)) break;
      pair = std::min(pair, prev_pair);
      prev_pair = pair;
      tau += 2.0 * pair;
    }
    tau -= 1.0;
    const double n_total =
        static_cast<double>(centered.size()) * static_cast<double>(h);
    const double e = n_total / std::max(tau, 1e-12);
    out(j) = std::min(e, cap);
  }
  return out;
}

Diagnostics diagnose(const ChainSet& chains) {
  Diagnostics d;
  d.rhat = rhat(chains);
  d.ess = ess(chains);
  d.ess_per_draw =
      d.ess / (static_cast<double>(chains.chains()) * chains.num_draws());
  d.degenerate.resize(static_cast<std::size_t>(chains.dim()));
  for (int j = 0; j < chains.dim(); ++j) {
    d.degenerate[static_cast<std::size_t>(j)] = std::isnan(d.rhat(j));
  }
  d.divergence_count = chains.total_divergences();
  return d;
}

double Diagnostics::max_rhat() const {
  double worst = std::numeric_limits<double>::quiet_NaN();
  for (Eigen::Index j = 0; j < rhat.size(); ++j) {
    if (std::isnan(rhat(j))) continue;
    if (std::isnan(worst) || rhat(j) > worst) worst = rhat(j);
  }
  return worst;
}

bool convergence_report(const Diagnostics& diagnostics,
                        const std::vector<std::string>& names,
                        std::vector<std::string>* warnings,
                        double threshold) {
  if (static_cast<Eigen::Index>(names.size()) != diagnostics.rhat.size()) {
    throw ShapeError("convergence report: " + std::to_string(names.size()) +
                     " names for " + std::to_string(diagnostics.rhat.size()) +
                     " parameters");
  }
  bool converged = true;
  char buf[160];
  for (Eigen::Index j = 0; j < diagnostics.rhat.size(); ++j) {
    const std::string& name = names[static_cast<std::size_t>(j)];
    if (diagnostics.degenerate[static_cast<std::size_t>(j)]) {
      if (warnings != nullptr) {
        warnings->push_back("parameter " + name + " has zero variance");
      }
      continue;
    }
    if (diagnostics.rhat(j) > threshold) {
      converged = false;
      if (warnings != nullptr) {
        std::snprintf(buf, sizeof(buf), "R-hat %.4f exceeds %.2f on parameter %s",
                      diagnostics.rhat(j), threshold, name.c_str());
        warnings->push_back(buf);
      }
    }
  }
  if (diagnostics.divergence_count > 0 && warnings != nullptr) {
    warnings->push_back(std::to_string(diagnostics.divergence_count) +
                        " divergent transitions after warmup");
  }
  return converged;
}

double Diagnostics::min_ess_per_draw() const {
  double worst = std::numeric_limits<double>::quiet_NaN();
  for (Eigen::Index j = 0; j < ess_per_draw.size(); ++j) {
    if (std::isnan(ess_per_draw(j))) continue;
    if (std::isnan(worst) || ess_per_draw(j) < worst) worst = ess_per_draw(j);
  }
  return worst;
}

std::vector<VectorXd> posterior_predictive(
    const ChainSet& chains,
    const std::function<VectorXd(const VectorXd&)>& predictor, int stride) {
  chains.validate();
  if (stride < 1) throw ConfigError("posterior_predictive: stride must be >= 1");
  std::vector<VectorXd> out;
  for (int c = 0; c < chains.chains(); ++c) {
    const MatrixXd& d = chains.draws[static_cast<std::size_t>(c)];
    for (int s = 0; s < chains.num_draws(); s += stride) {
      try {
        out.push_back(predictor(d.row(s).transpose()));
      } catch (const std::exception& e) {
        throw Error("posterior_predictive: predictor failed at chain " +
                    std::to_string(c) + ", draw " + std::to_string(s) + ": " +
                    e.what());
      }
    }
  }
  return out;
}

namespace {

void append_double(std::string& out, double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  out.append(buf, res.ptr);
}

}  // namespace

void write_chains_csv(const ChainSet& chains,
                      const std::vector<std::string>& parameter_names,
                      const std::string& path) {
  chains.validate();
  if (static_cast<int>(parameter_names.size()) != chains.dim()) {
    throw ShapeError("chains csv: need one name per parameter");
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  std::string line = "chain,draw";
  for (const std::string& name : parameter_names) {
    line += ',';
    line += name;
  }
  line += '\n';
  out << line;
  for (int c = 0; c < chains.chains(); ++c) {
    const MatrixXd& d = chains.draws[static_cast<std::size_t>(c)];
    for (int s = 0; s < chains.num_draws(); ++s) {
      line.clear();
      line += std::to_string(c);
      line += ',';
      line += std::to_string(s);
      for (int j = 0; j < chains.dim(); ++j) {
        line += ',';
        append_double(line, d(s, j));
      }
      line += '\n';
      out << line;
    }
  }
  if (!out) throw IoError("write to '" + path + "' failed");
}

}  // namespace pivae
