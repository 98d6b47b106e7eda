#pragma once

#include <map>
#include <string>
#include <vector>

#include "pivae/dataset.hpp"
#include "pivae/kernels.hpp"
#include "pivae/rng.hpp"
#include "pivae/tensor.hpp"

namespace pivae {

struct Range {
  double lo = -1.0;
  double hi = 1.0;
};

// One draw from N(0, K) over the given locations (rows are points), using the
// Cholesky factor of the kernel covariance.
VectorXd sample_gp(const KernelSpec& spec, const MatrixXd& locations, Rng& rng);

// --------------------------------------------------------------------------
// Monotone cubic family

struct CubicConfig {
  Range a, b, c, d;       // coefficient ranges for a s^3 + b s^2 + c s + d
  Range interval;         // where monotonicity is enforced and points drawn
  int points = 20;
  int budget = 10000;     // rejection attempts before giving up

  void validate() const;
};

double cubic_eval(double a, double b, double c, double d, double s);

// True when the derivative 3a s^2 + 2b s + c keeps one sign on [lo, hi]
// (roots may touch the boundary or coincide without breaking monotonicity).
bool cubic_is_monotone(double a, double b, double c, double lo, double hi);

// Rejection-samples coefficients until the cubic is monotone on the interval,
// then evaluates it at uniformly drawn points.
FunctionDraw sample_cubic(Rng& rng, const CubicConfig& config);

// --------------------------------------------------------------------------
// Log-Gaussian Cox process on [0, T]

struct LgcpDraw {
  VectorXd grid;        // resolution+1 times spanning [0, horizon]
  VectorXd gp;          // latent values at the grid
  VectorXd intensity;   // exp(gp), entry for entry
  VectorXd cumulative;  // trapezoidal integral of the intensity at the grid
  std::vector<double> events;  // ascending times in [0, horizon]
  double horizon = 0.0;

  // Log-linear interpolation between grid values; the same rule the thinning
  // sampler uses, so the grid maximum bounds the interpolant exactly.
  double intensity_at(double t) const;
  // Cumulative integral consistent with the trapezoidal grid values.
  double integral_at(double t) const;
};

// Reuses grid Cholesky factors across draws that share kernel, horizon, and
// resolution; corpus generation with a fixed kernel pays for one
// factorization total.
class GridCholeskyCache {
 public:
  const MatrixXd& factor(const KernelSpec& spec, double horizon,
                         int resolution);

 private:
  std::map<std::string, MatrixXd> cache_;
};

// Draws a latent GP on the grid, exponentiates to an intensity, and thins a
// unit-rate stream against the grid maximum. When target_events > 0 and the
// realized count misses the target, the horizon is rescaled by
// target/realized and the same latent draw is re-thinned on the dilated time
// axis (up to 20 retries, keeping the attempt nearest the target). A zero
// target disables retargeting.
LgcpDraw sample_lgcp(const KernelSpec& spec, double horizon, int resolution,
                     int target_events, Rng& rng, double gp_mean = 0.0,
                     GridCholeskyCache* cache = nullptr);

// --------------------------------------------------------------------------
// Corpus generation

enum class PriorFamily { kGp, kCubic, kLgcp };

struct PriorConfig {
  PriorFamily family = PriorFamily::kGp;
  int draws = 0;   // N functions
  int points = 0;  // K locations per function (lgcp: target event count)
  int dim = 1;
  std::vector<Range> box;  // location box, [-1,1]^dim when empty

  KernelFamily kernel = KernelFamily::kRbf;
  Range lengthscale{1.0, 1.0};  // sampled log-uniformly per draw
  double amplitude = 1.0;
  double jitter = 1e-8;

  CubicConfig cubic;  // coefficient ranges and budget (interval/points from box)

  struct Lgcp {
    double horizon = 10.0;
    int resolution = 4096;
    double gp_mean = 0.0;
  } lgcp;

  void validate() const;
  std::vector<Range> effective_box() const;
};

// N independent function draws from the configured prior. When
// lengthscales_out is given it receives the lengthscale used for each draw.
PriorDataset build_prior_dataset(const PriorConfig& config, Rng& rng,
                                 std::vector<double>* lengthscales_out =
                                     nullptr);

}  // namespace pivae
