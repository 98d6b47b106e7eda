#include "pivae/kernels.hpp"

#include <cmath>

#include "pivae/errors.hpp"

namespace pivae {

const char* kernel_family_name(KernelFamily family) {
  switch (family) {
    case KernelFamily::kRbf: return "rbf";
    case KernelFamily::kMatern32: return "matern32";
  }
  return "?";
}

void KernelSpec::validate() const {
  if (!(lengthscale > 0.0)) {
    throw ConfigError("kernel: lengthscale must be positive");
  }
  if (!(amplitude > 0.0)) {
    throw ConfigError("kernel: amplitude must be positive");
  }
  if (!(jitter > 0.0)) throw ConfigError("kernel: jitter must be positive");
}

double kernel_eval(const KernelSpec& spec, double delta) {
  if (delta < 0.0) throw ConfigError("kernel_eval: negative distance");
  switch (spec.family) {
    case KernelFamily::kRbf: {
      const double u = delta / spec.lengthscale;
      return spec.amplitude * std::exp(-u * u);
    }
    case KernelFamily::kMatern32: {
      const double u = std::sqrt(3.0) * delta / spec.lengthscale;
      return spec.amplitude * (1.0 + u) * std::exp(-u);
    }
  }
  throw ConfigError("kernel_eval: unknown family");
}

MatrixXd covariance_matrix(const KernelSpec& spec, const MatrixXd& locations) {
  const Eigen::Index n = locations.rows();
  MatrixXd sigma(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    sigma(i, i) = spec.amplitude + spec.jitter;
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double k =
          kernel_eval(spec, (locations.row(i) - locations.row(j)).norm());
      sigma(i, j) = k;
      sigma(j, i) = k;
    }
  }
  return sigma;
}

MatrixXd robust_cholesky_lower(MatrixXd sigma, double jitter,
                               const std::string& where) {
  double level = jitter;
  for (int attempt = 0; attempt <= 3; ++attempt) {
    if (attempt > 0) {
      // Replace the previous diagonal boost with one tenfold larger.
      const double next = level * 10.0;
      sigma.diagonal().array() += next - level;
      level = next;
    }
    const Eigen::LLT<MatrixXd> llt(sigma);
    if (llt.info() == Eigen::Success) return llt.matrixL();
  }
  throw NumericError(where + ": covariance not positive definite after " +
                     "jitter escalation to " + std::to_string(level));
}

}  // namespace pivae
