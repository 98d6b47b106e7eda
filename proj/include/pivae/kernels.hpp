#pragma once

#include <string>

#include "pivae/tensor.hpp"

namespace pivae {

enum class KernelFamily { kRbf, kMatern32 };

const char* kernel_family_name(KernelFamily family);

// Stationary kernel over distances. The RBF form is
// amplitude * exp(-delta^2 / lengthscale^2): the lengthscale enters squared
// with no factor of two, so lengthscale 8 gives exp(-delta^2 / 64).
struct KernelSpec {
  KernelFamily family = KernelFamily::kRbf;
  double lengthscale = 1.0;
  double amplitude = 1.0;
  double jitter = 1e-8;

  void validate() const;  // ConfigError on non-positive fields
};

double kernel_eval(const KernelSpec& spec, double delta);

// Dense covariance over a location set (rows are points), jitter on the
// diagonal.
MatrixXd covariance_matrix(const KernelSpec& spec, const MatrixXd& locations);

// Lower Cholesky factor. On numerical failure the diagonal jitter is escalated
// tenfold up to three times before giving up; `where` names the caller in the
// error message.
MatrixXd robust_cholesky_lower(MatrixXd sigma, double jitter,
                               const std::string& where);

}  // namespace pivae
