#pragma once

#include <Eigen/Dense>
#include <array>
#include <cmath>

#include "pivae/errors.hpp"

namespace pivae {

// Dense 64-bit tensors. Everything in this artifact is rank <= 2; scalars are
// 1x1, vectors are n x 1. Eigen's dynamic matrix is the storage type, with a
// few contract helpers layered on top.
using Tensor = Eigen::MatrixXd;

using Eigen::MatrixXd;
using Eigen::VectorXd;

inline std::array<Eigen::Index, 2> shape_of(const Tensor& t) {
  return {t.rows(), t.cols()};
}

inline bool is_scalar(const Tensor& t) { return t.rows() == 1 && t.cols() == 1; }

inline bool same_shape(const Tensor& a, const Tensor& b) {
  return a.rows() == b.rows() && a.cols() == b.cols();
}

inline bool all_finite(const Tensor& t) { return t.allFinite(); }

inline double scalar_value(const Tensor& t) {
  if (!is_scalar(t)) {
    throw ShapeError("expected scalar tensor, got " + std::to_string(t.rows()) +
                     "x" + std::to_string(t.cols()));
  }
  return t(0, 0);
}

inline Tensor make_scalar(double v) {
  Tensor t(1, 1);
  t(0, 0) = v;
  return t;
}

inline std::string shape_str(const Tensor& t) {
  return std::to_string(t.rows()) + "x" + std::to_string(t.cols());
}

}  // namespace pivae
