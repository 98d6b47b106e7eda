#pragma once

#include <vector>

#include "pivae/tensor.hpp"

namespace pivae {

// One function draw: values observed at K locations in R^D, optionally with a
// cumulative-integral channel alongside the values.
struct FunctionDraw {
  int id = 0;
  MatrixXd locations;  // K x D
  VectorXd values;     // K
  VectorXd integral;   // K when the integral channel is present, else empty

  bool has_integral() const { return integral.size() > 0; }
};

struct PriorDataset {
  std::vector<FunctionDraw> draws;
  int dim = 0;
  bool with_integral = false;

  void validate() const;
};

}  // namespace pivae
