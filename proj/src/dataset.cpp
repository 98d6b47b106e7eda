#include "pivae/dataset.hpp"

#include <string>

#include "pivae/errors.hpp"

namespace pivae {

void PriorDataset::validate() const {
  if (draws.empty()) throw ShapeError("dataset: no draws");
  if (dim < 1) throw ShapeError("dataset: dimension must be at least 1");
  for (const FunctionDraw& d : draws) {
    const std::string tag = "dataset: draw " + std::to_string(d.id);
    if (d.locations.rows() < 1) throw ShapeError(tag + " has no points");
    if (d.locations.cols() != dim) {
      throw ShapeError(tag + " has dimension " +
                       std::to_string(d.locations.cols()) + ", expected " +
                       std::to_string(dim));
    }
    if (d.values.size() != d.locations.rows()) {
      throw ShapeError(tag + " has " + std::to_string(d.values.size()) +
                       " values for " + std::to_string(d.locations.rows()) +
                       " locations");
    }
    if (d.has_integral() != with_integral) {
      throw ShapeError(tag + (with_integral ? " is missing" : " carries") +
                       " the integral channel");
    }
    if (with_integral && d.integral.size() != d.values.size()) {
      throw ShapeError(tag + " integral channel length mismatch");
    }
    if (!all_finite(d.locations) || !all_finite(d.values) ||
        (with_integral && !all_finite(d.integral))) {
      throw NumericError(tag + " contains non-finite entries");
    }
  }
}

}  // namespace pivae
