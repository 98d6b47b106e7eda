#pragma once

#include <cstdint>
#include <vector>

#include "pivae/graph.hpp"
#include "pivae/tensor.hpp"

namespace pivae {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void validate() const;
};

// First/second-moment accumulators, one pair per parameter tensor.
struct AdamState {
  AdamConfig config;
  std::int64_t step = 0;
  std::vector<Tensor> m;
  std::vector<Tensor> v;
};

AdamState make_adam_state(const std::vector<const Tensor*>& params,
                          const AdamConfig& config);

// Bias-corrected Adam update in place. Gradients are validated first; a NaN
// gradient raises NumericError and leaves both parameters and state unchanged.
void adam_step(const std::vector<Tensor*>& params,
               const std::vector<const Tensor*>& grads, AdamState& state);

// Convenience wrapper stepping every parameter of a store against its
// accumulated gradients.
class AdamOptimizer {
 public:
  AdamOptimizer(ParameterStore& store, const AdamConfig& config);
  void step();
  const AdamState& state() const { return state_; }

 private:
  ParameterStore& store_;
  AdamState state_;
};

}  // namespace pivae
