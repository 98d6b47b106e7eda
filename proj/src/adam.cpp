#include "pivae/adam.hpp"

#include <cmath>

#include "pivae/errors.hpp"

namespace pivae {

void AdamConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("adam: learning_rate must be positive");
  if (!(beta1 > 0.0 && beta1 < 1.0)) throw ConfigError("adam: beta1 must be in (0,1)");
  if (!(beta2 > 0.0 && beta2 < 1.0)) throw ConfigError("adam: beta2 must be in (0,1)");
  if (!(eps > 0.0)) throw ConfigError("adam: eps must be positive");
}

AdamState make_adam_state(const std::vector<const Tensor*>& params,
                          const AdamConfig& config) {
  config.validate();
  AdamState st;
  st.config = config;
  st.m.reserve(params.size());
  st.v.reserve(params.size());
  for (const Tensor* p : params) {
    st.m.emplace_back(Tensor::Zero(p->rows(), p->cols()));
    st.v.emplace_back(Tensor::Zero(p->rows(), p->cols()));
  }
  return st;
}

void adam_step(const std::vector<Tensor*>& params,
               const std::vector<const Tensor*>& grads, AdamState& state) {
  if (params.size() != grads.size() || params.size() != state.m.size()) {
    throw ShapeError("adam: parameter/gradient/state count mismatch");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!same_shape(*params[i], *grads[i]) ||
        !same_shape(*params[i], state.m[i])) {
      throw ShapeError("adam: shape mismatch at parameter " +
                       std::to_string(i));
    }
    if (grads[i]->hasNaN()) {
      throw NumericError("adam: NaN gradient at parameter " +
                         std::to_string(i) + "; state unchanged");
    }
  }
  const AdamConfig& c = state.config;
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double corr1 = 1.0 - std::pow(c.beta1, t);
  const double corr2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& m = state.m[i];
    Tensor& v = state.v[i];
    const Tensor& g = *grads[i];
    m = c.beta1 * m + (1.0 - c.beta1) * g;
    v = c.beta2 * v + (1.0 - c.beta2) * g.array().square().matrix();
    params[i]->array() -= c.learning_rate * (m.array() / corr1) /
                          ((v.array() / corr2).sqrt() + c.eps);
  }
}

AdamOptimizer::AdamOptimizer(ParameterStore& store, const AdamConfig& config)
    : store_(store) {
  std::vector<const Tensor*> params;
  params.reserve(static_cast<std::size_t>(store.size()));
  for (int i = 0; i < store.size(); ++i) params.push_back(&store.value(i));
  state_ = make_adam_state(params, config);
}

void AdamOptimizer::step() {
  std::vector<Tensor*> params;
  std::vector<const Tensor*> grads;
  params.reserve(static_cast<std::size_t>(store_.size()));
  grads.reserve(static_cast<std::size_t>(store_.size()));
  for (int i = 0; i < store_.size(); ++i) {
    params.push_back(&store_.value(i));
    grads.push_back(&store_.grad(i));
  }
  adam_step(params, grads, state_);
  store_.bump_version();
}

}  // namespace pivae
