#pragma once

// Shared dense-network helpers used by the model and baseline trainers:
// forward passes, shape checking, Glorot initialization, and the mapping
// between Mlp structs, parameter stores, and graph nodes.

#include <string>
#include <vector>

#include "pivae/errors.hpp"
#include "pivae/graph.hpp"
#include "pivae/model.hpp"
#include "pivae/rng.hpp"
#include "pivae/tensor.hpp"

namespace pivae::detail {

// Hidden stack: tanh after every layer (used for encoder trunks).
inline MatrixXd mlp_hidden(const Mlp& net, MatrixXd h) {
  for (std::size_t k = 0; k < net.weights.size(); ++k) {
    h = ((h * net.weights[k]).rowwise() + net.biases[k].row(0))
            .array()
            .tanh();
  }
  return h;
}

// Full network: tanh between layers, linear final layer.
inline MatrixXd mlp_linear_out(const Mlp& net, MatrixXd h) {
  for (std::size_t k = 0; k < net.weights.size(); ++k) {
    h = (h * net.weights[k]).rowwise() + net.biases[k].row(0);
    if (k + 1 < net.weights.size()) h = h.array().tanh();
  }
  return h;
}

inline void check_mlp(const Mlp& net, Eigen::Index in, Eigen::Index out,
                      const std::string& name) {
  if (net.weights.size() != net.biases.size()) {
    throw ShapeError(name + ": weight/bias count mismatch");
  }
  Eigen::Index cur = in;
  for (std::size_t k = 0; k < net.weights.size(); ++k) {
    if (net.weights[k].rows() != cur ||
        net.biases[k].rows() != 1 ||
        net.biases[k].cols() != net.weights[k].cols()) {
      throw ShapeError(name + ": layer " + std::to_string(k) +
                       " shapes inconsistent");
    }
    cur = net.weights[k].cols();
  }
  if (net.weights.empty() ? in != out : cur != out) {
    throw ShapeError(name + ": output dimension " + std::to_string(cur) +
                     ", expected " + std::to_string(out));
  }
}

inline MatrixXd glorot(Eigen::Index in, Eigen::Index out, Rng& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(in + out));
  MatrixXd w(in, out);
  for (Eigen::Index i = 0; i < in; ++i) {
    for (Eigen::Index j = 0; j < out; ++j) w(i, j) = rng.uniform(-a, a);
  }
  return w;
}

inline Mlp make_mlp(Eigen::Index in, const std::vector<int>& hidden,
                    Eigen::Index out, Rng& rng) {
  Mlp net;
  Eigen::Index cur = in;
  for (const int width : hidden) {
    net.weights.push_back(glorot(cur, width, rng));
    net.biases.push_back(MatrixXd::Zero(1, width));
    cur = width;
  }
  net.weights.push_back(glorot(cur, out, rng));
  net.biases.push_back(MatrixXd::Zero(1, out));
  return net;
}

inline Mlp make_hidden_stack(Eigen::Index in, const std::vector<int>& hidden,
                             Rng& rng) {
  Mlp net;
  Eigen::Index cur = in;
  for (const int width : hidden) {
    net.weights.push_back(glorot(cur, width, rng));
    net.biases.push_back(MatrixXd::Zero(1, width));
    cur = width;
  }
  return net;
}

inline Eigen::Index mlp_out(const Mlp& net, Eigen::Index in) {
  return net.weights.empty() ? in : net.weights.back().cols();
}

inline void register_mlp(ParameterStore& store, const Mlp& net,
                         const std::string& prefix) {
  for (std::size_t k = 0; k < net.weights.size(); ++k) {
    store.add(prefix + ".w" + std::to_string(k), net.weights[k]);
    store.add(prefix + ".b" + std::to_string(k), net.biases[k]);
  }
}

inline void extract_mlp(const ParameterStore& store, Mlp& net,
                        const std::string& prefix) {
  for (std::size_t k = 0; k < net.weights.size(); ++k) {
    net.weights[k] = store.value(prefix + ".w" + std::to_string(k));
    net.biases[k] = store.value(prefix + ".b" + std::to_string(k));
  }
}

inline NodeId graph_mlp_hidden(Graph& g, NodeId h, std::size_t layers,
                               const std::string& prefix) {
  for (std::size_t k = 0; k < layers; ++k) {
    h = g.tanh(g.affine(h, g.param(prefix + ".w" + std::to_string(k)),
                        g.param(prefix + ".b" + std::to_string(k))));
  }
  return h;
}

inline NodeId graph_mlp_linear_out(Graph& g, NodeId h, std::size_t layers,
                                   const std::string& prefix) {
  for (std::size_t k = 0; k < layers; ++k) {
    h = g.affine(h, g.param(prefix + ".w" + std::to_string(k)),
                 g.param(prefix + ".b" + std::to_string(k)));
    if (k + 1 < layers) h = g.tanh(h);
  }
  return h;
}

}  // namespace pivae::detail
