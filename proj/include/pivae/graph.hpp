#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "pivae/tensor.hpp"

namespace pivae {

// Named trainable tensors with gradient slots. A store outlives the graphs
// built over it; graphs reference slots by index so rebuilding a graph per
// minibatch does not copy parameter data.
class ParameterStore {
 public:
  int add(const std::string& name, Tensor init);
  int index_of(const std::string& name) const;  // -1 if absent
  int size() const { return static_cast<int>(values_.size()); }

  // Mutating parameter values through these references must be followed by
  // bump_version() so graphs drop values cached against the old parameters.
  // AdamOptimizer::step() bumps automatically.
  Tensor& value(int slot) { return values_[static_cast<std::size_t>(slot)]; }
  const Tensor& value(int slot) const {
    return values_[static_cast<std::size_t>(slot)];
  }
  Tensor& grad(int slot) { return grads_[static_cast<std::size_t>(slot)]; }
  const Tensor& grad(int slot) const {
    return grads_[static_cast<std::size_t>(slot)];
  }
  const std::string& name(int slot) const {
    return names_[static_cast<std::size_t>(slot)];
  }

  Tensor& value(const std::string& name);
  const Tensor& value(const std::string& name) const;
  const Tensor& grad(const std::string& name) const;

  void zero_grads();
  std::size_t parameter_count() const;  // total scalar parameters

  std::uint64_t version() const { return version_; }
  void bump_version() { ++version_; }

 private:
  std::vector<std::string> names_;
  std::unordered_map<std::string, int> index_;
  std::vector<Tensor> values_;
  std::vector<Tensor> grads_;
  std::uint64_t version_ = 1;
};

enum class Op {
  kInput,
  kConstant,
  kParameter,
  kAdd,
  kSub,
  kMul,
  kMatMul,
  kAffine,
  kTanh,
  kRelu,
  kExp,
  kLog,
  kSquare,
  kScale,
  kShift,
  kReduceSum,
  kReduceMean,
  kRowSum,
  kSquaredError,
  kGaussianLogLik,
  kGaussianKl,
  kRbfFeatures,
  kGatherRows,
  kRepeatRows,
  kHCat,
  kSliceCols,
  kReshape,
};

const char* op_name(Op op);

using NodeId = int;

// Reverse-mode differentiable computation over dense tensors. Nodes are
// created in topological order by construction; a graph is built once and
// evaluated many times against rebound inputs. Evaluation is lazy per output
// and cached until the next bind().
//
// Graphs whose parameters enter as constants (store == nullptr) are value
// types and can be copied for per-thread use.
class Graph {
 public:
  explicit Graph(ParameterStore* store = nullptr) : store_(store) {}

  NodeId input(const std::string& name);
  NodeId constant(Tensor v);
  NodeId constant_scalar(double v) { return constant(make_scalar(v)); }
  NodeId param(const std::string& name);

  NodeId add(NodeId a, NodeId b);
  NodeId sub(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);
  NodeId matmul(NodeId a, NodeId b);
  // x: n x in, w: in x out, b: 1 x out (broadcast over rows)
  NodeId affine(NodeId x, NodeId w, NodeId b);
  NodeId tanh(NodeId x);
  NodeId relu(NodeId x);
  NodeId exp(NodeId x);
  NodeId log(NodeId x);
  NodeId square(NodeId x);
  NodeId scale(NodeId x, double c);
  NodeId shift(NodeId x, double c);
  NodeId reduce_sum(NodeId x);
  NodeId reduce_mean(NodeId x);
  NodeId row_sum(NodeId x);  // n x m -> n x 1
  NodeId squared_error(NodeId a, NodeId b);
  // sum_j log N(y_j | mu_j, sigma^2) with sigma = exp(log_sigma), scalar.
  NodeId gaussian_loglik(NodeId y, NodeId mu, NodeId log_sigma);
  // KL(N(z_mu, diag(z_sd^2)) || N(0, I)), summed over all entries.
  NodeId gaussian_kl(NodeId z_mu, NodeId z_sd);
  // locs: n x d, centres: m x d, log_bandwidth: m x 1 ->
  // n x m with out(i,k) = exp(-|locs_i - c_k|^2 / b_k^2).
  NodeId rbf_features(NodeId locs, NodeId centres, NodeId log_bandwidth);
  NodeId gather_rows(NodeId x, std::vector<int> rows);
  NodeId repeat_rows(NodeId x, std::vector<int> counts);
  NodeId hcat(NodeId a, NodeId b);
  NodeId slice_cols(NodeId x, int begin, int end);
  NodeId reshape(NodeId x, Eigen::Index rows, Eigen::Index cols);

  void bind(const std::string& name, Tensor v);
  void bind(NodeId input_node, Tensor v);

  // Evaluates all ancestors of `out` not yet computed since the last bind.
  const Tensor& forward(NodeId out);
  // Accumulates d out / d leaf for every parameter and input leaf reachable
  // from `out`. `out` must be scalar and evaluated in the current epoch.
  // Parameter gradients accumulate into the store (caller zeroes them);
  // input/node gradients are reset here on every call.
  void backward(NodeId out);

  const Tensor& value(NodeId id) const;
  // Gradient of the most recent backward() w.r.t. this node. For parameter
  // nodes this is the store's accumulator.
  const Tensor& grad(NodeId id) const;

  int node_count() const { return static_cast<int>(nodes_.size()); }
  ParameterStore* store() const { return store_; }

 private:
  struct Node {
    Op op;
    std::array<NodeId, 3> in{-1, -1, -1};
    int n_in = 0;
    double c0 = 0.0;           // Scale / Shift constant
    std::vector<int> idx;      // GatherRows rows / RepeatRows counts
    Eigen::Index d0 = 0, d1 = 0;  // SliceCols range / Reshape dims
    std::string name;          // Input / Parameter label
    int slot = -1;             // ParameterStore slot
    Tensor value, grad;
    bool requires_grad = false;
    std::uint64_t eval_epoch = 0;
  };

  NodeId emit(Node n);
  Node& at(NodeId id) { return nodes_[static_cast<std::size_t>(id)]; }
  const Node& at(NodeId id) const {
    return nodes_[static_cast<std::size_t>(id)];
  }
  const Tensor& val(NodeId id) const;
  std::string label(NodeId id) const;
  void eval_node(NodeId id);
  void vjp_node(NodeId id);
  Tensor& grad_ref(NodeId id);
  void accumulate(NodeId target, const Tensor& g);
  const std::vector<NodeId>& ancestors(NodeId out);

  std::vector<Node> nodes_;
  std::unordered_map<std::string, NodeId> inputs_;
  ParameterStore* store_;
  std::uint64_t epoch_ = 1;
  std::uint64_t store_version_seen_ = 0;
  std::unordered_map<NodeId, std::vector<NodeId>> order_cache_;
};

// Closed-form KL(N(z_mu, diag(z_sd^2)) || N(0, I)). Errors on non-positive
// z_sd. The graph node computes the same expression; this form is for
// callers that do not need gradients.
double gaussian_kl(const VectorXd& z_mu, const VectorXd& z_sd);

}  // namespace pivae
