#include "pivae/graph.hpp"

#include <cmath>
#include <numbers>

namespace pivae {

namespace {
constexpr double kLogTwoPi = 1.8378770664093453;  // log(2*pi)
}

// ---------------------------------------------------------------------------
// ParameterStore

int ParameterStore::add(const std::string& name, Tensor init) {
  if (index_.count(name) != 0) {
    throw Error("parameter '" + name + "' already registered");
  }
  const int slot = static_cast<int>(values_.size());
  names_.push_back(name);
  index_.emplace(name, slot);
  grads_.emplace_back(Tensor::Zero(init.rows(), init.cols()));
  values_.push_back(std::move(init));
  return slot;
}

int ParameterStore::index_of(const std::string& name) const {
  auto it = index_.find(name);
  return it == index_.end() ? -1 : it->second;
}

Tensor& ParameterStore::value(const std::string& name) {
  const int slot = index_of(name);
  if (slot < 0) throw Error("unknown parameter '" + name + "'");
  return values_[static_cast<std::size_t>(slot)];
}

const Tensor& ParameterStore::value(const std::string& name) const {
  const int slot = index_of(name);
  if (slot < 0) throw Error("unknown parameter '" + name + "'");
  return values_[static_cast<std::size_t>(slot)];
}

const Tensor& ParameterStore::grad(const std::string& name) const {
  const int slot = index_of(name);
  if (slot < 0) throw Error("unknown parameter '" + name + "'");
  return grads_[static_cast<std::size_t>(slot)];
}

void ParameterStore::zero_grads() {
  for (auto& g : grads_) g.setZero();
}

std::size_t ParameterStore::parameter_count() const {
  std::size_t n = 0;
  for (const auto& v : values_) n += static_cast<std::size_t>(v.size());
  return n;
}

// ---------------------------------------------------------------------------
// Graph construction

const char* op_name(Op op) {
  switch (op) {
    case Op::kInput: return "input";
    case Op::kConstant: return "constant";
    case Op::kParameter: return "parameter";
    case Op::kAdd: return "add";
    case Op::kSub: return "sub";
    case Op::kMul: return "mul";
    case Op::kMatMul: return "matmul";
    case Op::kAffine: return "affine";
    case Op::kTanh: return "tanh";
    case Op::kRelu: return "relu";
    case Op::kExp: return "exp";
    case Op::kLog: return "log";
    case Op::kSquare: return "square";
    case Op::kScale: return "scale";
    case Op::kShift: return "shift";
    case Op::kReduceSum: return "reduce_sum";
    case Op::kReduceMean: return "reduce_mean";
    case Op::kRowSum: return "row_sum";
    case Op::kSquaredError: return "squared_error";
    case Op::kGaussianLogLik: return "gaussian_loglik";
    case Op::kGaussianKl: return "gaussian_kl";
    case Op::kRbfFeatures: return "rbf_features";
    case Op::kGatherRows: return "gather_rows";
    case Op::kRepeatRows: return "repeat_rows";
    case Op::kHCat: return "hcat";
    case Op::kSliceCols: return "slice_cols";
    case Op::kReshape: return "reshape";
  }
  return "?";
}

NodeId Graph::emit(Node n) {
  for (int i = 0; i < n.n_in; ++i) {
    const NodeId in = n.in[static_cast<std::size_t>(i)];
    if (in < 0 || in >= node_count()) {
      throw Error(std::string("graph: bad input id for ") + op_name(n.op));
    }
    if (at(in).requires_grad) n.requires_grad = true;
  }
  if (n.op == Op::kInput || n.op == Op::kParameter) n.requires_grad = true;
  nodes_.push_back(std::move(n));
  order_cache_.clear();
  return node_count() - 1;
}

NodeId Graph::input(const std::string& name) {
  if (inputs_.count(name) != 0) {
    throw Error("graph: duplicate input '" + name + "'");
  }
  Node n;
  n.op = Op::kInput;
  n.name = name;
  const NodeId id = emit(std::move(n));
  inputs_.emplace(name, id);
  return id;
}

NodeId Graph::constant(Tensor v) {
  Node n;
  n.op = Op::kConstant;
  n.value = std::move(v);
  n.eval_epoch = UINT64_MAX;  // always valid
  return emit(std::move(n));
}

NodeId Graph::param(const std::string& name) {
  if (store_ == nullptr) {
    throw Error("graph: parameter node requires a ParameterStore");
  }
  const int slot = store_->index_of(name);
  if (slot < 0) throw Error("graph: unknown parameter '" + name + "'");
  Node n;
  n.op = Op::kParameter;
  n.name = name;
  n.slot = slot;
  n.eval_epoch = UINT64_MAX;
  return emit(std::move(n));
}

#define PIVAE_BINARY(fn, opk)                    \
  NodeId Graph::fn(NodeId a, NodeId b) {         \
    Node n;                                      \
    n.op = opk;                                  \
    n.in = {a, b, -1};                           \
    n.n_in = 2;                                  \
    return emit(std::move(n));                   \
  }

PIVAE_BINARY(add, Op::kAdd)
PIVAE_BINARY(sub, Op::kSub)
PIVAE_BINARY(mul, Op::kMul)
PIVAE_BINARY(matmul, Op::kMatMul)
PIVAE_BINARY(squared_error, Op::kSquaredError)
PIVAE_BINARY(hcat, Op::kHCat)
PIVAE_BINARY(gaussian_kl, Op::kGaussianKl)
#undef PIVAE_BINARY

#define PIVAE_UNARY(fn, opk)             \
  NodeId Graph::fn(NodeId x) {           \
    Node n;                              \
    n.op = opk;                          \
    n.in = {x, -1, -1};                  \
    n.n_in = 1;                          \
    return emit(std::move(n));           \
  }

PIVAE_UNARY(tanh, Op::kTanh)
PIVAE_UNARY(relu, Op::kRelu)
PIVAE_UNARY(exp, Op::kExp)
PIVAE_UNARY(log, Op::kLog)
PIVAE_UNARY(square, Op::kSquare)
PIVAE_UNARY(reduce_sum, Op::kReduceSum)
PIVAE_UNARY(reduce_mean, Op::kReduceMean)
PIVAE_UNARY(row_sum, Op::kRowSum)
#undef PIVAE_UNARY

NodeId Graph::affine(NodeId x, NodeId w, NodeId b) {
  Node n;
  n.op = Op::kAffine;
  n.in = {x, w, b};
  n.n_in = 3;
  return emit(std::move(n));
}

NodeId Graph::scale(NodeId x, double c) {
  Node n;
  n.op = Op::kScale;
  n.in = {x, -1, -1};
  n.n_in = 1;
  n.c0 = c;
  return emit(std::move(n));
}

NodeId Graph::shift(NodeId x, double c) {
  Node n;
  n.op = Op::kShift;
  n.in = {x, -1, -1};
  n.n_in = 1;
  n.c0 = c;
  return emit(std::move(n));
}

NodeId Graph::gaussian_loglik(NodeId y, NodeId mu, NodeId log_sigma) {
  Node n;
  n.op = Op::kGaussianLogLik;
  n.in = {y, mu, log_sigma};
  n.n_in = 3;
  return emit(std::move(n));
}

NodeId Graph::rbf_features(NodeId locs, NodeId centres, NodeId log_bandwidth) {
  Node n;
  n.op = Op::kRbfFeatures;
  n.in = {locs, centres, log_bandwidth};
  n.n_in = 3;
  return emit(std::move(n));
}

NodeId Graph::gather_rows(NodeId x, std::vector<int> rows) {
  Node n;
  n.op = Op::kGatherRows;
  n.in = {x, -1, -1};
  n.n_in = 1;
  n.idx = std::move(rows);
  return emit(std::move(n));
}

NodeId Graph::repeat_rows(NodeId x, std::vector<int> counts) {
  Node n;
  n.op = Op::kRepeatRows;
  n.in = {x, -1, -1};
  n.n_in = 1;
  n.idx = std::move(counts);
  return emit(std::move(n));
}

NodeId Graph::slice_cols(NodeId x, int begin, int end) {
  Node n;
  n.op = Op::kSliceCols;
  n.in = {x, -1, -1};
  n.n_in = 1;
  n.d0 = begin;
  n.d1 = end;
  return emit(std::move(n));
}

NodeId Graph::reshape(NodeId x, Eigen::Index rows, Eigen::Index cols) {
  Node n;
  n.op = Op::kReshape;
  n.in = {x, -1, -1};
  n.n_in = 1;
  n.d0 = rows;
  n.d1 = cols;
  return emit(std::move(n));
}

// ---------------------------------------------------------------------------
// Evaluation

void Graph::bind(const std::string& name, Tensor v) {
  auto it = inputs_.find(name);
  if (it == inputs_.end()) throw Error("graph: no input named '" + name + "'");
  bind(it->second, std::move(v));
}

void Graph::bind(NodeId input_node, Tensor v) {
  Node& n = at(input_node);
  if (n.op != Op::kInput) throw Error("graph: bind target is not an input");
  n.value = std::move(v);
  n.eval_epoch = UINT64_MAX;
  ++epoch_;  // invalidate downstream values
}

const Tensor& Graph::val(NodeId id) const {
  const Node& n = at(id);
  if (n.op == Op::kParameter) return store_->value(n.slot);
  return n.value;
}

std::string Graph::label(NodeId id) const {
  const Node& n = at(id);
  std::string s = "node #" + std::to_string(id) + " (" + op_name(n.op);
  if (!n.name.empty()) s += " '" + n.name + "'";
  s += ")";
  return s;
}

const std::vector<NodeId>& Graph::ancestors(NodeId out) {
  auto it = order_cache_.find(out);
  if (it != order_cache_.end()) return it->second;
  // Node ids are already topologically ordered; collect the ancestor set by
  // a reverse sweep and emit it in increasing id order.
  std::vector<char> needed(static_cast<std::size_t>(node_count()), 0);
  needed[static_cast<std::size_t>(out)] = 1;
  for (NodeId id = out; id >= 0; --id) {
    if (!needed[static_cast<std::size_t>(id)]) continue;
    const Node& n = at(id);
    for (int i = 0; i < n.n_in; ++i) {
      needed[static_cast<std::size_t>(n.in[static_cast<std::size_t>(i)])] = 1;
    }
  }
  std::vector<NodeId> order;
  for (NodeId id = 0; id <= out; ++id) {
    if (needed[static_cast<std::size_t>(id)]) order.push_back(id);
  }
  return order_cache_.emplace(out, std::move(order)).first->second;
}

const Tensor& Graph::forward(NodeId out) {
  // Parameter updates in the store invalidate every cached value.
  if (store_ != nullptr && store_version_seen_ != store_->version()) {
    store_version_seen_ = store_->version();
    ++epoch_;
  }
  for (const NodeId id : ancestors(out)) {
    Node& n = at(id);
    if (n.eval_epoch == epoch_ || n.eval_epoch == UINT64_MAX) continue;
    eval_node(id);
    n.eval_epoch = epoch_;
  }
  if (at(out).op == Op::kInput && at(out).value.size() == 0) {
    throw Error("graph: " + label(out) + " evaluated before bind");
  }
  return val(out);
}

const Tensor& Graph::value(NodeId id) const { return val(id); }

Tensor& Graph::grad_ref(NodeId id) {
  Node& n = at(id);
  if (n.op == Op::kParameter) return store_->grad(n.slot);
  return n.grad;
}

const Tensor& Graph::grad(NodeId id) const {
  const Node& n = at(id);
  if (n.op == Op::kParameter) return store_->grad(n.slot);
  return n.grad;
}

void Graph::accumulate(NodeId target, const Tensor& g) {
  Tensor& acc = grad_ref(target);
  const Tensor& v = val(target);
  if (acc.rows() != v.rows() || acc.cols() != v.cols()) {
    acc = Tensor::Zero(v.rows(), v.cols());
  }
  if (is_scalar(v) && !is_scalar(g)) {
    acc(0, 0) += g.sum();  // broadcast adjoint
  } else {
    acc += g;
  }
}

void Graph::backward(NodeId out) {
  const Node& o = at(out);
  if (o.op != Op::kInput && o.op != Op::kConstant && o.op != Op::kParameter &&
      o.eval_epoch != epoch_) {
    throw Error("graph: backward before forward for " + label(out));
  }
  if (!is_scalar(val(out))) {
    throw ShapeError("graph: backward requires a scalar output, " + label(out) +
                     " is " + shape_str(val(out)));
  }
  const std::vector<NodeId>& order = ancestors(out);
  // Reset non-parameter adjoints; parameter slots accumulate across calls.
  for (const NodeId id : order) {
    Node& n = at(id);
    if (n.op == Op::kParameter || n.op == Op::kConstant) continue;
    const Tensor& v = val(id);
    if (n.grad.rows() != v.rows() || n.grad.cols() != v.cols()) {
      n.grad = Tensor::Zero(v.rows(), v.cols());
    } else {
      n.grad.setZero();
    }
  }
  accumulate(out, make_scalar(1.0));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    const Node& n = at(*it);
    if (!n.requires_grad || n.n_in == 0) continue;
    vjp_node(*it);
  }
  // Non-finite parameter gradients would silently poison the optimizer state.
  for (const NodeId id : order) {
    if (at(id).op != Op::kParameter) continue;
    if (!all_finite(store_->grad(at(id).slot))) {
      throw NumericError("graph: non-finite gradient at " + label(id));
    }
  }
}

namespace {

void check_same_shape(const Tensor& a, const Tensor& b,
                      const std::string& where) {
  if (!same_shape(a, b)) {
    throw ShapeError(where + ": shape mismatch " + shape_str(a) + " vs " +
                     shape_str(b));
  }
}

// Elementwise binary shapes: equal, or one side scalar.
enum class Bcast { kNone, kLeftScalar, kRightScalar };

Bcast binary_mode(const Tensor& a, const Tensor& b, const std::string& where) {
  if (same_shape(a, b)) return Bcast::kNone;
  if (is_scalar(a)) return Bcast::kLeftScalar;
  if (is_scalar(b)) return Bcast::kRightScalar;
  throw ShapeError(where + ": incompatible shapes " + shape_str(a) + " and " +
                   shape_str(b));
}

}  // namespace

void Graph::eval_node(NodeId id) {
  Node& n = at(id);
  const auto A = [&](int i) -> const Tensor& {
    return val(n.in[static_cast<std::size_t>(i)]);
  };
  const std::string where = label(id);
  switch (n.op) {
    case Op::kInput:
      throw Error("graph: " + where + " evaluated before bind");
    case Op::kConstant:
    case Op::kParameter:
      break;
    case Op::kAdd: {
      switch (binary_mode(A(0), A(1), where)) {
        case Bcast::kNone: n.value = A(0) + A(1); break;
        case Bcast::kLeftScalar:
          n.value = A(1).array() + A(0)(0, 0);
          break;
        case Bcast::kRightScalar:
          n.value = A(0).array() + A(1)(0, 0);
          break;
      }
      break;
    }
    case Op::kSub: {
      switch (binary_mode(A(0), A(1), where)) {
        case Bcast::kNone: n.value = A(0) - A(1); break;
        case Bcast::kLeftScalar:
          n.value = A(0)(0, 0) - A(1).array();
          break;
        case Bcast::kRightScalar:
          n.value = A(0).array() - A(1)(0, 0);
          break;
      }
      break;
    }
    case Op::kMul: {
      switch (binary_mode(A(0), A(1), where)) {
        case Bcast::kNone:
          n.value = A(0).cwiseProduct(A(1));
          break;
        case Bcast::kLeftScalar:
          n.value = A(1) * A(0)(0, 0);
          break;
        case Bcast::kRightScalar:
          n.value = A(0) * A(1)(0, 0);
          break;
      }
      break;
    }
    case Op::kMatMul: {
      if (A(0).cols() != A(1).rows()) {
        throw ShapeError(where + ": inner dimensions disagree, " +
                         shape_str(A(0)) + " * " + shape_str(A(1)));
      }
      n.value.noalias() = A(0) * A(1);
      break;
    }
    case Op::kAffine: {
      const Tensor& x = A(0);
      const Tensor& w = A(1);
      const Tensor& b = A(2);
      if (x.cols() != w.rows() || b.rows() != 1 || b.cols() != w.cols()) {
        throw ShapeError(where + ": affine shapes x=" + shape_str(x) +
                         " w=" + shape_str(w) + " b=" + shape_str(b));
      }
      n.value.noalias() = x * w;
      n.value.rowwise() += b.row(0);
      break;
    }
    case Op::kTanh: n.value = A(0).array().tanh(); break;
    case Op::kRelu: n.value = A(0).cwiseMax(0.0); break;
    case Op::kExp: n.value = A(0).array().exp(); break;
    case Op::kLog: {
      if ((A(0).array() <= 0.0).any()) {
        throw NumericError(where + ": log of non-positive value");
      }
      n.value = A(0).array().log();
      break;
    }
    case Op::kSquare: n.value = A(0).array().square(); break;
    case Op::kScale: n.value = A(0) * n.c0; break;
    case Op::kShift: n.value = A(0).array() + n.c0; break;
    case Op::kReduceSum: n.value = make_scalar(A(0).sum()); break;
    case Op::kReduceMean: n.value = make_scalar(A(0).mean()); break;
    case Op::kRowSum: n.value = A(0).rowwise().sum(); break;
    case Op::kSquaredError: {
      check_same_shape(A(0), A(1), where);
      n.value = make_scalar((A(0) - A(1)).squaredNorm());
      break;
    }
    case Op::kGaussianLogLik: {
      check_same_shape(A(0), A(1), where);
      if (!is_scalar(A(2))) {
        throw ShapeError(where + ": log_sigma must be scalar");
      }
      const double log_sigma = A(2)(0, 0);
      const double inv_var = std::exp(-2.0 * log_sigma);
      const double m = static_cast<double>(A(0).size());
      n.value = make_scalar(-0.5 * m * kLogTwoPi - m * log_sigma -
                            0.5 * inv_var * (A(0) - A(1)).squaredNorm());
      break;
    }
    case Op::kGaussianKl: {
      check_same_shape(A(0), A(1), where);
      if ((A(1).array() <= 0.0).any()) {
        throw NumericError(where + ": non-positive z_sd");
      }
      const auto mu = A(0).array();
      const auto sd = A(1).array();
      n.value = make_scalar(
          (0.5 * (sd.square() + mu.square() - 1.0) - sd.log()).sum());
      break;
    }
    case Op::kRbfFeatures: {
      const Tensor& x = A(0);
      const Tensor& c = A(1);
      const Tensor& lb = A(2);
      if (x.cols() != c.cols() || lb.rows() != c.rows() || lb.cols() != 1) {
        throw ShapeError(where + ": rbf shapes locs=" + shape_str(x) +
                         " centres=" + shape_str(c) +
                         " log_bandwidth=" + shape_str(lb));
      }
      n.value.resize(x.rows(), c.rows());
      for (Eigen::Index m = 0; m < c.rows(); ++m) {
        const double inv_b2 = std::exp(-2.0 * lb(m, 0));
        n.value.col(m) =
            (-(x.rowwise() - c.row(m)).rowwise().squaredNorm().array() *
             inv_b2)
                .exp();
      }
      break;
    }
    case Op::kGatherRows: {
      const Tensor& x = A(0);
      n.value.resize(static_cast<Eigen::Index>(n.idx.size()), x.cols());
      for (std::size_t i = 0; i < n.idx.size(); ++i) {
        const int r = n.idx[i];
        if (r < 0 || r >= x.rows()) {
          throw ShapeError(where + ": row index " + std::to_string(r) +
                           " out of range for " + shape_str(x));
        }
        n.value.row(static_cast<Eigen::Index>(i)) = x.row(r);
      }
      break;
    }
    case Op::kRepeatRows: {
      const Tensor& x = A(0);
      if (static_cast<Eigen::Index>(n.idx.size()) != x.rows()) {
        throw ShapeError(where + ": counts length " +
                         std::to_string(n.idx.size()) + " vs rows " +
                         std::to_string(x.rows()));
      }
      Eigen::Index total = 0;
      for (const int c : n.idx) {
        if (c < 0) throw ShapeError(where + ": negative repeat count");
        total += c;
      }
      n.value.resize(total, x.cols());
      Eigen::Index r = 0;
      for (Eigen::Index i = 0; i < x.rows(); ++i) {
        for (int k = 0; k < n.idx[static_cast<std::size_t>(i)]; ++k) {
          n.value.row(r++) = x.row(i);
        }
      }
      break;
    }
    case Op::kHCat: {
      if (A(0).rows() != A(1).rows()) {
        throw ShapeError(where + ": hcat row mismatch " + shape_str(A(0)) +
                         " vs " + shape_str(A(1)));
      }
      n.value.resize(A(0).rows(), A(0).cols() + A(1).cols());
      n.value << A(0), A(1);
      break;
    }
    case Op::kSliceCols: {
      const Tensor& x = A(0);
      if (n.d0 < 0 || n.d1 <= n.d0 || n.d1 > x.cols()) {
        throw ShapeError(where + ": slice [" + std::to_string(n.d0) + "," +
                         std::to_string(n.d1) + ") of " + shape_str(x));
      }
      n.value = x.middleCols(n.d0, n.d1 - n.d0);
      break;
    }
    case Op::kReshape: {
      const Tensor& x = A(0);
      if (n.d0 * n.d1 != x.size()) {
        throw ShapeError(where + ": cannot reshape " + shape_str(x) + " to " +
                         std::to_string(n.d0) + "x" + std::to_string(n.d1));
      }
      // Row-major reading order on both sides.
      n.value.resize(n.d0, n.d1);
      Eigen::Index k = 0;
      for (Eigen::Index i = 0; i < x.rows(); ++i) {
        for (Eigen::Index j = 0; j < x.cols(); ++j, ++k) {
          n.value(k / n.d1, k % n.d1) = x(i, j);
        }
      }
      break;
    }
  }
  if (n.op != Op::kInput && n.op != Op::kConstant && n.op != Op::kParameter &&
      !all_finite(n.value)) {
    throw NumericError("graph: non-finite value at " + where);
  }
}

void Graph::vjp_node(NodeId id) {
  Node& n = at(id);
  const Tensor& g = n.grad;
  const auto A = [&](int i) -> const Tensor& {
    return val(n.in[static_cast<std::size_t>(i)]);
  };
  const auto wants = [&](int i) {
    return at(n.in[static_cast<std::size_t>(i)]).requires_grad;
  };
  const auto push = [&](int i, const Tensor& contrib) {
    accumulate(n.in[static_cast<std::size_t>(i)], contrib);
  };
  switch (n.op) {
    case Op::kInput:
    case Op::kConstant:
    case Op::kParameter:
      break;
    case Op::kAdd:
      if (wants(0)) push(0, g);
      if (wants(1)) push(1, g);
      break;
    case Op::kSub:
      if (wants(0)) push(0, g);
      if (wants(1)) push(1, -g);
      break;
    case Op::kMul:
      if (wants(0)) {
        if (is_scalar(A(0)) && !is_scalar(A(1))) {
          push(0, make_scalar(g.cwiseProduct(A(1)).sum()));
        } else if (is_scalar(A(1)) && !is_scalar(A(0))) {
          push(0, g * A(1)(0, 0));
        } else {
          push(0, g.cwiseProduct(A(1)));
        }
      }
      if (wants(1)) {
        if (is_scalar(A(1)) && !is_scalar(A(0))) {
          push(1, make_scalar(g.cwiseProduct(A(0)).sum()));
        } else if (is_scalar(A(0)) && !is_scalar(A(1))) {
          push(1, g * A(0)(0, 0));
        } else {
          push(1, g.cwiseProduct(A(0)));
        }
      }
      break;
    case Op::kMatMul:
      if (wants(0)) push(0, g * A(1).transpose());
      if (wants(1)) push(1, A(0).transpose() * g);
      break;
    case Op::kAffine:
      if (wants(0)) push(0, g * A(1).transpose());
      if (wants(1)) push(1, A(0).transpose() * g);
      if (wants(2)) push(2, g.colwise().sum());
      break;
    case Op::kTanh:
      push(0, g.cwiseProduct((1.0 - n.value.array().square()).matrix()));
      break;
    case Op::kRelu:
      push(0, g.cwiseProduct(
                  (A(0).array() > 0.0).cast<double>().matrix()));
      break;
    case Op::kExp:
      push(0, g.cwiseProduct(n.value));
      break;
    case Op::kLog:
      push(0, g.cwiseQuotient(A(0)));
      break;
    case Op::kSquare:
      push(0, 2.0 * g.cwiseProduct(A(0)));
      break;
    case Op::kScale:
      push(0, g * n.c0);
      break;
    case Op::kShift:
      push(0, g);
      break;
    case Op::kReduceSum:
      push(0, Tensor::Constant(A(0).rows(), A(0).cols(), g(0, 0)));
      break;
    case Op::kReduceMean:
      push(0, Tensor::Constant(A(0).rows(), A(0).cols(),
                               g(0, 0) / static_cast<double>(A(0).size())));
      break;
    case Op::kRowSum:
      push(0, g.replicate(1, A(0).cols()));
      break;
    case Op::kSquaredError: {
      const Tensor d = 2.0 * g(0, 0) * (A(0) - A(1));
      if (wants(0)) push(0, d);
      if (wants(1)) push(1, -d);
      break;
    }
    case Op::kGaussianLogLik: {
      const double log_sigma = A(2)(0, 0);
      const double inv_var = std::exp(-2.0 * log_sigma);
      const Tensor r = (A(0) - A(1)) * inv_var;
      if (wants(0)) push(0, -g(0, 0) * r);
      if (wants(1)) push(1, g(0, 0) * r);
      if (wants(2)) {
        const double m = static_cast<double>(A(0).size());
        push(2, make_scalar(g(0, 0) *
                            ((A(0) - A(1)).squaredNorm() * inv_var - m)));
      }
      break;
    }
    case Op::kGaussianKl: {
      if (wants(0)) push(0, g(0, 0) * A(0));
      if (wants(1)) {
        push(1, g(0, 0) * (A(1).array() - A(1).array().inverse()).matrix());
      }
      break;
    }
    case Op::kRbfFeatures: {
      const Tensor& x = A(0);
      const Tensor& c = A(1);
      const Tensor& lb = A(2);
      Tensor gx, gc, glb;
      if (wants(0)) gx = Tensor::Zero(x.rows(), x.cols());
      if (wants(1)) gc = Tensor::Zero(c.rows(), c.cols());
      if (wants(2)) glb = Tensor::Zero(lb.rows(), 1);
      for (Eigen::Index m = 0; m < c.rows(); ++m) {
        const double inv_b2 = std::exp(-2.0 * lb(m, 0));
        const Tensor diff = x.rowwise() - c.row(m);          // n x d
        const VectorXd w = g.col(m).cwiseProduct(n.value.col(m));
        if (wants(0)) {
          gx.noalias() +=
              (-2.0 * inv_b2) * (diff.array().colwise() * w.array()).matrix();
        }
        if (wants(1)) gc.row(m) = (2.0 * inv_b2) * (w.transpose() * diff);
        if (wants(2)) {
          glb(m, 0) = 2.0 * inv_b2 * w.dot(diff.rowwise().squaredNorm());
        }
      }
      if (wants(0)) push(0, gx);
      if (wants(1)) push(1, gc);
      if (wants(2)) push(2, glb);
      break;
    }
    case Op::kGatherRows: {
      Tensor gx = Tensor::Zero(A(0).rows(), A(0).cols());
      for (std::size_t i = 0; i < n.idx.size(); ++i) {
        gx.row(n.idx[i]) += g.row(static_cast<Eigen::Index>(i));
      }
      push(0, gx);
      break;
    }
    case Op::kRepeatRows: {
      Tensor gx = Tensor::Zero(A(0).rows(), A(0).cols());
      Eigen::Index r = 0;
      for (Eigen::Index i = 0; i < gx.rows(); ++i) {
        for (int k = 0; k < n.idx[static_cast<std::size_t>(i)]; ++k) {
          gx.row(i) += g.row(r++);
        }
      }
      push(0, gx);
      break;
    }
    case Op::kHCat:
      if (wants(0)) push(0, g.leftCols(A(0).cols()));
      if (wants(1)) push(1, g.rightCols(A(1).cols()));
      break;
    case Op::kSliceCols: {
      Tensor gx = Tensor::Zero(A(0).rows(), A(0).cols());
      gx.middleCols(n.d0, n.d1 - n.d0) = g;
      push(0, gx);
      break;
    }
    case Op::kReshape: {
      Tensor gx(A(0).rows(), A(0).cols());
      Eigen::Index k = 0;
      for (Eigen::Index i = 0; i < gx.rows(); ++i) {
        for (Eigen::Index j = 0; j < gx.cols(); ++j, ++k) {
          gx(i, j) = g(k / n.d1, k % n.d1);
        }
      }
      push(0, gx);
      break;
    }
  }
}

double gaussian_kl(const VectorXd& z_mu, const VectorXd& z_sd) {
  if (z_mu.size() != z_sd.size()) {
    throw ShapeError("gaussian_kl: dimension mismatch");
  }
  if ((z_sd.array() <= 0.0).any()) {
    throw NumericError("gaussian_kl: non-positive z_sd");
  }
  return (0.5 * (z_sd.array().square() + z_mu.array().square() - 1.0) -
          z_sd.array().log())
      .sum();
}

}  // namespace pivae
