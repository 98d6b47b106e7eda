#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>
#include <numbers>
#include <string>
#include <vector>

#include "pivae/adam.hpp"
#include "pivae/errors.hpp"
#include "pivae/graph.hpp"
#include "pivae/rng.hpp"
#include "pivae/tensor.hpp"
#include "support/fd.hpp"

using namespace pivae;

namespace {

Tensor rand_tensor(Rng& rng, Eigen::Index r, Eigen::Index c, double lo,
                   double hi) {
  Tensor t(r, c);
  for (Eigen::Index i = 0; i < r; ++i) {
    for (Eigen::Index j = 0; j < c; ++j) t(i, j) = rng.uniform(lo, hi);
  }
  return t;
}

// Values bounded away from zero so a +-1e-5 probe cannot cross the relu kink.
Tensor rand_tensor_off_zero(Rng& rng, Eigen::Index r, Eigen::Index c) {
  Tensor t(r, c);
  for (Eigen::Index i = 0; i < r; ++i) {
    for (Eigen::Index j = 0; j < c; ++j) {
      const double mag = rng.uniform(0.1, 1.5);
      t(i, j) = rng.uniform() < 0.5 ? -mag : mag;
    }
  }
  return t;
}

Tensor row_vec(std::initializer_list<double> xs) {
  Tensor t(1, static_cast<Eigen::Index>(xs.size()));
  Eigen::Index j = 0;
  for (const double x : xs) t(0, j++) = x;
  return t;
}

Tensor col_vec(std::initializer_list<double> xs) {
  Tensor t(static_cast<Eigen::Index>(xs.size()), 1);
  Eigen::Index i = 0;
  for (const double x : xs) t(i++, 0) = x;
  return t;
}

int fd_cases_checked = 0;

// Rebuilds the graph from scratch for every evaluation so the central
// difference probe and the reverse sweep see identical computations, then
// compares all input gradients against the oracle.
void check_against_fd(
    const std::string& what, std::vector<Tensor> leaves,
    const std::function<NodeId(Graph&, const std::vector<NodeId>&)>& build) {
  auto eval = [&](const std::vector<Tensor>& at, std::vector<Tensor>* grads) {
    Graph g;
    std::vector<NodeId> ids;
    ids.reserve(at.size());
    for (std::size_t i = 0; i < at.size(); ++i) {
      ids.push_back(g.input("x" + std::to_string(i)));
      g.bind(ids.back(), at[i]);
    }
    const NodeId out = build(g, ids);
    const double v = scalar_value(g.forward(out));
    if (grads != nullptr) {
      g.backward(out);
      for (const NodeId id : ids) grads->push_back(g.grad(id));
    }
    return v;
  };
  std::vector<Tensor> ad;
  eval(leaves, &ad);
  const std::vector<Tensor> fd = testsupport::fd_gradients(
      [&](const std::vector<Tensor>& at) { return eval(at, nullptr); },
      leaves);
  const double err = testsupport::max_rel_error(ad, fd);
  INFO("case: " << what);
  CHECK(err < 1e-4);
  ++fd_cases_checked;
}

template <typename E>
void expect_error(const std::function<void()>& fn, const std::string& substr) {
  try {
    fn();
    FAIL_CHECK("expected an exception mentioning '" << substr << "'");
  } catch (const E& e) {
    const std::string msg = e.what();
    INFO("message: " << msg);
    CHECK(msg.find(substr) != std::string::npos);
  }
}

// Numerical KL(N(mu, sd^2) || N(0, 1)) by Simpson's rule, independent of the
// closed form under test.
double kl_quadrature(double mu, double sd) {
  const double a = mu - 12.0 * sd - 10.0;
  const double b = mu + 12.0 * sd + 10.0;
  const int n = 40000;  // even
  const double h = (b - a) / n;
  auto log_q = [&](double x) {
    return -0.5 * std::log(2.0 * std::numbers::pi) - std::log(sd) -
           0.5 * (x - mu) * (x - mu) / (sd * sd);
  };
  auto log_p = [&](double x) {
    return -0.5 * std::log(2.0 * std::numbers::pi) - 0.5 * x * x;
  };
  double s = 0.0;
  for (int i = 0; i <= n; ++i) {
    const double x = a + h * i;
    const double w = (i == 0 || i == n) ? 1.0 : ((i % 2 != 0) ? 4.0 : 2.0);
    s += w * std::exp(log_q(x)) * (log_q(x) - log_p(x));
  }
  return s * h / 3.0;
}

}  // namespace

TEST_CASE("parameter store registers, looks up, and zeroes gradients") {
  ParameterStore store;
  const int w = store.add("w", Tensor::Zero(2, 3));
  const int b = store.add("b", Tensor::Ones(1, 3));
  CHECK(w == 0);
  CHECK(b == 1);
  CHECK(store.size() == 2);
  CHECK(store.index_of("w") == 0);
  CHECK(store.index_of("missing") == -1);
  CHECK(store.name(1) == "b");
  CHECK(store.parameter_count() == 9);
  CHECK(store.value("b")(0, 2) == 1.0);

  store.grad(0).setConstant(5.0);
  store.zero_grads();
  CHECK(store.grad(0).isZero(0.0));

  CHECK_THROWS_AS(store.add("w", Tensor::Zero(1, 1)), Error);
  CHECK_THROWS_AS(store.value("missing"), Error);
}

TEST_CASE("elementwise and matrix forwards match hand arithmetic") {
  Graph g;
  const NodeId a = g.constant(row_vec({1.0, 2.0, 3.0}));
  const NodeId s = g.constant_scalar(10.0);

  CHECK(g.forward(g.add(a, s)) == row_vec({11.0, 12.0, 13.0}));
  CHECK(g.forward(g.sub(s, a)) == row_vec({9.0, 8.0, 7.0}));
  CHECK(g.forward(g.mul(a, s)) == row_vec({10.0, 20.0, 30.0}));
  CHECK(g.forward(g.scale(a, -2.0)) == row_vec({-2.0, -4.0, -6.0}));
  CHECK(g.forward(g.shift(a, 5.0)) == row_vec({6.0, 7.0, 8.0}));
  CHECK(scalar_value(g.forward(g.reduce_sum(a))) == 6.0);
  CHECK(scalar_value(g.forward(g.reduce_mean(a))) == 2.0);

  Tensor lhs(2, 3);
  lhs << 1, 2, 3, 4, 5, 6;
  Tensor rhs(3, 2);
  rhs << 7, 8, 9, 10, 11, 12;
  Tensor want(2, 2);
  want << 58, 64, 139, 154;
  CHECK(g.forward(g.matmul(g.constant(lhs), g.constant(rhs))) == want);

  Tensor rs(2, 1);
  rs << 6, 15;
  CHECK(g.forward(g.row_sum(g.constant(lhs))) == rs);

  // x W + broadcast bias
  Tensor w2(2, 2);
  w2 << 1, 0, 0, 1;
  const NodeId aff = g.affine(g.constant(row_vec({1.0, 2.0})),
                              g.constant(w2), g.constant(row_vec({10.0, 20.0})));
  CHECK(g.forward(aff) == row_vec({11.0, 22.0}));

  CHECK(scalar_value(g.forward(g.squared_error(
            g.constant(row_vec({1.0, 2.0})),
            g.constant(row_vec({3.0, 5.0}))))) == 13.0);

  CHECK(scalar_value(g.forward(g.tanh(g.constant_scalar(0.0)))) == 0.0);
  CHECK(scalar_value(g.forward(g.relu(g.constant_scalar(-2.0)))) == 0.0);
  CHECK(scalar_value(g.forward(g.relu(g.constant_scalar(2.0)))) == 2.0);
  CHECK(scalar_value(g.forward(g.exp(g.constant_scalar(0.0)))) == 1.0);
  CHECK(scalar_value(g.forward(g.log(g.constant_scalar(1.0)))) == 0.0);
  CHECK(scalar_value(g.forward(g.square(g.constant_scalar(-3.0)))) == 9.0);
}

TEST_CASE("structural ops reorder values exactly") {
  Graph g;
  Tensor x(2, 3);
  x << 1, 2, 3, 4, 5, 6;
  const NodeId xc = g.constant(x);

  Tensor resh(3, 2);
  resh << 1, 2, 3, 4, 5, 6;  // row-major reading order preserved
  CHECK(g.forward(g.reshape(xc, 3, 2)) == resh);

  Tensor sl(2, 2);
  sl << 2, 3, 5, 6;
  CHECK(g.forward(g.slice_cols(xc, 1, 3)) == sl);

  Tensor cat_rhs(2, 1);
  cat_rhs << 9, 10;
  Tensor cat(2, 4);
  cat << 1, 2, 3, 9, 4, 5, 6, 10;
  CHECK(g.forward(g.hcat(xc, g.constant(cat_rhs))) == cat);

  Tensor gath(3, 3);
  gath << 4, 5, 6, 1, 2, 3, 4, 5, 6;
  CHECK(g.forward(g.gather_rows(xc, {1, 0, 1})) == gath);

  Tensor rep(3, 3);
  rep << 1, 2, 3, 1, 2, 3, 4, 5, 6;
  CHECK(g.forward(g.repeat_rows(xc, {2, 1})) == rep);

  // Zero repeat counts drop rows.
  Tensor rep0(1, 3);
  rep0 << 4, 5, 6;
  CHECK(g.forward(g.repeat_rows(xc, {0, 1})) == rep0);
}

TEST_CASE("sum of squared entries of [3,4] is 25") {
  Graph g;
  const NodeId x = g.input("x");
  g.bind("x", row_vec({3.0, 4.0}));
  CHECK(scalar_value(g.forward(g.reduce_sum(g.square(x)))) == 25.0);
}

TEST_CASE("gradient of w*w at w=3 is 6, for both inputs and parameters") {
  {
    Graph g;
    const NodeId x = g.input("x");
    g.bind("x", make_scalar(3.0));
    const NodeId f = g.square(x);
    g.forward(f);
    g.backward(f);
    CHECK(scalar_value(g.grad(x)) == 6.0);
  }
  {
    ParameterStore store;
    store.add("w", make_scalar(3.0));
    Graph g(&store);
    const NodeId w = g.param("w");
    const NodeId f = g.square(w);
    g.forward(f);
    store.zero_grads();
    g.backward(f);
    CHECK(scalar_value(store.grad("w")) == 6.0);
  }
}

TEST_CASE("gradient of a value with respect to itself is one") {
  Graph g;
  const NodeId x = g.input("x");
  g.bind("x", make_scalar(7.5));
  g.forward(x);
  g.backward(x);
  CHECK(scalar_value(g.grad(x)) == 1.0);

  ParameterStore store;
  store.add("w", make_scalar(-2.0));
  Graph gp(&store);
  const NodeId w = gp.param("w");
  gp.forward(w);
  store.zero_grads();
  gp.backward(w);
  CHECK(scalar_value(store.grad("w")) == 1.0);
}

TEST_CASE("constant-only expressions leave parameter gradients at zero") {
  ParameterStore store;
  store.add("w", make_scalar(4.0));
  Graph g(&store);
  g.param("w");  // present in the graph but not in the output's ancestry
  const NodeId f =
      g.reduce_sum(g.mul(g.constant(row_vec({1.0, 2.0})),
                         g.constant(row_vec({3.0, 4.0}))));
  CHECK(scalar_value(g.forward(f)) == 11.0);
  store.zero_grads();
  g.backward(f);
  CHECK(scalar_value(store.grad("w")) == 0.0);
}

TEST_CASE("scalar broadcast adjoint is the sum over the broadcast shape") {
  // f = sum(W .* (s + B)) so df/ds = sum(W), exactly.
  Graph g;
  const NodeId s = g.input("s");
  g.bind("s", make_scalar(0.25));
  Tensor b(2, 2);
  b << 1, 2, 3, 4;
  Tensor w(2, 2);
  w << 10, 20, 30, 40;
  const NodeId f = g.reduce_sum(g.mul(g.constant(w), g.add(s, g.constant(b))));
  g.forward(f);
  g.backward(f);
  CHECK(scalar_value(g.grad(s)) == 100.0);
}

TEST_CASE("gather rows scatter-adds adjoints into shared source rows") {
  Graph g;
  const NodeId x = g.input("x");
  Tensor xv(3, 2);
  xv << 1, 2, 3, 4, 5, 6;
  g.bind("x", xv);
  Tensor w(3, 2);
  w << 10, 20, 30, 40, 50, 60;
  const NodeId f =
      g.reduce_sum(g.mul(g.gather_rows(x, {0, 0, 2}), g.constant(w)));
  g.forward(f);
  g.backward(f);
  Tensor want(3, 2);
  want << 40, 60, 0, 0, 50, 60;  // rows 0+1 of w land on source row 0
  CHECK(g.grad(x) == want);
}

TEST_CASE("repeat rows sums adjoints over each row's copies") {
  Graph g;
  const NodeId x = g.input("x");
  g.bind("x", col_vec({1.0, 2.0}));
  const NodeId f = g.reduce_sum(
      g.mul(g.repeat_rows(x, {2, 1}), g.constant(col_vec({5.0, 7.0, 11.0}))));
  g.forward(f);
  g.backward(f);
  CHECK(g.grad(x) == col_vec({12.0, 11.0}));
}

TEST_CASE("kl divergence to the standard normal matches quadrature") {
  // Closed form: KL = sum 0.5*(sd^2 + mu^2 - 1) - log sd.
  CHECK(gaussian_kl(col_vec({0.0}), col_vec({1.0})) == 0.0);
  CHECK(gaussian_kl(col_vec({1.0}), col_vec({1.0})) ==
        doctest::Approx(0.5).epsilon(1e-14));
  CHECK(gaussian_kl(col_vec({0.0}), col_vec({2.0})) ==
        doctest::Approx(1.5 - std::log(2.0)).epsilon(1e-14));

  for (const auto& [mu, sd] : std::vector<std::pair<double, double>>{
           {1.0, 1.0}, {0.0, 2.0}, {0.3, 0.7}, {-1.2, 1.9}, {2.5, 0.4}}) {
    const double closed = gaussian_kl(col_vec({mu}), col_vec({sd}));
    const double quad = kl_quadrature(mu, sd);
    INFO("mu=" << mu << " sd=" << sd);
    CHECK(closed == doctest::Approx(quad).epsilon(1e-8));
  }

  // Graph op agrees with the free function and sums over dimensions.
  Rng rng(41);
  const Tensor mu = rand_tensor(rng, 5, 1, -2.0, 2.0);
  const Tensor sd = rand_tensor(rng, 5, 1, 0.2, 3.0);
  double manual = 0.0;
  for (Eigen::Index i = 0; i < 5; ++i) {
    manual += gaussian_kl(col_vec({mu(i, 0)}), col_vec({sd(i, 0)}));
  }
  Graph g;
  const NodeId node = g.gaussian_kl(g.constant(mu), g.constant(sd));
  CHECK(scalar_value(g.forward(node)) ==
        doctest::Approx(gaussian_kl(mu, sd)).epsilon(1e-14));
  CHECK(gaussian_kl(mu, sd) == doctest::Approx(manual).epsilon(1e-14));

  // Non-negativity, with equality only at the standard normal.
  for (int t = 0; t < 200; ++t) {
    const Tensor m = rand_tensor(rng, 3, 1, -3.0, 3.0);
    const Tensor s = rand_tensor(rng, 3, 1, 0.05, 4.0);
    CHECK(gaussian_kl(m, s) >= 0.0);
  }

  CHECK_THROWS_AS(gaussian_kl(col_vec({0.0}), col_vec({0.0})), NumericError);
  CHECK_THROWS_AS(gaussian_kl(col_vec({0.0}), col_vec({-1.0})), NumericError);
  CHECK_THROWS_AS(gaussian_kl(col_vec({0.0, 1.0}), col_vec({1.0})),
                  ShapeError);
}

TEST_CASE("gaussian log-likelihood equals the summed log density") {
  Graph g;
  // Single observation at its mean with unit deviation.
  const NodeId single = g.gaussian_loglik(
      g.constant_scalar(0.0), g.constant_scalar(0.0), g.constant_scalar(0.0));
  CHECK(scalar_value(g.forward(single)) ==
        doctest::Approx(-0.9189385332046727).epsilon(1e-15));

  Rng rng(17);
  const Tensor y = rand_tensor(rng, 7, 1, -3.0, 3.0);
  const Tensor mu = rand_tensor(rng, 7, 1, -3.0, 3.0);
  const double log_sigma = 0.35;
  const double sigma = std::exp(log_sigma);
  double direct = 0.0;
  for (Eigen::Index i = 0; i < 7; ++i) {
    const double z = (y(i, 0) - mu(i, 0)) / sigma;
    direct += std::log(std::exp(-0.5 * z * z) /
                       (sigma * std::sqrt(2.0 * std::numbers::pi)));
  }
  const NodeId node = g.gaussian_loglik(g.constant(y), g.constant(mu),
                                        g.constant_scalar(log_sigma));
  CHECK(scalar_value(g.forward(node)) ==
        doctest::Approx(direct).epsilon(1e-12));
}

TEST_CASE("rbf features match the per-entry kernel formula") {
  Rng rng(23);
  const Tensor locs = rand_tensor(rng, 6, 2, -2.0, 2.0);
  const Tensor centres = rand_tensor(rng, 4, 2, -2.0, 2.0);
  const Tensor log_bw = rand_tensor(rng, 4, 1, -0.5, 0.8);
  Graph g;
  const NodeId node = g.rbf_features(g.constant(locs), g.constant(centres),
                                     g.constant(log_bw));
  const Tensor& phi = g.forward(node);
  REQUIRE(phi.rows() == 6);
  REQUIRE(phi.cols() == 4);
  for (Eigen::Index i = 0; i < 6; ++i) {
    for (Eigen::Index m = 0; m < 4; ++m) {
      const double b = std::exp(log_bw(m, 0));
      const double d2 = (locs.row(i) - centres.row(m)).squaredNorm();
      CHECK(phi(i, m) == doctest::Approx(std::exp(-d2 / (b * b)))
                             .epsilon(1e-13));
    }
  }

  // A location sitting on a centre activates that feature fully.
  Tensor at_centre = centres.row(2);
  Graph g2;
  const NodeId n2 = g2.rbf_features(g2.constant(at_centre),
                                    g2.constant(centres), g2.constant(log_bw));
  CHECK(g2.forward(n2)(0, 2) == 1.0);
}

TEST_CASE("reverse-mode gradients agree with central differences") {
  Rng rng(2024);
  for (int trial = 0; trial < 5; ++trial) {
    const Eigen::Index n = 2 + trial;
    const Eigen::Index m = 3 + (trial % 2);
    const Eigen::Index d = 1 + (trial % 3);
    const std::string tag = " t" + std::to_string(trial);

    // Per-case weight constants are fixed up front so rebuilds are identical.
    const Tensor w_nm = rand_tensor(rng, n, m, -1.0, 1.0);
    const Tensor w_nd = rand_tensor(rng, n, d, -1.0, 1.0);
    const Tensor w_n1 = rand_tensor(rng, n, 1, -1.0, 1.0);

    check_against_fd("add" + tag,
                     {rand_tensor(rng, n, m, -2.0, 2.0),
                      rand_tensor(rng, n, m, -2.0, 2.0)},
                     [&](Graph& g, const std::vector<NodeId>& in) {
                       return g.reduce_sum(
                           g.mul(g.add(in[0], in[1]), g.constant(w_nm)));
                     });
    check_against_fd("add scalar broadcast" + tag,
                     {rand_tensor(rng, 1, 1, -2.0, 2.0),
                      rand_tensor(rng, n, m, -2.0, 2.0)},
                     [&](Graph& g, const std::vector<NodeId>& in) {
                       return g.reduce_sum(
                           g.mul(g.add(in[0], in[1]), g.constant(w_nm)));
                     });
    check_against_fd("sub" + tag,
                     {rand_tensor(rng, n, m, -2.0, 2.0),
                      rand_tensor(rng, n, m, -2.0, 2.0)},
                     [&](Graph& g, const std::vector<NodeId>& in) {
                       return g.reduce_sum(
                           g.mul(g.sub(in[0], in[1]), g.constant(w_nm)));
                     });
    check_against_fd("sub scalar broadcast" + tag,
                     {rand_tensor(rng, n, m, -2.0, 2.0),
                      rand_tensor(rng, 1, 1, -2.0, 2.0)},
                     [&](Graph& g, const std::vector<NodeId>& in) {
                       return g.reduce_sum(
                           g.mul(g.sub(in[0], in[1]), g.constant(w_nm)));
                     });
    check_against_fd("mul" + tag,
                     {rand_tensor(rng, n, m, -2.0, 2.0),
                      rand_tensor(rng, n, m, -2.0, 2.0)},
                     [&](Graph& g, const std::vector<NodeId>& in) {
                       return g.reduce_sum(
                           g.mul(g.mul(in[0], in[1]), g.constant(w_nm)));
                     });
    check_against_fd("mul scalar broadcast" + tag,
                     {rand_tensor(rng, 1, 1, -2.0, 2.0),
                      rand_tensor(rng, n, m, -2.0, 2.0)},
                     [&](Graph& g, const std::vector<NodeId>& in) {
                       return g.reduce_sum(
                           g.mul(g.mul(in[0], in[1]), g.constant(w_nm)));
                     });
    check_against_fd("matmul" + tag,
                     {rand_tensor(rng, n, m, -1.5, 1.5),
                      rand_tensor(rng, m, d, -1.5, 1.5)},
                     [&](Graph& g, const std::vector<NodeId>& in) {
                       return g.reduce_sum(
                           g.mul(g.matmul(in[0], in[1]), g.constant(w_nd)));
                     });
    check_against_fd("affine" + tag,
                     {rand_tensor(rng, n, m, -1.5, 1.5),
                      rand_tensor(rng, m, d, -1.5, 1.5),
                      rand_tensor(rng, 1, d, -1.5, 1.5)},
                     [&](Graph& g, const std::vector<NodeId>& in) {
                       return g.reduce_sum(g.mul(
                           g.affine(in[0], in[1], in[2]), g.constant(w_nd)));
                     });
    check_against_fd("tanh" + tag, {rand_tensor(rng, n, m, -2.0, 2.0)},
                     [&](Graph& g, const std::vector<NodeId>& in) {
                       return g.reduce_sum(
                           g.mul(g.tanh(in[0]), g.constant(w_nm)));
                     });
    check_against_fd("relu" + tag, {rand_tensor_off_zero(rng, n, m)},
                     [&](Graph& g, const std::vector<NodeId>& in) {
                       return g.reduce_sum(
                           g.mul(g.relu(in[0]), g.constant(w_nm)));
                     });
    check_against_fd("exp" + tag, {rand_tensor(rng, n, m, -1.0, 1.0)},
                     [&](Graph& g, const std::vector<NodeId>& in) {
                       return g.reduce_sum(
                           g.mul(g.exp(in[0]), g.constant(w_nm)));
                     });
    check_against_fd("log" + tag, {rand_tensor(rng, n, m, 0.2, 3.0)},
                     [&](Graph& g, const std::vector<NodeId>& in) {
                       return g.reduce_sum(
                           g.mul(g.log(in[0]), g.constant(w_nm)));
                     });
    check_against_fd("square" + tag, {rand_tensor(rng, n, m, -2.0, 2.0)},
                     [&](Graph& g, const std::vector<NodeId>& in) {
                       return g.reduce_sum(
                           g.mul(g.square(in[0]), g.constant(w_nm)));
                     });
    check_against_fd("scale shift" + tag, {rand_tensor(rng, n, m, -2.0, 2.0)},
                     [&](Graph& g, const std::vector<NodeId>& in) {
                       return g.reduce_sum(g.mul(
                           g.shift(g.scale(in[0], -2.5), 1.25),
                           g.constant(w_nm)));
                     });
    check_against_fd("reduce_sum" + tag, {rand_tensor(rng, n, m, -2.0, 2.0)},
                     [&](Graph& g, const std::vector<NodeId>& in) {
                       return g.reduce_sum(in[0]);
                     });
    check_against_fd("reduce_mean" + tag, {rand_tensor(rng, n, m, -2.0, 2.0)},
                     [&](Graph& g, const std::vector<NodeId>& in) {
                       return g.reduce_mean(g.square(in[0]));
                     });
    check_against_fd("row_sum" + tag, {rand_tensor(rng, n, m, -2.0, 2.0)},
                     [&](Graph& g, const std::vector<NodeId>& in) {
                       return g.reduce_sum(
                           g.mul(g.row_sum(in[0]), g.constant(w_n1)));
                     });
    check_against_fd("squared_error" + tag,
                     {rand_tensor(rng, n, m, -2.0, 2.0),
                      rand_tensor(rng, n, m, -2.0, 2.0)},
                     [&](Graph& g, const std::vector<NodeId>& in) {
                       return g.squared_error(in[0], in[1]);
                     });
    check_against_fd("gaussian_loglik" + tag,
                     {rand_tensor(rng, n, 1, -2.0, 2.0),
                      rand_tensor(rng, n, 1, -2.0, 2.0),
                      rand_tensor(rng, 1, 1, -0.5, 0.5)},
                     [&](Graph& g, const std::vector<NodeId>& in) {
                       return g.gaussian_loglik(in[0], in[1], in[2]);
                     });
    check_against_fd("gaussian_kl" + tag,
                     {rand_tensor(rng, n, 1, -2.0, 2.0),
                      rand_tensor(rng, n, 1, 0.3, 2.0)},
                     [&](Graph& g, const std::vector<NodeId>& in) {
                       return g.gaussian_kl(in[0], in[1]);
                     });
    check_against_fd("rbf_features" + tag,
                     {rand_tensor(rng, n, d, -2.0, 2.0),
                      rand_tensor(rng, m, d, -2.0, 2.0),
                      rand_tensor(rng, m, 1, -0.3, 0.7)},
                     [&](Graph& g, const std::vector<NodeId>& in) {
                       return g.reduce_sum(g.mul(
                           g.rbf_features(in[0], in[1], in[2]),
                           g.constant(w_nm)));
                     });
    {
      std::vector<int> rows;
      for (int i = 0; i < 2 * n; ++i) {
        rows.push_back(static_cast<int>(rng.integer(
            static_cast<std::uint64_t>(n))));
      }
      const Tensor w_g = rand_tensor(rng, 2 * n, m, -1.0, 1.0);
      check_against_fd("gather_rows" + tag,
                       {rand_tensor(rng, n, m, -2.0, 2.0)},
                       [&, rows](Graph& g, const std::vector<NodeId>& in) {
                         return g.reduce_sum(
                             g.mul(g.gather_rows(in[0], rows),
                                   g.constant(w_g)));
                       });
    }
    {
      std::vector<int> counts;
      int total = 0;
      for (Eigen::Index i = 0; i < n; ++i) {
        const int c = static_cast<int>(rng.integer(4));  // zero allowed
        counts.push_back(c);
        total += c;
      }
      if (total == 0) {
        counts[0] = 1;
        total = 1;
      }
      const Tensor w_r = rand_tensor(rng, total, m, -1.0, 1.0);
      check_against_fd("repeat_rows" + tag,
                       {rand_tensor(rng, n, m, -2.0, 2.0)},
                       [&, counts](Graph& g, const std::vector<NodeId>& in) {
                         return g.reduce_sum(
                             g.mul(g.repeat_rows(in[0], counts),
                                   g.constant(w_r)));
                       });
    }
    {
      const Tensor w_h = rand_tensor(rng, n, m + d, -1.0, 1.0);
      check_against_fd("hcat" + tag,
                       {rand_tensor(rng, n, m, -2.0, 2.0),
                        rand_tensor(rng, n, d, -2.0, 2.0)},
                       [&](Graph& g, const std::vector<NodeId>& in) {
                         return g.reduce_sum(
                             g.mul(g.hcat(in[0], in[1]), g.constant(w_h)));
                       });
    }
    check_against_fd("slice_cols" + tag,
                     {rand_tensor(rng, n, m + 2, -2.0, 2.0)},
                     [&](Graph& g, const std::vector<NodeId>& in) {
                       return g.reduce_sum(
                           g.mul(g.slice_cols(in[0], 1, static_cast<int>(m) + 1),
                                 g.constant(w_nm)));
                     });
    {
      const Tensor w_re = rand_tensor(rng, 2 * n, m, -1.0, 1.0);
      check_against_fd("reshape" + tag,
                       {rand_tensor(rng, n, 2 * m, -2.0, 2.0)},
                       [&](Graph& g, const std::vector<NodeId>& in) {
                         return g.reduce_sum(
                             g.mul(g.reshape(in[0], 2 * n, m),
                                   g.constant(w_re)));
                       });
    }
    {
      // Two-layer tanh network with every weight treated as a leaf.
      const Eigen::Index h = 4;
      check_against_fd("mlp" + tag,
                       {rand_tensor(rng, n, d, -1.5, 1.5),
                        rand_tensor(rng, d, h, -1.0, 1.0),
                        rand_tensor(rng, 1, h, -1.0, 1.0),
                        rand_tensor(rng, h, 1, -1.0, 1.0),
                        rand_tensor(rng, 1, 1, -1.0, 1.0)},
                       [&](Graph& g, const std::vector<NodeId>& in) {
                         const NodeId hidden =
                             g.tanh(g.affine(in[0], in[1], in[2]));
                         const NodeId out = g.affine(hidden, in[3], in[4]);
                         return g.reduce_sum(g.mul(out, g.constant(w_n1)));
                       });
    }
    {
      // Reconstruction + divergence + likelihood composite, the shape the
      // training objective takes.
      const Eigen::Index f = 3;
      const Tensor y = rand_tensor(rng, n, 1, -2.0, 2.0);
      check_against_fd(
          "composite loss" + tag,
          {rand_tensor(rng, n, 1, -2.0, 2.0),   // locations
           rand_tensor(rng, f, 1, -2.0, 2.0),   // centres
           rand_tensor(rng, f, 1, -0.3, 0.5),   // log bandwidths
           rand_tensor(rng, f, 1, -1.0, 1.0),   // feature weights
           rand_tensor(rng, 3, 1, -1.0, 1.0),   // latent mean
           rand_tensor(rng, 3, 1, 0.4, 1.6),    // latent sd
           rand_tensor(rng, 1, 1, -0.4, 0.4)},  // log noise
          [&](Graph& g, const std::vector<NodeId>& in) {
            const NodeId phi = g.rbf_features(in[0], in[1], in[2]);
            const NodeId pred = g.matmul(phi, in[3]);
            const NodeId yc = g.constant(y);
            const NodeId fit = g.squared_error(yc, pred);
            const NodeId kl = g.gaussian_kl(in[4], in[5]);
            const NodeId ll = g.gaussian_loglik(yc, pred, in[6]);
            return g.add(g.add(fit, kl), g.scale(ll, -1.0));
          });
    }
  }
  // The sweep above is the contract: every op differentiated, many shapes.
  CHECK(fd_cases_checked >= 100);
}

TEST_CASE("parameter gradients accumulate across backward calls") {
  ParameterStore store;
  store.add("w", make_scalar(3.0));
  Graph g(&store);
  const NodeId f = g.square(g.param("w"));
  g.forward(f);
  store.zero_grads();
  g.backward(f);
  g.backward(f);
  CHECK(scalar_value(store.grad("w")) == 12.0);  // 6 + 6

  store.zero_grads();
  g.backward(f);
  CHECK(scalar_value(store.grad("w")) == 6.0);
}

TEST_CASE("input gradients reset on every backward call") {
  Graph g;
  const NodeId x = g.input("x");
  g.bind("x", make_scalar(3.0));
  const NodeId f = g.square(x);
  g.forward(f);
  g.backward(f);
  g.backward(f);
  CHECK(scalar_value(g.grad(x)) == 6.0);
}

TEST_CASE("rebinding an input invalidates cached values") {
  Graph g;
  const NodeId x = g.input("x");
  const NodeId f = g.square(x);
  g.bind("x", make_scalar(2.0));
  CHECK(scalar_value(g.forward(f)) == 4.0);
  CHECK(scalar_value(g.forward(f)) == 4.0);  // cached, identical
  g.bind("x", make_scalar(3.0));
  CHECK(scalar_value(g.forward(f)) == 9.0);
}

TEST_CASE("rebinding one input re-evaluates only downstream values") {
  Graph g;
  const NodeId x = g.input("x");
  const NodeId y = g.input("y");
  const NodeId f = g.add(g.square(x), y);
  g.bind("x", make_scalar(2.0));
  g.bind("y", make_scalar(1.0));
  CHECK(scalar_value(g.forward(f)) == 5.0);
  g.bind("y", make_scalar(10.0));
  CHECK(scalar_value(g.forward(f)) == 14.0);
}

TEST_CASE("parameter updates through the store invalidate cached values") {
  ParameterStore store;
  store.add("w", make_scalar(2.0));
  Graph g(&store);
  const NodeId f = g.square(g.param("w"));
  CHECK(scalar_value(g.forward(f)) == 4.0);
  store.value("w")(0, 0) = 5.0;
  store.bump_version();
  CHECK(scalar_value(g.forward(f)) == 25.0);
}

TEST_CASE("identical graphs over identical inputs give bit-identical results") {
  Rng rng(7);
  const Tensor x = rand_tensor(rng, 4, 2, -1.0, 1.0);
  const Tensor w1 = rand_tensor(rng, 2, 5, -1.0, 1.0);
  const Tensor b1 = rand_tensor(rng, 1, 5, -1.0, 1.0);
  const Tensor w2 = rand_tensor(rng, 5, 1, -1.0, 1.0);
  auto run = [&](Tensor* gx) {
    Graph g;
    const NodeId xi = g.input("x");
    g.bind("x", x);
    const NodeId out = g.reduce_sum(g.matmul(
        g.tanh(g.affine(xi, g.constant(w1), g.constant(b1))), g.constant(w2)));
    const double v = scalar_value(g.forward(out));
    g.backward(out);
    *gx = g.grad(xi);
    return v;
  };
  Tensor ga, gb;
  const double va = run(&ga);
  const double vb = run(&gb);
  CHECK(va == vb);
  CHECK(ga == gb);
}

TEST_CASE("shape and domain violations raise typed errors naming the node") {
  Graph g;
  const NodeId a = g.constant(Tensor::Zero(2, 2));
  const NodeId b = g.constant(Tensor::Zero(3, 1));

  expect_error<ShapeError>([&] { g.forward(g.add(a, b)); }, "add");
  expect_error<ShapeError>([&] { g.forward(g.add(a, b)); }, "node #");
  expect_error<ShapeError>([&] { g.forward(g.matmul(a, b)); }, "matmul");
  expect_error<ShapeError>([&] { g.forward(g.squared_error(a, b)); },
                           "squared_error");
  expect_error<ShapeError>([&] { g.forward(g.hcat(a, b)); }, "hcat");
  expect_error<NumericError>(
      [&] { g.forward(g.log(g.constant_scalar(-1.0))); }, "log");
  expect_error<NumericError>(
      [&] {
        g.forward(g.gaussian_kl(g.constant_scalar(0.0),
                                g.constant_scalar(0.0)));
      },
      "z_sd");
  expect_error<NumericError>(
      [&] { g.forward(g.exp(g.constant_scalar(1000.0))); }, "non-finite");
  expect_error<ShapeError>(
      [&] {
        g.forward(g.gaussian_loglik(b, b, g.constant(Tensor::Zero(2, 1))));
      },
      "log_sigma");
  expect_error<ShapeError>([&] { g.forward(g.slice_cols(a, 1, 5)); }, "slice");
  expect_error<ShapeError>([&] { g.forward(g.reshape(a, 3, 3)); }, "reshape");
  expect_error<ShapeError>([&] { g.forward(g.gather_rows(a, {0, 2})); },
                           "out of range");
  expect_error<ShapeError>([&] { g.forward(g.repeat_rows(a, {1, -1})); },
                           "negative");
  expect_error<ShapeError>([&] { g.forward(g.repeat_rows(a, {1})); },
                           "counts");
  expect_error<ShapeError>(
      [&] {
        g.forward(g.affine(a, g.constant(Tensor::Zero(2, 2)),
                           g.constant(Tensor::Zero(2, 2))));
      },
      "affine");

  // Backward demands a scalar output.
  expect_error<ShapeError>(
      [&] {
        Graph h;
        const NodeId x = h.input("x");
        h.bind("x", Tensor::Zero(2, 2));
        const NodeId out = h.square(x);
        h.forward(out);
        h.backward(out);
      },
      "scalar");

  expect_error<Error>(
      [&] {
        Graph h;
        const NodeId x = h.input("x");
        h.forward(x);
      },
      "before bind");
  expect_error<Error>(
      [&] {
        Graph h;
        h.input("x");
        h.input("x");
      },
      "duplicate");
  expect_error<Error>([&] { g.bind("nope", make_scalar(0.0)); }, "no input");
  expect_error<Error>(
      [&] {
        Graph h;
        h.bind(h.constant_scalar(1.0), make_scalar(0.0));
      },
      "not an input");
  expect_error<Error>(
      [&] {
        Graph h;  // no parameter store attached
        h.param("w");
      },
      "ParameterStore");
  expect_error<Error>(
      [&] {
        ParameterStore store;
        Graph h(&store);
        h.param("w");
      },
      "unknown parameter");
}

TEST_CASE("adam config validation rejects out-of-range hyperparameters") {
  AdamConfig c;
  CHECK_NOTHROW(c.validate());
  c.learning_rate = 0.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = AdamConfig{};
  c.beta1 = 1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = AdamConfig{};
  c.beta2 = -0.1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = AdamConfig{};
  c.eps = 0.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("first adam step matches the closed form") {
  // With zero state, the bias-corrected moments are exactly g and g^2, so the
  // update is lr * g / (|g| + eps).
  Tensor w = make_scalar(0.0);
  Tensor g = make_scalar(-4.0);
  AdamConfig c;
  c.learning_rate = 0.1;
  AdamState st = make_adam_state({&w}, c);
  adam_step({&w}, {&g}, st);
  const double expected = 0.0 - 0.1 * (-4.0) / (4.0 + 1e-8);
  CHECK(w(0, 0) == doctest::Approx(expected).epsilon(1e-14));
  CHECK(st.step == 1);
}

TEST_CASE("zero gradient leaves parameters exactly unchanged") {
  Tensor w = row_vec({1.5, -2.5});
  const Tensor before = w;
  Tensor g = Tensor::Zero(1, 2);
  AdamState st = make_adam_state({&w}, AdamConfig{});
  adam_step({&w}, {&g}, st);
  CHECK(w == before);
}

TEST_CASE("nan gradients are rejected with optimizer state untouched") {
  Tensor w = make_scalar(1.0);
  Tensor good = make_scalar(0.5);
  AdamState st = make_adam_state({&w}, AdamConfig{});
  adam_step({&w}, {&good}, st);
  const Tensor w_before = w;
  const Tensor m_before = st.m[0];
  const Tensor v_before = st.v[0];

  Tensor bad = make_scalar(std::nan(""));
  CHECK_THROWS_AS(adam_step({&w}, {&bad}, st), NumericError);
  CHECK(w == w_before);
  CHECK(st.m[0] == m_before);
  CHECK(st.v[0] == v_before);
  CHECK(st.step == 1);
}

TEST_CASE("adam shape and count mismatches are rejected") {
  Tensor w = make_scalar(1.0);
  Tensor g = make_scalar(0.0);
  AdamState st = make_adam_state({&w}, AdamConfig{});
  CHECK_THROWS_AS(adam_step({&w, &w}, {&g, &g}, st), ShapeError);
  Tensor g_bad = Tensor::Zero(2, 1);
  CHECK_THROWS_AS(adam_step({&w}, {&g_bad}, st), ShapeError);
}

TEST_CASE("adam drives a quadratic to its minimum through the store") {
  ParameterStore store;
  store.add("w", make_scalar(0.0));
  Graph g(&store);
  const NodeId loss = g.squared_error(g.param("w"), g.constant_scalar(2.0));
  AdamConfig c;
  c.learning_rate = 0.1;
  AdamOptimizer opt(store, c);
  double first = scalar_value(g.forward(loss));
  for (int i = 0; i < 1500; ++i) {
    store.zero_grads();
    g.forward(loss);
    g.backward(loss);
    opt.step();
  }
  const double final_loss = scalar_value(g.forward(loss));
  CHECK(first == 4.0);
  CHECK(std::abs(store.value("w")(0, 0) - 2.0) < 0.02);
  CHECK(final_loss < 1e-3);
}

TEST_CASE("gradient steps on a graph input recover a target latent") {
  Graph g;
  const NodeId z = g.input("z");
  const Tensor target = col_vec({0.5, -1.0, 2.0});
  const NodeId loss = g.squared_error(z, g.constant(target));
  Tensor zv = Tensor::Zero(3, 1);
  for (int i = 0; i < 200; ++i) {
    g.bind(z, zv);
    g.forward(loss);
    g.backward(loss);
    zv -= 0.2 * g.grad(z);
  }
  CHECK((zv - target).cwiseAbs().maxCoeff() < 1e-3);
}
