#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <limits>
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "pivae/dataset_io.hpp"
#include "pivae/errors.hpp"
#include "pivae/kernels.hpp"
#include "pivae/rng.hpp"
#include "pivae/samplers.hpp"

using namespace pivae;

namespace {

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

// Independent monotonicity decision: evaluate the derivative on a dense grid
// plus its analytic extremum and look for both signs. Returns no value for
// borderline cases where the extremum is too close to zero to classify.
enum class GridVerdict { kMonotone, kNotMonotone, kBorderline };

GridVerdict grid_monotone(double a, double b, double c, double lo, double hi) {
  auto p = [&](double s) { return (3.0 * a * s + 2.0 * b) * s + c; };
  std::vector<double> probe;
  const int n = 2000;
  for (int i = 0; i <= n; ++i) {
    probe.push_back(lo + (hi - lo) * static_cast<double>(i) / n);
  }
  if (a != 0.0) {
    const double vertex = -b / (3.0 * a);
    if (vertex > lo && vertex < hi) probe.push_back(vertex);
  }
  double mn = std::numeric_limits<double>::infinity();
  double mx = -std::numeric_limits<double>::infinity();
  double scale = 1.0;
  for (const double s : probe) {
    const double v = p(s);
    mn = std::min(mn, v);
    mx = std::max(mx, v);
    scale = std::max(scale, std::abs(v));
  }
  const double tol = 1e-9 * scale;
  if (std::abs(mn) < tol || std::abs(mx) < tol) return GridVerdict::kBorderline;
  return (mn < 0.0 && mx > 0.0) ? GridVerdict::kNotMonotone
                                : GridVerdict::kMonotone;
}

}  // namespace

TEST_CASE("kernel evaluation matches the closed forms") {
  KernelSpec rbf{KernelFamily::kRbf, 8.0, 1.0, 1e-8};
  CHECK(kernel_eval(rbf, 0.0) == 1.0);
  CHECK(kernel_eval(rbf, 8.0) == doctest::Approx(std::exp(-1.0)).epsilon(1e-14));
  CHECK(kernel_eval(rbf, 8.0) == doctest::Approx(0.36788).epsilon(1e-4));
  // Lengthscale enters squared: delta=4, l=8 -> exp(-16/64).
  CHECK(kernel_eval(rbf, 4.0) ==
        doctest::Approx(std::exp(-0.25)).epsilon(1e-14));

  KernelSpec mat{KernelFamily::kMatern32, 0.9, 1.0, 1e-8};
  CHECK(kernel_eval(mat, 0.0) == 1.0);
  const double u = std::sqrt(3.0) * 1.3 / 0.9;
  CHECK(kernel_eval(mat, 1.3) ==
        doctest::Approx((1.0 + u) * std::exp(-u)).epsilon(1e-14));

  KernelSpec scaled{KernelFamily::kRbf, 2.0, 2.5, 1e-8};
  CHECK(kernel_eval(scaled, 0.0) == 2.5);

  // Zero distance dominates every other distance, both families.
  for (const auto family : {KernelFamily::kRbf, KernelFamily::kMatern32}) {
    KernelSpec s{family, 1.7, 1.3, 1e-8};
    for (double delta = 0.01; delta < 20.0; delta *= 1.7) {
      CHECK(kernel_eval(s, 0.0) >= kernel_eval(s, delta));
    }
  }

  CHECK_THROWS_AS(kernel_eval(rbf, -1.0), ConfigError);
  KernelSpec bad = rbf;
  bad.lengthscale = 0.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = rbf;
  bad.jitter = -1.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = rbf;
  bad.amplitude = 0.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("covariance matrices are symmetric with jitter on the diagonal") {
  Rng rng(3);
  MatrixXd locs(6, 2);
  for (Eigen::Index i = 0; i < 6; ++i) {
    locs(i, 0) = rng.uniform(-2.0, 2.0);
    locs(i, 1) = rng.uniform(-2.0, 2.0);
  }
  KernelSpec spec{KernelFamily::kMatern32, 0.8, 1.4, 1e-6};
  const MatrixXd sigma = covariance_matrix(spec, locs);
  CHECK(sigma == sigma.transpose());
  for (Eigen::Index i = 0; i < 6; ++i) {
    CHECK(sigma(i, i) == 1.4 + 1e-6);
  }
  CHECK(sigma(0, 1) ==
        kernel_eval(spec, (locs.row(0) - locs.row(1)).norm()));
}

TEST_CASE("single-point gp draws follow the marginal distribution") {
  KernelSpec spec{KernelFamily::kRbf, 1.0, 1.7, 1e-8};
  MatrixXd loc(1, 1);
  loc(0, 0) = 0.3;
  Rng rng(99);
  const int n = 20000;
  double sum = 0.0, sum2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double v = sample_gp(spec, loc, rng)(0);
    sum += v;
    sum2 += v * v;
  }
  const double mean = sum / n;
  const double var = sum2 / n - mean * mean;
  CHECK(std::abs(mean) < 0.05);
  CHECK(var == doctest::Approx(1.7).epsilon(0.05));
}

TEST_CASE("empirical covariance of gp draws matches the kernel matrix") {
  KernelSpec spec{KernelFamily::kRbf, 1.5, 0.8, 1e-8};
  MatrixXd locs(5, 1);
  locs << 0.0, 0.5, 1.2, 2.0, 3.5;
  const MatrixXd sigma = covariance_matrix(spec, locs);
  Rng rng(1234);
  const int n = 20000;
  MatrixXd sum = MatrixXd::Zero(5, 1);
  MatrixXd outer = MatrixXd::Zero(5, 5);
  for (int i = 0; i < n; ++i) {
    const VectorXd v = sample_gp(spec, locs, rng);
    sum += v;
    outer += v * v.transpose();
  }
  const VectorXd mean = sum / n;
  const MatrixXd cov = outer / n - mean * mean.transpose();
  CHECK((cov - sigma).cwiseAbs().maxCoeff() < 0.05);
}

TEST_CASE("duplicated locations stay together as jitter vanishes") {
  KernelSpec spec{KernelFamily::kRbf, 1.0, 1.0, 1e-10};
  MatrixXd locs(3, 1);
  locs << 0.7, 0.7, -1.0;
  Rng rng(5);
  double cross = 0.0, v1sq = 0.0, v2sq = 0.0, max_gap = 0.0;
  for (int i = 0; i < 200; ++i) {
    const VectorXd v = sample_gp(spec, locs, rng);
    cross += v(0) * v(1);
    v1sq += v(0) * v(0);
    v2sq += v(1) * v(1);
    max_gap = std::max(max_gap, std::abs(v(0) - v(1)));
  }
  CHECK(cross / std::sqrt(v1sq * v2sq) > 0.999);
  // The gap between coincident coordinates is O(sqrt(jitter)).
  CHECK(max_gap < 1e-3);
}

TEST_CASE("coincident points with tiny jitter still factorize") {
  KernelSpec spec{KernelFamily::kRbf, 1.0, 1.0, 1e-18};
  MatrixXd locs(3, 1);
  locs << 0.5, 0.5, 0.5;
  Rng rng(8);
  const VectorXd v = sample_gp(spec, locs, rng);  // escalation path
  CHECK(v.allFinite());
}

TEST_CASE("gp draws are deterministic given the seed") {
  KernelSpec spec{KernelFamily::kMatern32, 0.6, 1.0, 1e-8};
  MatrixXd locs(4, 2);
  locs << 0, 0, 1, 0, 0, 1, 1, 1;
  Rng a(42), b(42);
  CHECK(sample_gp(spec, locs, a) == sample_gp(spec, locs, b));
}

TEST_CASE("gp draw preconditions are enforced") {
  KernelSpec spec;
  Rng rng(1);
  CHECK_THROWS_AS(sample_gp(spec, MatrixXd(0, 1), rng), ShapeError);
  MatrixXd nan_loc(1, 1);
  nan_loc(0, 0) = std::nan("");
  CHECK_THROWS_AS(sample_gp(spec, nan_loc, rng), NumericError);
}

TEST_CASE("cubic evaluation and forced coefficient draws") {
  CHECK(cubic_eval(1, 0, 0, 0, 2.0) == 8.0);
  CHECK(cubic_eval(1, 0, 0, 0, -1.0) == -1.0);
  CHECK(cubic_eval(0, 0, 1, 0, 0.37) == 0.37);

  // Pure cube: derivative 3s^2 touches zero without changing sign.
  CHECK(cubic_is_monotone(1, 0, 0, -4.0, 4.0));
  // Linear: always monotone.
  CHECK(cubic_is_monotone(0, 0, 1, -4.0, 4.0));
  CHECK(cubic_is_monotone(0, 0, -2, -4.0, 4.0));
  // 3s^2 - 3 changes sign at +-1 inside (-4, 4).
  CHECK_FALSE(cubic_is_monotone(1, 0, -3, -4.0, 4.0));
  // Same cubic on an interval missing both roots is monotone.
  CHECK(cubic_is_monotone(1, 0, -3, 2.0, 4.0));

  // Degenerate ranges force f(s) = s; the draw reproduces its locations.
  CubicConfig force;
  force.a = {0, 0};
  force.b = {0, 0};
  force.c = {1, 1};
  force.d = {0, 0};
  force.interval = {-4.0, 4.0};
  force.points = 5;
  Rng rng(7);
  const FunctionDraw draw = sample_cubic(rng, force);
  CHECK(draw.values == draw.locations.col(0));

  // A family that is never monotone exhausts the budget.
  CubicConfig never;
  never.a = {1, 1};
  never.b = {0, 0};
  never.c = {-3, -3};
  never.d = {0, 0};
  never.interval = {-4.0, 4.0};
  never.budget = 50;
  CHECK_THROWS_WITH_AS(sample_cubic(rng, never),
                       doctest::Contains("widen"), ConfigError);
}

TEST_CASE("analytic monotonicity agrees with a dense-grid oracle") {
  Rng rng(2718);
  int compared = 0;
  for (int t = 0; t < 500; ++t) {
    const double a = rng.uniform(-1.5, 1.5);
    const double b = rng.uniform(-1.5, 1.5);
    const double c = rng.uniform(-1.5, 1.5);
    const double lo = rng.uniform(-3.0, 0.0);
    const double hi = rng.uniform(0.1, 3.0);
    const GridVerdict v = grid_monotone(a, b, c, lo, hi);
    if (v == GridVerdict::kBorderline) continue;
    INFO("a=" << a << " b=" << b << " c=" << c << " on [" << lo << "," << hi
              << "]");
    CHECK(cubic_is_monotone(a, b, c, lo, hi) ==
          (v == GridVerdict::kMonotone));
    ++compared;
  }
  CHECK(compared > 400);
}

TEST_CASE("sampled cubics are monotone on their interval") {
  CubicConfig config;
  config.points = 30;
  Rng rng(11);
  for (int t = 0; t < 200; ++t) {
    FunctionDraw draw = sample_cubic(rng, config);
    std::vector<std::pair<double, double>> pts;
    for (Eigen::Index i = 0; i < draw.values.size(); ++i) {
      pts.emplace_back(draw.locations(i, 0), draw.values(i));
    }
    std::sort(pts.begin(), pts.end());
    bool nondecreasing = true, nonincreasing = true;
    for (std::size_t i = 1; i < pts.size(); ++i) {
      if (pts[i].second < pts[i - 1].second - 1e-12) nondecreasing = false;
      if (pts[i].second > pts[i - 1].second + 1e-12) nonincreasing = false;
    }
    CHECK((nondecreasing || nonincreasing));
  }
}

TEST_CASE("constant-intensity lgcp integrates exactly") {
  // Vanishing GP variance with mean ln 2 pins the intensity at 2.
  KernelSpec spec{KernelFamily::kRbf, 1.0, 1e-12, 1e-12};
  Rng rng(31);
  const LgcpDraw draw =
      sample_lgcp(spec, 10.0, 4096, 0, rng, std::log(2.0));
  CHECK(draw.horizon == 10.0);
  CHECK(draw.cumulative(0) == 0.0);
  for (Eigen::Index i = 0; i < draw.grid.size(); i += 512) {
    CHECK(draw.cumulative(i) ==
          doctest::Approx(2.0 * draw.grid(i)).epsilon(1e-6));
  }
  CHECK(draw.cumulative(draw.cumulative.size() - 1) ==
        doctest::Approx(20.0).epsilon(1e-6));
  CHECK(draw.intensity_at(3.3333) == doctest::Approx(2.0).epsilon(1e-5));
  CHECK(draw.integral_at(5.0) == doctest::Approx(10.0).epsilon(1e-5));
}

TEST_CASE("constant-rate event counts match the poisson mean") {
  KernelSpec spec{KernelFamily::kRbf, 1.0, 1e-12, 1e-12};
  Rng rng(77);
  GridCholeskyCache cache;
  long total = 0;
  const int n = 10000;
  for (int i = 0; i < n; ++i) {
    const LgcpDraw draw =
        sample_lgcp(spec, 10.0, 256, 0, rng, std::log(2.0), &cache);
    total += static_cast<long>(draw.events.size());
  }
  const double mean = static_cast<double>(total) / n;
  CHECK(mean > 19.5);
  CHECK(mean < 20.5);
}

TEST_CASE("lgcp draws satisfy their structural invariants") {
  KernelSpec spec{KernelFamily::kRbf, 2.0, 1.0, 1e-8};
  Rng rng(13);
  for (int t = 0; t < 5; ++t) {
    const LgcpDraw draw = sample_lgcp(spec, 8.0, 512, 0, rng);
    CHECK(draw.cumulative(0) == 0.0);
    for (Eigen::Index i = 1; i < draw.cumulative.size(); ++i) {
      CHECK(draw.cumulative(i) >= draw.cumulative(i - 1));
    }
    // Stored intensity is exactly the exponentiated latent.
    for (Eigen::Index i = 0; i < draw.gp.size(); ++i) {
      CHECK(draw.intensity(i) == std::exp(draw.gp(i)));
    }
    for (const double e : draw.events) {
      CHECK(e >= 0.0);
      CHECK(e <= draw.horizon);
    }
    CHECK(std::is_sorted(draw.events.begin(), draw.events.end()));
    // Interpolators agree with grid values at the nodes.
    CHECK(draw.intensity_at(draw.grid(100)) ==
          doctest::Approx(draw.intensity(100)).epsilon(1e-12));
    CHECK(draw.integral_at(draw.grid(100)) ==
          doctest::Approx(draw.cumulative(100)).epsilon(1e-12));
  }
}

TEST_CASE("lgcp retargeting steers the event count toward the target") {
  KernelSpec spec{KernelFamily::kRbf, 2.0, 1.0, 1e-8};
  Rng baseline_rng(555);
  const LgcpDraw untargeted = sample_lgcp(spec, 10.0, 512, 0, baseline_rng);
  Rng rng(555);
  const LgcpDraw draw = sample_lgcp(spec, 10.0, 512, 80, rng);
  const long miss =
      std::abs(static_cast<long>(draw.events.size()) - 80L);
  const long baseline_miss =
      std::abs(static_cast<long>(untargeted.events.size()) - 80L);
  INFO("count=" << draw.events.size()
                << " untargeted=" << untargeted.events.size());
  CHECK(miss <= baseline_miss);
  CHECK(draw.events.size() >= 50);
  CHECK(draw.events.size() <= 110);
  // The latent shape is preserved across the dilation.
  CHECK(draw.gp == untargeted.gp);
}

TEST_CASE("cached and direct lgcp sampling are bit-identical") {
  KernelSpec spec{KernelFamily::kRbf, 1.5, 1.0, 1e-8};
  Rng a(21), b(21);
  GridCholeskyCache cache;
  const LgcpDraw direct = sample_lgcp(spec, 6.0, 300, 0, a);
  const LgcpDraw cached = sample_lgcp(spec, 6.0, 300, 0, b, 0.0, &cache);
  CHECK(direct.gp == cached.gp);
  CHECK(direct.events == cached.events);
  CHECK(direct.cumulative == cached.cumulative);
}

TEST_CASE("lgcp rejects degenerate configuration") {
  KernelSpec spec;
  Rng rng(1);
  CHECK_THROWS_AS(sample_lgcp(spec, 0.0, 512, 0, rng), ConfigError);
  CHECK_THROWS_AS(sample_lgcp(spec, -3.0, 512, 0, rng), ConfigError);
  CHECK_THROWS_AS(sample_lgcp(spec, 10.0, 255, 0, rng), ConfigError);
  // Latent overflow surfaces as a numeric error.
  CHECK_THROWS_AS(sample_lgcp(spec, 10.0, 256, 0, rng, 1e4), NumericError);
}

TEST_CASE("gp corpus draws respect the configured ranges") {
  PriorConfig config;
  config.family = PriorFamily::kGp;
  config.draws = 200;
  config.points = 7;
  config.dim = 1;
  config.lengthscale = {1e-5, 2.0};
  Rng rng(1001);
  std::vector<double> lengthscales;
  const PriorDataset data = build_prior_dataset(config, rng, &lengthscales);
  CHECK(data.draws.size() == 200);
  CHECK(data.dim == 1);
  CHECK_FALSE(data.with_integral);
  REQUIRE(lengthscales.size() == 200);
  int below_millis = 0;
  for (const double l : lengthscales) {
    CHECK(l >= 1e-5);
    CHECK(l <= 2.0);
    if (l < 1e-3) ++below_millis;
  }
  // Log-uniform sampling visits the small decades, not just [0.1, 2].
  CHECK(below_millis > 20);
  for (std::size_t i = 0; i < data.draws.size(); ++i) {
    const FunctionDraw& d = data.draws[i];
    CHECK(d.id == static_cast<int>(i) + 1);
    CHECK(d.locations.rows() == 7);
    CHECK(d.locations.minCoeff() >= -1.0);
    CHECK(d.locations.maxCoeff() <= 1.0);
    CHECK(d.values.allFinite());
  }
}

TEST_CASE("two-dimensional corpora fill the configured box") {
  PriorConfig config;
  config.family = PriorFamily::kGp;
  config.draws = 20;
  config.points = 10;
  config.dim = 2;
  config.box = {Range{0.0, 2.0}, Range{-3.0, -1.0}};
  config.kernel = KernelFamily::kMatern32;
  config.lengthscale = {0.3, 1.5};
  Rng rng(55);
  const PriorDataset data = build_prior_dataset(config, rng);
  CHECK(data.dim == 2);
  for (const FunctionDraw& d : data.draws) {
    CHECK(d.locations.col(0).minCoeff() >= 0.0);
    CHECK(d.locations.col(0).maxCoeff() <= 2.0);
    CHECK(d.locations.col(1).minCoeff() >= -3.0);
    CHECK(d.locations.col(1).maxCoeff() <= -1.0);
  }
}

TEST_CASE("minimal corpus: one draw, one point") {
  PriorConfig config;
  config.draws = 1;
  config.points = 1;
  Rng rng(2);
  const PriorDataset data = build_prior_dataset(config, rng);
  CHECK(data.draws.size() == 1);
  CHECK(data.draws[0].locations.rows() == 1);
}

TEST_CASE("lgcp corpus carries intensity and integral channels") {
  PriorConfig config;
  config.family = PriorFamily::kLgcp;
  config.draws = 5;
  config.points = 30;  // target events
  config.lengthscale = {2.0, 2.0};
  config.lgcp.horizon = 10.0;
  config.lgcp.resolution = 512;
  Rng rng(321);
  const PriorDataset data = build_prior_dataset(config, rng);
  CHECK(data.with_integral);
  for (const FunctionDraw& d : data.draws) {
    REQUIRE(d.has_integral());
    CHECK(d.integral.size() == d.values.size());
    CHECK(d.values.minCoeff() > 0.0);  // intensities are positive
    // Events arrive in time order, so the integral channel is nondecreasing.
    for (Eigen::Index i = 1; i < d.integral.size(); ++i) {
      CHECK(d.integral(i) >= d.integral(i - 1));
    }
  }
}

TEST_CASE("cubic corpus uses the box as its interval") {
  PriorConfig config;
  config.family = PriorFamily::kCubic;
  config.draws = 10;
  config.points = 12;
  config.box = {Range{-2.0, 2.0}};
  Rng rng(44);
  const PriorDataset data = build_prior_dataset(config, rng);
  for (const FunctionDraw& d : data.draws) {
    CHECK(d.locations.col(0).minCoeff() >= -2.0);
    CHECK(d.locations.col(0).maxCoeff() <= 2.0);
  }
}

TEST_CASE("invalid corpus configuration fails before sampling") {
  Rng rng(1);
  PriorConfig config;
  config.draws = 0;
  config.points = 5;
  CHECK_THROWS_AS(build_prior_dataset(config, rng), ConfigError);
  config.draws = 5;
  config.points = 0;
  CHECK_THROWS_AS(build_prior_dataset(config, rng), ConfigError);
  config.points = 5;
  config.lengthscale = {2.0, 1.0};
  CHECK_THROWS_AS(build_prior_dataset(config, rng), ConfigError);
  config.lengthscale = {0.5, 1.0};
  config.box = {Range{1.0, -1.0}};
  CHECK_THROWS_AS(build_prior_dataset(config, rng), ConfigError);
  config.box.clear();
  config.family = PriorFamily::kLgcp;
  config.lgcp.resolution = 100;
  CHECK_THROWS_AS(build_prior_dataset(config, rng), ConfigError);
  config.lgcp.resolution = 512;
  config.dim = 2;
  CHECK_THROWS_AS(build_prior_dataset(config, rng), ConfigError);
}

TEST_CASE("corpus generation is deterministic given the seed") {
  PriorConfig config;
  config.draws = 10;
  config.points = 4;
  config.lengthscale = {0.1, 1.0};
  Rng a(8), b(8);
  const PriorDataset da = build_prior_dataset(config, a);
  const PriorDataset db = build_prior_dataset(config, b);
  for (std::size_t i = 0; i < da.draws.size(); ++i) {
    CHECK(da.draws[i].locations == db.draws[i].locations);
    CHECK(da.draws[i].values == db.draws[i].values);
  }
}

TEST_CASE("datasets round-trip through the jsonl format losslessly") {
  PriorConfig config;
  config.family = PriorFamily::kLgcp;
  config.draws = 4;
  config.points = 15;
  config.lengthscale = {2.0, 2.0};
  config.lgcp.resolution = 512;
  Rng rng(911);
  const PriorDataset original = build_prior_dataset(config, rng);
  const std::string path = temp_path("pivae_test_roundtrip.jsonl");
  write_dataset_jsonl(original, path);
  const PriorDataset loaded = read_dataset_jsonl(path);
  REQUIRE(loaded.draws.size() == original.draws.size());
  CHECK(loaded.dim == original.dim);
  CHECK(loaded.with_integral == original.with_integral);
  for (std::size_t i = 0; i < original.draws.size(); ++i) {
    CHECK(loaded.draws[i].id == original.draws[i].id);
    CHECK(loaded.draws[i].locations == original.draws[i].locations);
    CHECK(loaded.draws[i].values == original.draws[i].values);
    CHECK(loaded.draws[i].integral == original.draws[i].integral);
  }
  std::remove(path.c_str());

  // Value-only datasets round-trip without a channels member.
  PriorConfig gp_config;
  gp_config.draws = 3;
  gp_config.points = 6;
  gp_config.dim = 2;
  gp_config.lengthscale = {0.5, 1.0};
  Rng rng2(12);
  const PriorDataset gp_data = build_prior_dataset(gp_config, rng2);
  const std::string path2 = temp_path("pivae_test_roundtrip2.jsonl");
  write_dataset_jsonl(gp_data, path2);
  const PriorDataset gp_loaded = read_dataset_jsonl(path2);
  CHECK_FALSE(gp_loaded.with_integral);
  for (std::size_t i = 0; i < gp_data.draws.size(); ++i) {
    CHECK(gp_loaded.draws[i].locations == gp_data.draws[i].locations);
    CHECK(gp_loaded.draws[i].values == gp_data.draws[i].values);
  }
  std::remove(path2.c_str());
}

TEST_CASE("malformed dataset files are rejected with the offending line") {
  const std::string path = temp_path("pivae_test_bad.jsonl");
  auto write_lines = [&](const std::vector<std::string>& lines) {
    std::FILE* f = std::fopen(path.c_str(), "w");
    REQUIRE(f != nullptr);
    for (const auto& l : lines) std::fprintf(f, "%s\n", l.c_str());
    std::fclose(f);
  };

  write_lines({R"({"id":1,"locations":[[0.5]],"values":[1.0],"extra":2})"});
  CHECK_THROWS_WITH_AS(read_dataset_jsonl(path),
                       doctest::Contains("unknown key"), IoError);

  write_lines({R"({"id":1,"locations":[[0.5]],"values":[1.0,2.0]})"});
  CHECK_THROWS_WITH_AS(read_dataset_jsonl(path),
                       doctest::Contains(":1:"), IoError);

  write_lines({R"({"id":1,"locations":[[0.5]],"values":[1.0]})",
               R"({"id":2,"locations":[[0.5,0.6]],"values":[1.0]})"});
  CHECK_THROWS_WITH_AS(read_dataset_jsonl(path),
                       doctest::Contains("dimension"), IoError);

  write_lines({"not json"});
  CHECK_THROWS_AS(read_dataset_jsonl(path), IoError);

  write_lines({});
  CHECK_THROWS_WITH_AS(read_dataset_jsonl(path),
                       doctest::Contains("no records"), IoError);

  CHECK_THROWS_AS(read_dataset_jsonl("/nonexistent/nowhere.jsonl"), IoError);
  std::remove(path.c_str());
}
