#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cdlab/catlab.hpp"
#include "cdlab/errors.hpp"
#include "oracles.hpp"

using namespace cdlab;
using namespace cdlab::catlab;

namespace {

Network center_line_net() {
  return Network(2, {Layer{Matrix::from_rows({{0, 1}}), {0}, Activation::relu()},
                     Layer{Matrix::from_rows({{1}}), {0}, Activation::linear()}});
}

// f(x) = w.x, so the largest L2 output change within delta is |w| delta.
Network linear_net(const Vector& w) {
  return Network(w.size(), {Layer{Matrix::from_rows({w}), {0.3}, Activation::linear()}});
}

}  // namespace

TEST_CASE("normal quantile and Wilson interval") {
  CHECK(normal_quantile(0.975) == doctest::Approx(1.959963984540054).epsilon(1e-14));
  CHECK(normal_quantile(0.995) == doctest::Approx(2.5758293035489004).epsilon(1e-14));
  CHECK(normal_quantile(0.5) == doctest::Approx(0.0));
  CHECK_THROWS_AS(normal_quantile(1.0), PreconditionError);

  // Closed form with z = 1.96 (95%).
  const double z = 1.959963984540054;
  const double n = 100, p = 0.3;
  const double centre = (p + z * z / (2 * n)) / (1 + z * z / n);
  const double half = z / (1 + z * z / n) * std::sqrt(p * (1 - p) / n + z * z / (4 * n * n));
  const Interval w = wilson_interval(30, 100, 0.95);
  CHECK(w.low == doctest::Approx(centre - half).epsilon(1e-12));
  CHECK(w.high == doctest::Approx(centre + half).epsilon(1e-12));
  CHECK(wilson_interval(0, 50, 0.99).low == 0.0);
  CHECK(wilson_interval(50, 50, 0.99).high == 1.0);
  CHECK(wilson_interval(0, 50, 0.99).high > 0.0);
  CHECK_THROWS_AS(wilson_interval(3, 0, 0.99), PreconditionError);
  CHECK_THROWS_AS(wilson_interval(5, 4, 0.99), PreconditionError);
}

TEST_CASE("sample set depends only on seed and count") {
  const Domain disk = Domain::ball(2, 1.0);
  const auto a = sample_points(disk, 10000, 9);
  const auto b = sample_points(disk, 5000, 9);
  REQUIRE(a.size() == 10000);
  for (std::size_t i = 0; i < b.size(); ++i) CHECK(a[i] == b[i]);
  CHECK(sample_points(disk, 100, 10)[0] != a[0]);
  for (const auto& x : a) CHECK(disk.contains(x));
}

TEST_CASE("kink density of the center line") {
  const Network net = center_line_net();
  const Domain disk = Domain::ball(2, 1.0);
  const double truth = oracle::strip_fraction(0.01, 1.0, 0.0);
  const DensityEstimate e = estimate_kink_density(net, disk, 0.01, {200000, 1, 0.99, 1});
  CHECK(e.ci_low <= truth);
  CHECK(truth <= e.ci_high);
  CHECK_FALSE(e.is_lower_bound);
  CHECK(e.n_samples == 200000);
  // Hits are exactly the sampled points within delta of the line.
  std::size_t hits = 0;
  for (const auto& x : sample_points(disk, 200000, 1)) hits += std::abs(x[1]) <= 0.01;
  CHECK(e.hits == hits);
  for (unsigned w : {2u, 5u}) CHECK(estimate_kink_density(net, disk, 0.01, {200000, 1, 0.99, w}).hits == hits);

  const DensityEstimate safe = estimate_safe_measure(net, disk, CatastropheCriterion::kink(), 0.01, {200000, 1, 0.99, 1});
  CHECK(safe.rho == doctest::Approx(1.0 - e.rho));
  CHECK(safe.ci_low == doctest::Approx(1.0 - e.ci_high));
  CHECK(safe.hits == e.n_samples - e.hits);
  CHECK_THROWS_AS(estimate_safe_measure(net, disk, CatastropheCriterion::class_flip(), 0.01, {}), PreconditionError);
}

TEST_CASE("kink criterion is the distance test") {
  const Network net = center_line_net();
  CHECK(is_kink_catastrophic(net, Vector{0.3, 0.01}, 0.01));
  CHECK_FALSE(is_kink_catastrophic(net, Vector{0.3, 0.0101}, 0.01));
  const Network smooth = random_network(mlp_shape(2, {3}, 1, Activation::tanh()), 1.0, 1);
  CHECK_THROWS_AS(estimate_kink_density(smooth, Domain::ball(2, 1.0), 0.01, {}), PreconditionError);
}

TEST_CASE("deep kink density is a flagged lower bound") {
  const Network deep = random_network(mlp_shape(2, {8, 8}, 1, Activation::relu()), 1.0, 2);
  const DensityEstimate e = estimate_kink_density(deep, Domain::ball(2, 1.0), 0.05, {2000, 3, 0.99, 1});
  CHECK(e.is_lower_bound);
  CHECK(estimate_kink_density(deep, Domain::ball(2, 1.0), 0.05, {2000, 3, 0.99, 4}).hits == e.hits);
}

TEST_CASE("output-jump search on linear maps is exact") {
  Rng r(31);
  for (int t = 0; t < 50; ++t) {
    const Vector w{r.normal(), r.normal(), r.normal()};
    const Network net = linear_net(w);
    const Vector x{r.normal(), r.normal(), r.normal()};
    const double reach = norm2(w) * 0.1;
    const auto hit = find_output_jump(net, x, reach * (1 - 1e-9), 0.1, OutputNorm::l2, {}, 1);
    CHECK(hit.found);
    CHECK(norm2(Vector{hit.x_prime[0] - x[0], hit.x_prime[1] - x[1], hit.x_prime[2] - x[2]}) <= 0.1 + 1e-12);
    CHECK_FALSE(find_output_jump(net, x, reach * (1 + 1e-6), 0.1, OutputNorm::l2, {}, 1).found);
  }
}

TEST_CASE("output-jump detection is monotone in epsilon") {
  const Network net = random_network(mlp_shape(2, {16, 16}, 2, Activation::relu()), 1.0, 4);
  Rng r(32);
  for (int t = 0; t < 30; ++t) {
    const Vector x{r.uniform(-1, 1), r.uniform(-1, 1)};
    bool previous = true;
    for (double eps : {0.001, 0.01, 0.05, 0.1, 0.2, 0.5, 1.0}) {
      const bool found = find_output_jump(net, x, eps, 0.05, OutputNorm::l2, {}, 7).found;
      CHECK((previous || !found));
      previous = found;
    }
  }
}

TEST_CASE("steep relu fixture has the closed-form catastrophic set") {
  // f(x) = relu(1000 x) on [-1, 1], delta = 0.01, epsilon = 1: catastrophic iff x >= -0.009.
  const Network net(1, {Layer{Matrix::from_rows({{1000}}), {0}, Activation::relu()},
                        Layer{Matrix::from_rows({{1}}), {0}, Activation::linear()}});
  const Domain line = Domain::ball(1, 1.0);
  const DensityEstimate e = estimate_output_instability(net, line, 1.0, 0.01, OutputNorm::l2, {}, {20000, 2, 0.99, 1});
  CHECK(e.ci_low <= 0.5045);
  CHECK(0.5045 <= e.ci_high);
  CHECK(e.is_lower_bound);
  std::size_t expected = 0;
  for (const auto& x : sample_points(line, 20000, 2)) expected += x[0] >= -0.009 + 1e-12;
  CHECK(std::llabs(static_cast<long long>(e.hits) - static_cast<long long>(expected)) <= 2);
}

TEST_CASE("logit-gap change measures the margin loss of the predicted class") {
  // Two logits f = (x, -x): margin of class 0 at x is 2x, gradient of the gap is 2.
  const Network net(1, {Layer{Matrix::from_rows({{1}, {-1}}), {0, 0}, Activation::linear()}});
  const auto w = find_output_jump(net, Vector{0.5}, 0.199, 0.1, OutputNorm::logit_gap, {}, 0);
  CHECK(w.found);
  CHECK(w.change == doctest::Approx(0.2).epsilon(1e-9));
  CHECK_FALSE(find_output_jump(net, Vector{0.5}, 0.2001, 0.1, OutputNorm::logit_gap, {}, 0).found);
  const Network one(1, {Layer{Matrix::from_rows({{1}}), {0}, Activation::linear()}});
  CHECK_THROWS_AS(find_output_jump(one, Vector{0.5}, 0.1, 0.1, OutputNorm::logit_gap, {}, 0), PreconditionError);
}

TEST_CASE("Mann-Kendall variance equals the permutation variance of S") {
  const std::vector<double> x{1, 1, 2, 3, 3, 3, 4};
  std::vector<double> y{0, 1, 0, 1, 1, 0, 1};
  const MannKendall mk = mann_kendall(x, y);
  std::sort(y.begin(), y.end());
  double sum = 0, sum2 = 0, count = 0;
  do {
    double s = 0;
    for (std::size_t i = 0; i < x.size(); ++i)
      for (std::size_t j = i + 1; j < x.size(); ++j) {
        const double dx = (x[j] > x[i]) - (x[j] < x[i]);
        const double dy = (y[j] > y[i]) - (y[j] < y[i]);
        s += dx * dy;
      }
    sum += s;
    sum2 += s * s;
    ++count;
  } while (std::next_permutation(y.begin(), y.end()));
  CHECK(sum / count == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(mk.variance == doctest::Approx(sum2 / count).epsilon(1e-12));
}

TEST_CASE("Mann-Kendall on a strict trend") {
  std::vector<double> x(10), y(10);
  std::iota(x.begin(), x.end(), 0.0);
  std::iota(y.begin(), y.end(), 5.0);
  const MannKendall mk = mann_kendall(x, y);
  CHECK(mk.s == 45);
  CHECK(mk.variance == doctest::Approx(125.0));
  CHECK(mk.z == doctest::Approx(44 / std::sqrt(125.0)));
  CHECK(mk.p_value == doctest::Approx(std::erfc(44 / std::sqrt(125.0) / std::sqrt(2.0))));
  std::reverse(y.begin(), y.end());
  CHECK(mann_kendall(x, y).s == -45);
  const std::vector<double> flat(10, 1.0);
  CHECK(mann_kendall(x, flat).p_value == 1.0);
  CHECK_THROWS_AS(mann_kendall(x, std::vector<double>(3)), PreconditionError);
}

TEST_CASE("genericity sweep is deterministic and validates its options") {
  SweepOptions o;
  o.widths = {0, 20, 400};
  o.trials = 30;
  o.samples_per_estimate = 2000;
  o.workers = 1;
  const Domain disk = Domain::ball(2, 1.0);
  const SweepResult a = genericity_sweep(disk, o);
  o.workers = 4;
  const SweepResult b = genericity_sweep(disk, o);
  REQUIRE(a.rows.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) CHECK(a.rows[i].rhos == b.rows[i].rhos);
  CHECK(a.trend.s == b.trend.s);
  // A linear net has no kinks.
  CHECK(a.rows[0].mean_rho == 0.0);
  CHECK(a.rows[0].above == 0);
  CHECK(a.rows[2].mean_rho > a.rows[1].mean_rho);
  o.trials = 29;
  CHECK_THROWS_AS(genericity_sweep(disk, o), PreconditionError);
  o.trials = 30;
  o.widths = {5, 5};
  CHECK_THROWS_AS(genericity_sweep(disk, o), PreconditionError);
}
