#include <doctest.h>

#include <cmath>
#include <numbers>

#include "cdlab/boundlab.hpp"
#include "cdlab/errors.hpp"

using namespace cdlab;
using namespace cdlab::boundlab;

namespace {

// Exponent sum_k C(N,k) c_k (delta/R)^(d-k+1) in long double, for moderate N.
long double exponent(std::uint64_t N, int d, double delta, double R, const std::vector<double>& c) {
  long double e = 0;
  long double binom = 1;
  for (int k = 1; k <= d; ++k) {
    binom = binom * static_cast<long double>(N - k + 1) / k;
    e += binom * c[k - 1] * std::pow(static_cast<long double>(delta / R), d - k + 1);
  }
  return e;
}

const double kLn2 = std::numbers::ln2;

}  // namespace

TEST_CASE("alpha conventions") {
  CHECK(alpha(2) == doctest::Approx(0.346574).epsilon(1e-6));
  double factorial = 1;
  for (int d = 1; d <= 20; ++d) {
    factorial *= d;
    CHECK(std::abs(alpha(d) * factorial - kLn2) <= 1e-15);
  }
  CHECK(alpha(2, AlphaMode::log_pieces, 2) == doctest::Approx(kLn2));
  CHECK(alpha(5, AlphaMode::log_pieces, 3) == doctest::Approx(std::log(3.0)));
  CHECK_THROWS_AS(alpha(0), PreconditionError);
  CHECK_THROWS_AS(alpha(2, AlphaMode::log_pieces, 1), PreconditionError);
}

TEST_CASE("relu density bound matches direct evaluation") {
  const std::vector<double> c{0.7, 0.05, 0.3};
  for (std::uint64_t N : {1ull, 10ull, 100ull, 1000ull}) {
    for (double delta : {0.001, 0.01, 0.1}) {
      const BoundReport r = relu_density_lower_bound(N, 3, delta, 2.0, {1.0, AlphaMode::gamma_formula, 2, c});
      const long double e = exponent(N, 3, delta, 2.0, c);
      CHECK(r.value == doctest::Approx(static_cast<double>(-std::expm1(-e))).epsilon(1e-12));
      CHECK(r.log10_complement == doctest::Approx(static_cast<double>(-e / std::log(10.0L))).epsilon(1e-12));
      CHECK(r.overflow == (e > kLogSwitch));
    }
  }
  // k > N terms vanish.
  const BoundReport one = relu_density_lower_bound(1, 2, 0.1, 1.0, {1.0, AlphaMode::gamma_formula, 2, {1.0, 5.0}});
  CHECK(one.value == doctest::Approx(-std::expm1(-0.01)).epsilon(1e-14));
  // The default constants are the fitted d = 2 pair.
  const BoundReport fitted = relu_density_lower_bound(100, 2, 0.01, 1.0);
  CHECK(fitted.input("c1") == kFittedConstantsD2[0]);
  CHECK(fitted.input("c2") == kFittedConstantsD2[1]);
  CHECK_THROWS_AS(relu_density_lower_bound(10, 3, 0.01, 1.0), PreconditionError);
  CHECK_THROWS_AS(relu_density_lower_bound(10, 2, 2.0, 1.0), PreconditionError);
  CHECK_THROWS_AS(relu_density_lower_bound(10, 2, 0.1, 1.0, {1.0, AlphaMode::gamma_formula, 2, {-1.0, 0.0}}),
                  PreconditionError);
}

TEST_CASE("huge complexities stay in the log domain") {
  // C(10^12, 2) c_2 delta: exponent ~ 5e23 * 0.5 * 1e-2.
  const BoundReport r = relu_density_lower_bound(1000000000000ull, 2, 0.01, 1.0,
                                                 {1.0, AlphaMode::gamma_formula, 2, {0.0, 0.5}});
  const double binom = 1e12 * (1e12 - 1) / 2;
  CHECK(r.overflow);
  CHECK(r.value == 1.0);
  CHECK(r.log10_complement == doctest::Approx(-binom * 0.5 * 0.01 / std::log(10.0)).epsilon(1e-12));

  const BoundReport a = asymptotic_density_bound(1e12, 1e-3, 2);
  CHECK(a.overflow);
  CHECK(a.log10_complement <= -1e6);
  CHECK(a.log10_complement == doctest::Approx(-alpha(2) * 1e15 / std::log(10.0)).epsilon(1e-12));
  CHECK(asymptotic_density_bound(0.0, 0.1, 2).value == 0.0);
  CHECK_THROWS_AS(asymptotic_density_bound(10, 0.1, 1), PreconditionError);

  const BoundReport tiny = asymptotic_density_bound(1e-6, 1.0, 2);
  CHECK(tiny.value == doctest::Approx(alpha(2) * 1e-6).epsilon(1e-6));
  CHECK(tiny.log10_value == doctest::Approx(std::log10(-std::expm1(-alpha(2) * 1e-6))).epsilon(1e-12));
}

TEST_CASE("safe measure upper bound") {
  const BoundReport s = safe_measure_upper_bound(100, 0.5, 2, {2.0});
  CHECK(s.value == doctest::Approx(2.0 * std::exp(-alpha(2) * 100 / 0.25)));
  const BoundReport big = safe_measure_upper_bound(1e12, 1e-3, 2, {3.0});
  CHECK(big.value == 0.0);
  CHECK(big.overflow);
  CHECK(big.log10_value == doctest::Approx(std::log10(3.0) - alpha(2) * 1e18 / std::log(10.0)).epsilon(1e-12));
  const BoundReport neurons = safe_measure_upper_bound(10, 0.5, 2, {}, ComplexityKind::neurons);
  CHECK(neurons.complexity_kind == ComplexityKind::neurons);
}

TEST_CASE("maximum safe complexity and the sandwich") {
  const BoundReport lin = max_safe_complexity(0.01, 1e-3, 2, C0Mode::linear);
  CHECK(lin.value == doctest::Approx(0.01 * 1e-3 / (kLn2 / 2)).epsilon(1e-12));
  CHECK(lin.value == doctest::Approx(2.885e-5).epsilon(1e-3));
  const BoundReport ex = max_safe_complexity(0.01, 1e-3, 2, C0Mode::exact_log);
  CHECK(ex.value == doctest::Approx(-std::log1p(-0.01) * 1e-3 / (kLn2 / 2)).epsilon(1e-12));
  // At the exact C0 the asymptotic density equals rho_max.
  CHECK(asymptotic_density_bound(ex.value, 1e-3, 2).value == doctest::Approx(0.01).epsilon(1e-12));

  const BoundReport s12 = sandwich_report(1e12, 0.01, 1e-3, 2, 1e9);
  CHECK(s12.output("log10_ratio") == doctest::Approx(12 - std::log10(lin.value)).epsilon(1e-12));
  CHECK(s12.output("c_min_proxy") == 5e8);
  CHECK(s12.output("sandwich_holds") == 1.0);
  const BoundReport s8 = sandwich_report(1e8, 0.01, 1e-3, 2, 0.0);
  CHECK(s8.output("log10_ratio") == doctest::Approx(8 - std::log10(lin.value)).epsilon(1e-12));
  CHECK(s8.output("sandwich_holds") == 0.0);
  CHECK_THROWS_AS(max_safe_complexity(1.0, 1e-3, 2), PreconditionError);
  CHECK_THROWS_AS(sandwich_report(1e8, 0.01, 1e-3, 2, 1.0, 0.0), PreconditionError);
}

TEST_CASE("depth amplification models") {
  CHECK(depth_amplification(0.5, 3, DepthModel::power) == doctest::Approx(0.125));
  CHECK(depth_amplification(0.5, 3, DepthModel::union_independent) == doctest::Approx(0.875));
  CHECK(depth_amplification(0.2, 1, DepthModel::power) == depth_amplification(0.2, 1, DepthModel::union_independent));
  CHECK_THROWS_AS(depth_amplification(1.5, 2, DepthModel::power), PreconditionError);
  CHECK_THROWS_AS(depth_amplification(0.5, 0, DepthModel::power), PreconditionError);
}

TEST_CASE("constant fit recovers generating constants") {
  const std::vector<double> truth{2.0, 0.3};
  std::vector<FitSample> samples;
  for (std::uint64_t N : {5ull, 10ull, 20ull, 40ull})
    for (double delta : {0.01, 0.05}) {
      const double e = static_cast<double>(exponent(N, 2, delta, 1.0, truth));
      samples.push_back({N, delta, 1.0, -std::expm1(-e)});
    }
  const ConstantFit fit = fit_density_constants(samples, 2);
  CHECK(fit.c[0] == doctest::Approx(2.0).epsilon(1e-8));
  CHECK(fit.c[1] == doctest::Approx(0.3).epsilon(1e-8));
  CHECK(fit.residual < 1e-16);

  // A negative unconstrained optimum is clamped to zero.
  std::vector<FitSample> linear;
  for (std::uint64_t N : {10ull, 50ull, 100ull}) {
    const double e = 1.5 * N * 0.01 - 1e-4 * N * (N - 1) / 2.0 * 0.01;
    linear.push_back({N, 0.01, 1.0, -std::expm1(-e)});
  }
  const ConstantFit clamped = fit_density_constants(linear, 2);
  CHECK(clamped.c[1] == 0.0);
  CHECK(clamped.c[0] > 0.0);
  CHECK_THROWS_AS(fit_density_constants({}, 2), PreconditionError);
  CHECK_THROWS_AS(fit_density_constants(samples, 9), PreconditionError);
}
