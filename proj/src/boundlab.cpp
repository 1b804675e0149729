#include "cdlab/boundlab.hpp"

#include <algorithm>
#include <boost/multiprecision/cpp_bin_float.hpp>
#include <boost/multiprecision/cpp_int.hpp>
#include <cmath>
#include <limits>
#include <numbers>

#include "cdlab/errors.hpp"

namespace cdlab::boundlab {

namespace mp = boost::multiprecision;

const std::vector<double> kFittedConstantsD2 = {100.93178997304115, 0.0};

namespace {

constexpr double kLn10 = std::numbers::ln10;
constexpr double kNegInf = -std::numeric_limits<double>::infinity();

void require(bool ok, const char* what) {
  if (!ok) throw PreconditionError(what);
}

// ln C(n, k), from the exact big-integer binomial; -inf when k > n.
double log_binomial(std::uint64_t n, int k) {
  if (static_cast<std::uint64_t>(k) > n) return kNegInf;
  mp::cpp_int b = 1;
  for (int i = 1; i <= k; ++i) {
    b *= n - static_cast<std::uint64_t>(i) + 1;
    b /= i;
  }
  return static_cast<double>(mp::log(mp::cpp_bin_float_50(b)));
}

double log_sum_exp(const std::vector<double>& logs) {
  double m = kNegInf;
  for (double v : logs) m = std::max(m, v);
  if (m == kNegInf) return kNegInf;
  double s = 0.0;
  for (double v : logs) s += std::exp(v - m);
  return m + std::log(s);
}

// Fills the density fields for rho = 1 - exp(-E) given ln E.
void set_density(BoundReport& r, double log_e) {
  if (log_e == kNegInf) {
    r.value = 0.0;
    r.log10_value = kNegInf;
    r.log10_complement = 0.0;
    return;
  }
  const double e = std::exp(log_e);
  r.value = -std::expm1(-e);
  r.log10_value = e < 1e-10 ? (log_e + std::log1p(-0.5 * e)) / kLn10 : std::log10(r.value);
  r.log10_complement = -e / kLn10;
  r.overflow = e > kLogSwitch;
  r.outputs.emplace_back("ln_exponent", log_e);
}

double factorial_log(int d) { return std::lgamma(static_cast<double>(d) + 1.0); }

}  // namespace

const char* to_string(ComplexityKind kind) {
  return kind == ComplexityKind::parameters ? "parameters" : "neurons";
}

double BoundReport::input(const std::string& name) const {
  for (const auto& [k, v] : inputs)
    if (k == name) return v;
  throw PreconditionError("report has no input " + name);
}

double BoundReport::output(const std::string& name) const {
  for (const auto& [k, v] : outputs)
    if (k == name) return v;
  throw PreconditionError("report has no output " + name);
}

double alpha(int d, AlphaMode mode, int pieces) {
  require(d >= 1, "alpha needs d >= 1");
  if (mode == AlphaMode::log_pieces) {
    require(pieces >= 2, "log_pieces alpha needs m >= 2");
    return std::log(static_cast<double>(pieces));
  }
  if (d <= 170) {
    double f = 1.0;
    for (int i = 2; i <= d; ++i) f *= i;
    return std::numbers::ln2 / f;
  }
  return std::exp(std::log(std::numbers::ln2) - factorial_log(d));
}

BoundReport relu_density_lower_bound(std::uint64_t N, int d, double delta, double R,
                                     const BoundConstants& constants) {
  require(d >= 1, "density bound needs d >= 1");
  require(R > 0.0 && std::isfinite(R), "radius must be positive");
  require(delta > 0.0 && delta <= R, "delta must lie in (0, R]");
  std::vector<double> c = constants.c;
  if (c.empty()) {
    require(d == 2, "fitted constants exist for d = 2 only; pass c explicitly");
    c = kFittedConstantsD2;
  }
  require(c.size() == static_cast<std::size_t>(d), "need one constant c_k per k = 1..d");
  for (double ck : c) require(ck >= 0.0 && std::isfinite(ck), "constants c_k must be finite and >= 0");

  BoundReport r;
  r.formula = "relu_density_lower_bound";
  r.complexity_kind = ComplexityKind::neurons;
  r.inputs = {{"N", static_cast<double>(N)}, {"d", static_cast<double>(d)}, {"delta", delta}, {"R", R}};
  for (int k = 1; k <= d; ++k) r.inputs.emplace_back("c" + std::to_string(k), c[k - 1]);

  const double log_ratio = std::log(delta / R);
  std::vector<double> logs;
  for (int k = 1; k <= d; ++k) {
    if (c[k - 1] == 0.0) continue;
    const double lb = log_binomial(N, k);
    if (lb == kNegInf) continue;
    logs.push_back(lb + std::log(c[k - 1]) + static_cast<double>(d - k + 1) * log_ratio);
  }
  set_density(r, log_sum_exp(logs));
  return r;
}

BoundReport asymptotic_density_bound(double C, double delta, int d, ComplexityKind kind) {
  require(C >= 0.0 && std::isfinite(C), "complexity must be finite and >= 0");
  require(delta > 0.0 && std::isfinite(delta), "delta must be positive");
  require(d >= 2, "asymptotic bound needs d >= 2");
  BoundReport r;
  r.formula = "asymptotic_density_bound";
  r.complexity_kind = kind;
  r.inputs = {{"C", C}, {"delta", delta}, {"d", static_cast<double>(d)}};
  const double a = alpha(d);
  r.outputs.emplace_back("alpha", a);
  const double log_e = C == 0.0 ? kNegInf : std::log(a) + std::log(C) - (d - 1) * std::log(delta);
  set_density(r, log_e);
  return r;
}

BoundReport safe_measure_upper_bound(double C, double delta, int d, const BoundConstants& constants,
                                     ComplexityKind kind) {
  require(C >= 0.0 && std::isfinite(C), "complexity must be finite and >= 0");
  require(delta > 0.0 && std::isfinite(delta), "delta must be positive");
  require(d >= 1, "safe measure bound needs d >= 1");
  require(constants.K > 0.0 && std::isfinite(constants.K), "K must be positive");
  BoundReport r;
  r.formula = "safe_measure_upper_bound";
  r.complexity_kind = kind;
  r.inputs = {{"C", C}, {"delta", delta}, {"d", static_cast<double>(d)}, {"K", constants.K}};
  const double a = alpha(d, constants.alpha_mode, constants.pieces);
  r.outputs.emplace_back("alpha", a);
  const double log_e = C == 0.0 ? kNegInf : std::log(a) + std::log(C) - d * std::log(delta);
  const double e = std::exp(log_e);
  r.value = constants.K * std::exp(-e);
  r.log10_value = std::log10(constants.K) - e / kLn10;
  r.overflow = e > kLogSwitch;
  return r;
}

BoundReport max_safe_complexity(double rho_max, double delta, int d, C0Mode mode) {
  require(rho_max > 0.0 && rho_max < 1.0, "rho_max must lie in (0, 1)");
  require(delta > 0.0 && std::isfinite(delta), "delta must be positive");
  require(d >= 1, "d must be >= 1");
  BoundReport r;
  r.formula = mode == C0Mode::exact_log ? "max_safe_complexity_exact_log" : "max_safe_complexity_linear";
  r.inputs = {{"rho_max", rho_max}, {"delta", delta}, {"d", static_cast<double>(d)}};
  const double a = alpha(d);
  const double target = mode == C0Mode::exact_log ? -std::log1p(-rho_max) : rho_max;
  r.log10_value = std::log10(target) + (d - 1) * std::log10(delta) - std::log10(a);
  r.value = std::pow(10.0, r.log10_value);
  if (r.log10_value > -300.0 && r.log10_value < 300.0) r.value = target * std::pow(delta, d - 1) / a;
  r.outputs.emplace_back("alpha", a);
  return r;
}

BoundReport sandwich_report(double C_actual, double rho_max, double delta, int d, double i_xy_bits,
                            double bits_per_param, C0Mode mode, ComplexityKind kind) {
  require(C_actual > 0.0 && std::isfinite(C_actual), "C must be positive");
  require(i_xy_bits >= 0.0 && std::isfinite(i_xy_bits), "I(X;Y) must be >= 0");
  require(bits_per_param > 0.0 && std::isfinite(bits_per_param), "bits_per_param must be positive");
  const BoundReport c0 = max_safe_complexity(rho_max, delta, d, mode);
  BoundReport r;
  r.formula = "sandwich";
  r.complexity_kind = kind;
  r.inputs = {{"C", C_actual},   {"rho_max", rho_max}, {"delta", delta},
              {"d", static_cast<double>(d)}, {"I_xy_bits", i_xy_bits}, {"bits_per_param", bits_per_param}};
  const double c_min = i_xy_bits / bits_per_param;
  r.log10_value = std::log10(C_actual) - c0.log10_value;
  r.value = std::pow(10.0, r.log10_value);
  r.overflow = !std::isfinite(r.value);
  r.outputs = {{"c0", c0.value},
               {"log10_c0", c0.log10_value},
               {"c_min_proxy", c_min},
               {"log10_ratio", r.log10_value},
               {"sandwich_holds", c_min > c0.value ? 1.0 : 0.0}};
  r.notes = c0.formula;
  return r;
}

double depth_amplification(double rho_single, int L, DepthModel model) {
  require(rho_single >= 0.0 && rho_single <= 1.0, "rho_single must lie in [0, 1]");
  require(L >= 1, "L must be >= 1");
  if (model == DepthModel::power) return std::pow(rho_single, L);
  return -std::expm1(L * std::log1p(-rho_single));
}

ConstantFit fit_density_constants(const std::vector<FitSample>& samples, int d) {
  require(d >= 1 && d <= 8, "constant fit supports 1 <= d <= 8");
  std::vector<std::vector<double>> phi;
  std::vector<double> y;
  for (const auto& s : samples) {
    require(s.R > 0.0 && s.delta > 0.0 && s.delta <= s.R, "fit sample needs delta in (0, R]");
    require(s.rho >= 0.0 && s.rho <= 1.0, "fit sample rho must lie in [0, 1]");
    if (s.rho >= 1.0) continue;
    std::vector<double> row(d);
    for (int k = 1; k <= d; ++k) {
      const double lb = log_binomial(s.N, k);
      row[k - 1] = lb == kNegInf ? 0.0 : std::exp(lb + (d - k + 1) * std::log(s.delta / s.R));
    }
    phi.push_back(std::move(row));
    y.push_back(-std::log1p(-s.rho));
  }
  require(!phi.empty(), "constant fit needs samples with rho < 1");

  const auto residual = [&](const std::vector<double>& c) {
    double s = 0.0;
    for (std::size_t i = 0; i < phi.size(); ++i) {
      double pred = 0.0;
      for (int k = 0; k < d; ++k) pred += phi[i][k] * c[k];
      s += (y[i] - pred) * (y[i] - pred);
    }
    return s;
  };

  ConstantFit best{std::vector<double>(d, 0.0), 0.0};
  best.residual = residual(best.c);
  // Exhaustive active-set search: the NNLS optimum is the unconstrained
  // least-squares solution on some support.
  for (unsigned mask = 1; mask < (1u << d); ++mask) {
    std::vector<int> idx;
    for (int k = 0; k < d; ++k)
      if (mask & (1u << k)) idx.push_back(k);
    const std::size_t m = idx.size();
    std::vector<std::vector<double>> a(m, std::vector<double>(m + 1, 0.0));
    for (std::size_t i = 0; i < phi.size(); ++i)
      for (std::size_t p = 0; p < m; ++p) {
        for (std::size_t q = 0; q < m; ++q) a[p][q] += phi[i][idx[p]] * phi[i][idx[q]];
        a[p][m] += phi[i][idx[p]] * y[i];
      }
    bool singular = false;
    for (std::size_t col = 0; col < m && !singular; ++col) {
      std::size_t piv = col;
      for (std::size_t r = col + 1; r < m; ++r)
        if (std::abs(a[r][col]) > std::abs(a[piv][col])) piv = r;
      if (std::abs(a[piv][col]) == 0.0) {
        singular = true;
        break;
      }
      std::swap(a[col], a[piv]);
      for (std::size_t r = 0; r < m; ++r) {
        if (r == col) continue;
        const double f = a[r][col] / a[col][col];
        for (std::size_t q = col; q <= m; ++q) a[r][q] -= f * a[col][q];
      }
    }
    if (singular) continue;
    std::vector<double> c(d, 0.0);
    bool feasible = true;
    for (std::size_t p = 0; p < m; ++p) {
      c[idx[p]] = a[p][m] / a[p][p];
      feasible = feasible && c[idx[p]] >= 0.0;
    }
    if (!feasible) continue;
    const double res = residual(c);
    if (res < best.residual) best = {c, res};
  }
  return best;
}

}  // namespace cdlab::boundlab
