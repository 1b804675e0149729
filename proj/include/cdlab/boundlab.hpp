#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

// Closed-form catastrophe-density and safe-measure bounds, evaluated in the
// log domain so extreme complexities neither overflow nor collapse to 0/1.
namespace cdlab::boundlab {

enum class AlphaMode {
  gamma_formula,  // ln 2 / Gamma(d + 1)
  log_pieces,     // ln m for m linear pieces
};

double alpha(int d, AlphaMode mode = AlphaMode::gamma_formula, int pieces = 2);

// c_1..c_d fitted by fit_density_constants against the exact grid density of
// random through-disk line arrangements (d = 2, delta = 0.01, R = 1,
// N in {10, 25, 50, 100, 150, 200}, 5 nets each, seed 0); regenerate with
// `cdlab reproduce --id relu_043`.
extern const std::vector<double> kFittedConstantsD2;

struct BoundConstants {
  double K = 1.0;
  AlphaMode alpha_mode = AlphaMode::gamma_formula;
  int pieces = 2;
  // c_1..c_d; empty means kFittedConstantsD2 (d = 2 only).
  std::vector<double> c;
};

enum class ComplexityKind { parameters, neurons };
const char* to_string(ComplexityKind kind);

struct BoundReport {
  std::string formula;
  std::vector<std::pair<std::string, double>> inputs;
  // Linear value; saturates at 0, 1 or +inf when it is not representable.
  double value = 0.0;
  // log10 of the value; finite whenever the value is nonzero.
  double log10_value = 0.0;
  // log10(1 - value) for densities (log10 of the complement); 0 otherwise.
  double log10_complement = 0.0;
  // True when the linear value lost all information (exponent beyond 700).
  bool overflow = false;
  ComplexityKind complexity_kind = ComplexityKind::parameters;
  // Extra named outputs (sandwich terms, fitted constants).
  std::vector<std::pair<std::string, double>> outputs;
  std::string notes;

  double input(const std::string& name) const;
  double output(const std::string& name) const;
};

// Exponent magnitude above which reports switch to log10 form.
inline constexpr double kLogSwitch = 700.0;

// 1 - exp(-sum_k C(N,k) c_k (delta/R)^(d-k+1)); binomials exact.
BoundReport relu_density_lower_bound(std::uint64_t N, int d, double delta, double R,
                                     const BoundConstants& constants = {});

// 1 - exp(-alpha C / delta^(d-1)), alpha = ln2 / d!.
BoundReport asymptotic_density_bound(double C, double delta, int d,
                                     ComplexityKind kind = ComplexityKind::parameters);

// K exp(-alpha C / delta^d).
BoundReport safe_measure_upper_bound(double C, double delta, int d, const BoundConstants& constants = {},
                                     ComplexityKind kind = ComplexityKind::parameters);

enum class C0Mode { exact_log, linear };

// Largest C keeping the asymptotic density at rho_max:
// exact_log: -ln(1 - rho_max) delta^(d-1) / alpha; linear: rho_max delta^(d-1) / alpha.
BoundReport max_safe_complexity(double rho_max, double delta, int d, C0Mode mode = C0Mode::linear);

// Outputs: c0, c_min_proxy (= I_xy_bits / bits_per_param), log10_ratio and
// sandwich_holds (1 when c_min_proxy > c0). value = C_actual / C0.
BoundReport sandwich_report(double C_actual, double rho_max, double delta, int d, double i_xy_bits,
                            double bits_per_param = 2.0, C0Mode mode = C0Mode::linear,
                            ComplexityKind kind = ComplexityKind::parameters);

enum class DepthModel {
  power,        // rho^L
  union_independent,  // 1 - (1 - rho)^L
};

double depth_amplification(double rho_single, int L, DepthModel model);

struct FitSample {
  std::uint64_t N = 0;
  double delta = 0.0;
  double R = 1.0;
  double rho = 0.0;  // measured density
};

struct ConstantFit {
  std::vector<double> c;  // c_1..c_d, all >= 0
  double residual = 0.0;  // sum of squared exponent residuals
};

// Non-negative least squares in the exponent domain: minimizes
// sum_i (-ln(1 - rho_i) - sum_k C(N_i,k) c_k (delta_i/R_i)^(d-k+1))^2 over c >= 0.
ConstantFit fit_density_constants(const std::vector<FitSample>& samples, int d);

}  // namespace cdlab::boundlab
