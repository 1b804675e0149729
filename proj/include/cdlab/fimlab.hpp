#pragma once

#include <cstddef>
#include <string>

#include "cdlab/learnlab.hpp"
#include "cdlab/linalg.hpp"
#include "cdlab/netcore.hpp"

// Empirical Fisher information, dense symmetric eigensolvers and the
// spectrum / natural-gradient pathology metrics.
namespace cdlab::fimlab {

// Dense regime limit on the parameter count.
inline constexpr std::size_t kMaxDenseParameters = 2000;
// condition_ratio divides by max(lambda_min, kConditionFloor * lambda_max).
inline constexpr double kConditionFloor = 1e-15;
// natural_gradient_norm damps with at least kDampingFloor * trace(F).
inline constexpr double kDampingFloor = 1e-12;

// F = (1/n) sum_i g_i g_i^T with g_i the per-sample loss gradient. Samples are
// accumulated in lexicographic order of their gradient vectors, so F does not
// depend on the dataset order, and every entry is summed by a single worker.
Matrix empirical_fisher(const Network& net, const learnlab::Dataset& data, Loss loss, unsigned workers = 0);

// Same accumulation from precomputed per-sample gradients (rows of g).
Matrix fisher_from_gradients(const Matrix& g, unsigned workers = 0);

enum class EigenMethod {
  automatic,      // jacobi up to kJacobiLimit, tridiagonal_ql above
  jacobi,         // cyclic Jacobi rotations
  tridiagonal_ql  // Householder reduction + implicit QL
};
inline constexpr std::size_t kJacobiLimit = 400;

struct SymmetricEigen {
  Vector values;   // descending
  Matrix vectors;  // column j belongs to values[j]
  std::size_t sweeps = 0;
  EigenMethod method = EigenMethod::jacobi;
};

// Jacobi stops once the off-diagonal Frobenius norm is <= 1e-12 |A|_F.
SymmetricEigen jacobi_eigen(const Matrix& a, std::size_t max_sweeps = 100);
SymmetricEigen tridiagonal_ql_eigen(const Matrix& a);
SymmetricEigen symmetric_eigen(const Matrix& a, EigenMethod method = EigenMethod::automatic);

// |Q diag(values) Q^T - A|_F / |A|_F (0 when A = 0).
double reconstruction_error(const Matrix& a, const SymmetricEigen& eig);

struct FisherSpectrum {
  Vector eigenvalues;  // descending
  double trace = 0.0;
  double lambda_max = 0.0;
  double lambda_min = 0.0;         // smallest computed eigenvalue
  double lambda_min_damped = 0.0;  // max(lambda_min, floor * lambda_max)
  double condition_ratio = 1.0;
  double tau = 1e-6;
  double tau_floor = kConditionFloor;
  double near_zero_fraction = 0.0;  // share of eigenvalues < tau * lambda_max
  double reconstruction_error = 0.0;
  // lambda_max == 0 or at least half of the spectrum is near zero.
  bool degenerate = false;
  EigenMethod method = EigenMethod::jacobi;
};

// Rejects matrices whose asymmetry exceeds 1e-10 of the largest entry.
FisherSpectrum eigenspectrum(const Matrix& f, double tau = 1e-6, EigenMethod method = EigenMethod::automatic);

struct NatGradReport {
  double grad_norm = 0.0;
  double natgrad_norm = 0.0;
  double explosion_index = 0.0;  // natgrad_norm / grad_norm, 0 for a zero gradient
  double lambda = 0.0;           // damping actually applied
  double requested_lambda = 0.0;
  std::size_t iterations = 0;
  double relative_residual = 0.0;
};

// Solves (F + lambda I) v = g by conjugate gradients to relative residual
// 1e-10; throws NumericError if 10 C iterations do not suffice.
NatGradReport natural_gradient_norm(const Matrix& f, std::span<const double> g, double lambda);

struct PathologyReport {
  FisherSpectrum spectrum;
  NatGradReport natgrad;
};

// Spectrum of the empirical Fisher and the natural gradient of the mean loss.
PathologyReport pathology_report(const Network& net, const learnlab::Dataset& data, Loss loss, double lambda,
                                 double tau = 1e-6, unsigned workers = 0);

const char* to_string(EigenMethod method);

}  // namespace cdlab::fimlab
