#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "cdlab/errors.hpp"
#include "cdlab/fimlab.hpp"
#include "cdlab/learnlab.hpp"
#include "oracles.hpp"

using namespace cdlab;
using namespace cdlab::fimlab;

namespace {

Matrix random_symmetric(std::size_t n, Rng& r, double spread = 1.0) {
  Matrix a(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j <= i; ++j) a(i, j) = a(j, i) = spread * r.normal();
  return a;
}

// Low-rank PSD matrix G^T G / m with graded column scales.
Matrix graded_psd(std::size_t n, std::size_t rank, Rng& r) {
  Matrix g(rank, n);
  for (std::size_t i = 0; i < rank; ++i)
    for (std::size_t j = 0; j < n; ++j) g(i, j) = r.normal() * std::pow(10.0, -6.0 * j / n);
  return fisher_from_gradients(g, 1);
}

void check_against_eigen(const Matrix& a, EigenMethod method) {
  const SymmetricEigen e = symmetric_eigen(a, method);
  const Vector ref = oracle::eigenvalues(a);
  const double scale = std::max(std::abs(ref.front()), std::abs(ref.back()));
  REQUIRE(e.values.size() == ref.size());
  for (std::size_t i = 0; i < ref.size(); ++i) CHECK(std::abs(e.values[i] - ref[i]) <= 1e-12 * scale);
  CHECK(std::is_sorted(e.values.rbegin(), e.values.rend()));
  CHECK(reconstruction_error(a, e) <= 1e-12);
  const Matrix qtq = matmul(e.vectors.transposed(), e.vectors);
  double off = 0.0;
  for (std::size_t i = 0; i < qtq.rows(); ++i)
    for (std::size_t j = 0; j < qtq.cols(); ++j) off = std::max(off, std::abs(qtq(i, j) - (i == j ? 1.0 : 0.0)));
  CHECK(off <= 1e-12);
}

}  // namespace

TEST_CASE("eigensolvers agree with the Eigen oracle") {
  Rng r(41);
  for (std::size_t n : {1u, 2u, 5u, 17u, 60u}) {
    const Matrix a = random_symmetric(n, r);
    check_against_eigen(a, EigenMethod::jacobi);
    check_against_eigen(a, EigenMethod::tridiagonal_ql);
  }
  const Matrix big = random_symmetric(450, r);
  CHECK(symmetric_eigen(big).method == EigenMethod::tridiagonal_ql);
  check_against_eigen(big, EigenMethod::automatic);
  CHECK(symmetric_eigen(random_symmetric(20, r)).method == EigenMethod::jacobi);
}

TEST_CASE("eigensolvers on structured spectra") {
  Rng r(42);
  const Matrix psd = graded_psd(40, 15, r);
  check_against_eigen(psd, EigenMethod::jacobi);
  check_against_eigen(psd, EigenMethod::tridiagonal_ql);
  // Repeated eigenvalues.
  Matrix rep = Matrix::identity(6);
  rep(0, 0) = 3;
  check_against_eigen(rep, EigenMethod::jacobi);
  check_against_eigen(rep, EigenMethod::tridiagonal_ql);
  // Zero matrix.
  const SymmetricEigen z = symmetric_eigen(Matrix(4, 4), EigenMethod::jacobi);
  for (double v : z.values) CHECK(v == 0.0);
  CHECK(reconstruction_error(Matrix(4, 4), z) == 0.0);
  CHECK_THROWS_AS(symmetric_eigen(Matrix(2, 3)), PreconditionError);
}

TEST_CASE("Fisher from gradients is the averaged outer product and order-free") {
  Rng r(43);
  Matrix g(30, 7);
  for (double& v : g.data()) v = r.normal();
  const Matrix f = fisher_from_gradients(g, 1);
  for (std::size_t i = 0; i < 7; ++i)
    for (std::size_t j = 0; j < 7; ++j) {
      double s = 0;
      for (std::size_t k = 0; k < 30; ++k) s += g(k, i) * g(k, j);
      CHECK(f(i, j) == doctest::Approx(s / 30).epsilon(1e-13));
    }
  CHECK(max_asymmetry(f) == 0.0);
  // Reversed row order and more workers give the identical matrix.
  Matrix rev(30, 7);
  for (std::size_t k = 0; k < 30; ++k)
    for (std::size_t i = 0; i < 7; ++i) rev(k, i) = g(29 - k, i);
  CHECK(fisher_from_gradients(rev, 3) == f);
}

TEST_CASE("empirical Fisher is PSD and independent of data order and workers") {
  learnlab::DatasetSpec spec;
  spec.n = 200;
  const learnlab::Dataset data = learnlab::make_dataset(spec, 3);
  const Network net = random_network(mlp_shape(2, {6}, 2, Activation::tanh()), 1.0, 5);
  for (Loss loss : {Loss::mse, Loss::softmax_xent}) {
    const Matrix f = empirical_fisher(net, data, loss, 1);
    CHECK(f.rows() == net.parameter_count());
    learnlab::Dataset shuffled = data;
    for (std::size_t i = 0; i < data.size(); ++i) {
      const std::size_t j = data.size() - 1 - i;
      for (std::size_t k = 0; k < data.dim(); ++k) shuffled.inputs(i, k) = data.inputs(j, k);
      shuffled.labels[i] = data.labels[j];
    }
    CHECK(empirical_fisher(net, shuffled, loss, 4) == f);
    const FisherSpectrum s = eigenspectrum(f);
    CHECK(s.lambda_min >= -1e-8 * s.lambda_max);
    CHECK(s.reconstruction_error <= 1e-8);
    double trace = 0;
    for (std::size_t i = 0; i < f.rows(); ++i) trace += f(i, i);
    CHECK(s.trace == doctest::Approx(trace));
  }
  const Network wide = random_network(mlp_shape(2, {50, 40}, 2, Activation::tanh()), 1.0, 5);
  CHECK_THROWS_AS(empirical_fisher(wide, data, Loss::mse), PreconditionError);
}

TEST_CASE("spectrum metrics on a diagonal fixture") {
  const FisherSpectrum s = eigenspectrum(Matrix::diagonal(Vector{1.0, 1e-8}), 1e-6);
  CHECK(s.lambda_max == 1.0);
  CHECK(s.lambda_min == 1e-8);
  CHECK(s.condition_ratio == doctest::Approx(1e8));
  CHECK(s.near_zero_fraction == 0.5);
  CHECK(s.degenerate);
  const FisherSpectrum singular = eigenspectrum(Matrix::diagonal(Vector{2.0, 0.0, 1.0}));
  CHECK(singular.lambda_min_damped == doctest::Approx(2e-15));
  CHECK(singular.condition_ratio == doctest::Approx(1e15));
  CHECK(eigenspectrum(Matrix(3, 3)).degenerate);
  Matrix asym = Matrix::identity(2);
  asym(0, 1) = 1e-3;
  CHECK_THROWS_AS(eigenspectrum(asym), PreconditionError);
}

TEST_CASE("natural gradient matches the closed-form damped inverse") {
  const Matrix f = Matrix::diagonal(Vector{1.0, 1e-8});
  const Vector g{1.0, 1.0};
  double previous = INFINITY;
  for (double lambda : {1e-12, 1e-10, 1e-8, 1e-6, 1e-4, 1e-2}) {
    const NatGradReport r = natural_gradient_norm(f, g, lambda);
    const double lam = std::max(lambda, kDampingFloor * (1.0 + 1e-8));
    const double expected = std::hypot(1.0 / (1.0 + lam), 1.0 / (1e-8 + lam)) / std::sqrt(2.0);
    CHECK(r.explosion_index == doctest::Approx(expected).epsilon(1e-8));
    CHECK(r.explosion_index <= previous);
    CHECK(r.relative_residual <= 1e-10);
    previous = r.explosion_index;
  }
  CHECK(natural_gradient_norm(f, Vector{0, 0}, 1e-6).explosion_index == 0.0);
  CHECK_THROWS_AS(natural_gradient_norm(f, g, 0.0), PreconditionError);
  CHECK_THROWS_AS(natural_gradient_norm(f, Vector{1.0}, 1e-3), PreconditionError);

  Rng r(44);
  const Matrix psd = graded_psd(30, 30, r);
  Vector h(30);
  for (double& v : h) v = r.normal();
  const NatGradReport cg = natural_gradient_norm(psd, h, 1e-3);
  // Check (F + lambda I) v = g through the reported norm against a dense solve.
  Eigen::MatrixXd m(30, 30);
  for (int i = 0; i < 30; ++i)
    for (int j = 0; j < 30; ++j) m(i, j) = psd(i, j) + (i == j ? 1e-3 : 0.0);
  const Eigen::VectorXd v = m.ldlt().solve(Eigen::Map<const Eigen::VectorXd>(h.data(), 30));
  CHECK(cg.natgrad_norm == doctest::Approx(v.norm()).epsilon(1e-8));
}
