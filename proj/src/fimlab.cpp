#include "cdlab/fimlab.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cdlab/errors.hpp"
#include "cdlab/parallel.hpp"

namespace cdlab::fimlab {

const char* to_string(EigenMethod method) {
  switch (method) {
    case EigenMethod::automatic: return "automatic";
    case EigenMethod::jacobi: return "jacobi";
    case EigenMethod::tridiagonal_ql: return "tridiagonal_ql";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// Fisher accumulation

Matrix fisher_from_gradients(const Matrix& g, unsigned workers) {
  const std::size_t n = g.rows(), c = g.cols();
  if (n == 0) throw PreconditionError("Fisher needs at least one sample");
  if (c > kMaxDenseParameters) throw PreconditionError("parameter count exceeds the dense Fisher limit");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto ra = g.row(a), rb = g.row(b);
    return std::lexicographical_compare(ra.begin(), ra.end(), rb.begin(), rb.end());
  });
  Matrix f(c, c);
  parallel_for(c, workers, [&](std::size_t a) {
    double* fa = &f(a, 0);
    for (std::size_t i : order) {
      const double* gi = g.row(i).data();
      const double ga = gi[a];
      if (ga == 0.0) continue;
      for (std::size_t b = a; b < c; ++b) fa[b] += ga * gi[b];
    }
  });
  const double inv = 1.0 / static_cast<double>(n);
  for (std::size_t a = 0; a < c; ++a)
    for (std::size_t b = a; b < c; ++b) f(b, a) = f(a, b) = f(a, b) * inv;
  return f;
}

namespace {

Matrix per_sample_gradients(const Network& net, const learnlab::Dataset& data, Loss loss, unsigned workers) {
  data.validate();
  if (data.dim() != net.input_dim()) throw PreconditionError("dataset and network input dims differ");
  if (loss == Loss::softmax_xent && !data.is_classification())
    throw PreconditionError("softmax_xent Fisher needs class labels");
  if (data.is_classification() && data.classes != net.output_dim())
    throw PreconditionError("network outputs must match the class count");
  if (!data.is_classification() && data.values.cols() != net.output_dim())
    throw PreconditionError("network outputs must match the target width");
  const std::size_t c = net.parameter_count();
  if (c > kMaxDenseParameters) throw PreconditionError("parameter count exceeds the dense Fisher limit");
  Matrix g(data.size(), c);
  parallel_for(data.size(), workers, [&](std::size_t i) {
    const Vector gi = gradient_params(net, data.x(i), data.target(i, loss), loss);
    std::copy(gi.begin(), gi.end(), g.row(i).begin());
  });
  return g;
}

}  // namespace

Matrix empirical_fisher(const Network& net, const learnlab::Dataset& data, Loss loss, unsigned workers) {
  return fisher_from_gradients(per_sample_gradients(net, data, loss, workers), workers);
}

// ---------------------------------------------------------------------------
// Eigensolvers

namespace {

void check_square(const Matrix& a) {
  if (a.rows() != a.cols()) throw PreconditionError("eigensolver needs a square matrix");
  for (double v : a.data())
    if (!std::isfinite(v)) throw PreconditionError("eigensolver needs finite entries");
}

// Sorts eigenpairs descending. `vt` holds eigenvectors as rows.
SymmetricEigen finish(Vector values, const Matrix& vt, std::size_t sweeps, EigenMethod method) {
  const std::size_t n = values.size();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return values[a] > values[b]; });
  SymmetricEigen e;
  e.values.resize(n);
  e.vectors = Matrix(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    e.values[j] = values[idx[j]];
    const auto v = vt.row(idx[j]);
    for (std::size_t k = 0; k < n; ++k) e.vectors(k, j) = v[k];
  }
  e.sweeps = sweeps;
  e.method = method;
  return e;
}

}  // namespace

SymmetricEigen jacobi_eigen(const Matrix& input, std::size_t max_sweeps) {
  check_square(input);
  const std::size_t n = input.rows();
  Matrix a = input;
  Matrix vt = Matrix::identity(n);
  const double total = frobenius_norm(a);
  std::size_t sweep = 0;
  for (; sweep < max_sweeps; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) off += a(p, q) * a(p, q);
    if (std::sqrt(2.0 * off) <= 1e-12 * total) break;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (apq == 0.0) continue;
        const double app = a(p, p), aqq = a(q, q);
        // Negligible against both diagonal entries after the first sweeps.
        if (sweep > 3 && std::abs(app) + 100.0 * std::abs(apq) == std::abs(app) &&
            std::abs(aqq) + 100.0 * std::abs(apq) == std::abs(aqq)) {
          a(p, q) = a(q, p) = 0.0;
          continue;
        }
        const double theta = (aqq - app) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        double* rp = &a(p, 0);
        double* rq = &a(q, 0);
        for (std::size_t k = 0; k < n; ++k) {
          const double xp = rp[k], xq = rq[k];
          rp[k] = c * xp - s * xq;
          rq[k] = s * xp + c * xq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          a(k, p) = rp[k];
          a(k, q) = rq[k];
        }
        a(p, p) = app - t * apq;
        a(q, q) = aqq + t * apq;
        a(p, q) = a(q, p) = 0.0;
        double* vp = &vt(p, 0);
        double* vq = &vt(q, 0);
        for (std::size_t k = 0; k < n; ++k) {
          const double xp = vp[k], xq = vq[k];
          vp[k] = c * xp - s * xq;
          vq[k] = s * xp + c * xq;
        }
      }
    }
  }
  if (sweep == max_sweeps) throw NumericError("Jacobi did not converge");
  Vector values(n);
  for (std::size_t i = 0; i < n; ++i) values[i] = a(i, i);
  return finish(std::move(values), vt, sweep, EigenMethod::jacobi);
}

SymmetricEigen tridiagonal_ql_eigen(const Matrix& input) {
  check_square(input);
  const std::size_t n = input.rows();
  if (n == 0) return {};
  // Householder reduction to tridiagonal form, accumulating Q in v.
  Matrix v = input;
  Vector d(n), e(n, 0.0);
  for (std::size_t j = 0; j < n; ++j) d[j] = v(n - 1, j);
  for (std::size_t i = n - 1; i > 0; --i) {
    double scale = 0.0, h = 0.0;
    for (std::size_t k = 0; k < i; ++k) scale += std::abs(d[k]);
    if (scale == 0.0) {
      e[i] = d[i - 1];
      for (std::size_t j = 0; j < i; ++j) {
        d[j] = v(i - 1, j);
        v(i, j) = 0.0;
        v(j, i) = 0.0;
      }
    } else {
      for (std::size_t k = 0; k < i; ++k) {
        d[k] /= scale;
        h += d[k] * d[k];
      }
      double f = d[i - 1];
      double g = std::sqrt(h);
      if (f > 0) g = -g;
      e[i] = scale * g;
      h -= f * g;
      d[i - 1] = f - g;
      for (std::size_t j = 0; j < i; ++j) e[j] = 0.0;
      for (std::size_t j = 0; j < i; ++j) {
        f = d[j];
        v(j, i) = f;
        g = e[j] + v(j, j) * f;
        for (std::size_t k = j + 1; k <= i - 1; ++k) {
          g += v(k, j) * d[k];
          e[k] += v(k, j) * f;
        }
        e[j] = g;
      }
      f = 0.0;
      for (std::size_t j = 0; j < i; ++j) {
        e[j] /= h;
        f += e[j] * d[j];
      }
      const double hh = f / (h + h);
      for (std::size_t j = 0; j < i; ++j) e[j] -= hh * d[j];
      for (std::size_t j = 0; j < i; ++j) {
        f = d[j];
        g = e[j];
        for (std::size_t k = j; k <= i - 1; ++k) v(k, j) -= (f * e[k] + g * d[k]);
        d[j] = v(i - 1, j);
        v(i, j) = 0.0;
      }
    }
    d[i] = h;
  }
  for (std::size_t i = 0; i + 1 < n; ++i) {
    v(n - 1, i) = v(i, i);
    v(i, i) = 1.0;
    const double h = d[i + 1];
    if (h != 0.0) {
      for (std::size_t k = 0; k <= i; ++k) d[k] = v(k, i + 1) / h;
      for (std::size_t j = 0; j <= i; ++j) {
        double g = 0.0;
        for (std::size_t k = 0; k <= i; ++k) g += v(k, i + 1) * v(k, j);
        for (std::size_t k = 0; k <= i; ++k) v(k, j) -= g * d[k];
      }
    }
    for (std::size_t k = 0; k <= i; ++k) v(k, i + 1) = 0.0;
  }
  for (std::size_t j = 0; j < n; ++j) {
    d[j] = v(n - 1, j);
    v(n - 1, j) = 0.0;
  }
  v(n - 1, n - 1) = 1.0;
  e[0] = 0.0;

  // Implicit QL on the tridiagonal matrix; rotations act on rows of vt.
  Matrix vt = v.transposed();
  for (std::size_t i = 1; i < n; ++i) e[i - 1] = e[i];
  e[n - 1] = 0.0;
  double f = 0.0, tst1 = 0.0;
  const double eps = std::ldexp(1.0, -52);
  std::size_t iterations = 0;
  for (std::size_t l = 0; l < n; ++l) {
    tst1 = std::max(tst1, std::abs(d[l]) + std::abs(e[l]));
    std::size_t m = l;
    while (m < n) {
      if (std::abs(e[m]) <= eps * tst1) break;
      ++m;
    }
    if (m > l) {
      do {
        if (++iterations > 60 * n) throw NumericError("tridiagonal QL did not converge");
        double g = d[l];
        double p = (d[l + 1] - g) / (2.0 * e[l]);
        double r = std::hypot(p, 1.0);
        if (p < 0) r = -r;
        d[l] = e[l] / (p + r);
        d[l + 1] = e[l] * (p + r);
        const double dl1 = d[l + 1];
        double h = g - d[l];
        for (std::size_t i = l + 2; i < n; ++i) d[i] -= h;
        f += h;
        p = d[m];
        double c = 1.0, c2 = c, c3 = c;
        const double el1 = e[l + 1];
        double s = 0.0, s2 = 0.0;
        for (std::size_t ii = m; ii-- > l;) {
          c3 = c2;
          c2 = c;
          s2 = s;
          g = c * e[ii];
          h = c * p;
          r = std::hypot(p, e[ii]);
          e[ii + 1] = s * r;
          s = e[ii] / r;
          c = p / r;
          p = c * d[ii] - s * g;
          d[ii + 1] = h + s * (c * g + s * d[ii]);
          double* r0 = &vt(ii, 0);
          double* r1 = &vt(ii + 1, 0);
          for (std::size_t k = 0; k < n; ++k) {
            const double x1 = r1[k];
            r1[k] = s * r0[k] + c * x1;
            r0[k] = c * r0[k] - s * x1;
          }
        }
        p = -s * s2 * c3 * el1 * e[l] / dl1;
        e[l] = s * p;
        d[l] = c * p;
      } while (std::abs(e[l]) > eps * tst1);
    }
    d[l] += f;
    e[l] = 0.0;
  }
  return finish(std::move(d), vt, iterations, EigenMethod::tridiagonal_ql);
}

SymmetricEigen symmetric_eigen(const Matrix& a, EigenMethod method) {
  if (method == EigenMethod::automatic)
    method = a.rows() <= kJacobiLimit ? EigenMethod::jacobi : EigenMethod::tridiagonal_ql;
  return method == EigenMethod::jacobi ? jacobi_eigen(a) : tridiagonal_ql_eigen(a);
}

double reconstruction_error(const Matrix& a, const SymmetricEigen& eig) {
  const std::size_t n = a.rows();
  // Rows of q^T scaled by the eigenvalues, then (Q L) Q^T row by row.
  const Matrix qt = eig.vectors.transposed();
  double err = 0.0;
  Vector row(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::fill(row.begin(), row.end(), 0.0);
    for (std::size_t j = 0; j < n; ++j) {
      const double w = eig.vectors(i, j) * eig.values[j];
      if (w == 0.0) continue;
      const double* q = qt.row(j).data();
      for (std::size_t k = 0; k < n; ++k) row[k] += w * q[k];
    }
    for (std::size_t k = 0; k < n; ++k) err += (row[k] - a(i, k)) * (row[k] - a(i, k));
  }
  const double total = frobenius_norm(a);
  return total == 0.0 ? std::sqrt(err) : std::sqrt(err) / total;
}

FisherSpectrum eigenspectrum(const Matrix& f, double tau, EigenMethod method) {
  if (f.rows() != f.cols() || f.rows() == 0) throw PreconditionError("spectrum needs a non-empty square matrix");
  if (f.rows() > kMaxDenseParameters) throw PreconditionError("matrix exceeds the dense limit");
  if (!(tau > 0.0 && tau < 1.0)) throw PreconditionError("tau must lie in (0, 1)");
  const double scale = norm_inf(f.data());
  if (max_asymmetry(f) > 1e-10 * scale) throw PreconditionError("matrix is not symmetric");
  const SymmetricEigen eig = symmetric_eigen(f, method);
  FisherSpectrum s;
  s.method = eig.method;
  s.eigenvalues = eig.values;
  for (std::size_t i = 0; i < f.rows(); ++i) s.trace += f(i, i);
  s.lambda_max = eig.values.front();
  s.lambda_min = eig.values.back();
  s.tau = tau;
  const double floor = kConditionFloor * s.lambda_max;
  s.lambda_min_damped = std::max(s.lambda_min, floor);
  s.condition_ratio = s.lambda_max > 0.0 ? s.lambda_max / s.lambda_min_damped : 1.0;
  std::size_t near = 0;
  for (double v : eig.values) near += v < tau * s.lambda_max;
  if (s.lambda_max <= 0.0) near = eig.values.size();
  s.near_zero_fraction = static_cast<double>(near) / static_cast<double>(eig.values.size());
  s.degenerate = s.lambda_max <= 0.0 || s.near_zero_fraction >= 0.5;
  s.reconstruction_error = reconstruction_error(f, eig);
  return s;
}

// ---------------------------------------------------------------------------
// Natural gradient

NatGradReport natural_gradient_norm(const Matrix& f, std::span<const double> g, double lambda) {
  const std::size_t n = f.rows();
  if (f.cols() != n || g.size() != n) throw PreconditionError("natural gradient: dimension mismatch");
  if (!(lambda > 0.0) || !std::isfinite(lambda)) throw PreconditionError("damping lambda must be positive");
  double trace = 0.0;
  for (std::size_t i = 0; i < n; ++i) trace += f(i, i);
  NatGradReport r;
  r.requested_lambda = lambda;
  r.lambda = std::max(lambda, kDampingFloor * trace);
  r.grad_norm = norm2(g);
  if (r.grad_norm == 0.0) return r;

  Vector x(n, 0.0), res(g.begin(), g.end()), p = res, ap(n);
  double rr = dot(res, res);
  const double target = 1e-10 * r.grad_norm;
  const std::size_t limit = 10 * n;
  std::size_t it = 0;
  while (std::sqrt(rr) > target) {
    if (it == limit) throw NumericError("conjugate gradients did not converge within 10 C iterations");
    for (std::size_t i = 0; i < n; ++i) {
      const double* fi = f.row(i).data();
      double s = 0.0;
      for (std::size_t k = 0; k < n; ++k) s += fi[k] * p[k];
      ap[i] = s + r.lambda * p[i];
    }
    const double pap = dot(p, ap);
    if (!(pap > 0.0)) throw NumericError("conjugate gradients met a non-positive curvature");
    const double step = rr / pap;
    for (std::size_t i = 0; i < n; ++i) {
      x[i] += step * p[i];
      res[i] -= step * ap[i];
    }
    const double rr_new = dot(res, res);
    const double beta = rr_new / rr;
    rr = rr_new;
    for (std::size_t i = 0; i < n; ++i) p[i] = res[i] + beta * p[i];
    ++it;
  }
  r.iterations = it;
  r.relative_residual = std::sqrt(rr) / r.grad_norm;
  r.natgrad_norm = norm2(x);
  r.explosion_index = r.natgrad_norm / r.grad_norm;
  if (!std::isfinite(r.explosion_index)) throw NumericError("natural gradient is not finite");
  return r;
}

PathologyReport pathology_report(const Network& net, const learnlab::Dataset& data, Loss loss, double lambda,
                                 double tau, unsigned workers) {
  const Matrix g = per_sample_gradients(net, data, loss, workers);
  PathologyReport rep;
  const Matrix f = fisher_from_gradients(g, workers);
  rep.spectrum = eigenspectrum(f, tau);
  Vector mean(g.cols(), 0.0);
  for (std::size_t i = 0; i < g.rows(); ++i) {
    const auto gi = g.row(i);
    for (std::size_t k = 0; k < mean.size(); ++k) mean[k] += gi[k];
  }
  for (double& v : mean) v /= static_cast<double>(g.rows());
  rep.natgrad = natural_gradient_norm(f, mean, lambda);
  return rep;
}

}  // namespace cdlab::fimlab
