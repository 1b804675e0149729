#pragma once

// Independent reference implementations used only by the tests.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include "cdlab/linalg.hpp"
#include "cdlab/netcore.hpp"

namespace oracle {

using cdlab::Matrix;
using cdlab::Vector;

// Scalar activation written from the definitions, not from Activation::apply.
inline double activate(const cdlab::Activation& a, double z) {
  switch (a.type()) {
    case cdlab::ActivationType::linear:
      return z;
    case cdlab::ActivationType::relu:
      return std::max(z, 0.0);
    case cdlab::ActivationType::leaky_relu:
      return z < 0.0 ? a.slopes()[0] * z : z;
    case cdlab::ActivationType::tanh:
      return std::tanh(z);
    case cdlab::ActivationType::sigmoid:
      return 0.5 * (1.0 + std::tanh(0.5 * z));
    case cdlab::ActivationType::hard_piecewise: {
      // Left of every breakpoint phi is s_0 z; integrate the slope from there.
      const auto& b = a.breakpoints();
      const auto& s = a.slopes();
      const double start = std::min(z, b.front());
      double v = s[0] * start;
      std::vector<double> knots{start};
      for (double x : b)
        if (x > start && x < z) knots.push_back(x);
      knots.push_back(z);
      for (std::size_t i = 0; i + 1 < knots.size(); ++i) {
        const double mid = 0.5 * (knots[i] + knots[i + 1]);
        std::size_t k = 0;
        while (k < b.size() && b[k] <= mid) ++k;
        v += s[k] * (knots[i + 1] - knots[i]);
      }
      return v;
    }
  }
  return z;
}

// Forward pass through Eigen, layer by layer.
inline Vector forward(const cdlab::Network& net, const Vector& x) {
  Eigen::VectorXd a = Eigen::Map<const Eigen::VectorXd>(x.data(), static_cast<Eigen::Index>(x.size()));
  for (const auto& layer : net.layers()) {
    const auto rows = static_cast<Eigen::Index>(layer.weights.rows());
    const auto cols = static_cast<Eigen::Index>(layer.weights.cols());
    Eigen::MatrixXd w(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r)
      for (Eigen::Index c = 0; c < cols; ++c)
        w(r, c) = layer.weights(static_cast<std::size_t>(r), static_cast<std::size_t>(c));
    Eigen::VectorXd z = w * a;
    for (Eigen::Index r = 0; r < rows; ++r) z(r) = activate(layer.activation, z(r) + layer.bias[r]);
    a = z;
  }
  return Vector(a.data(), a.data() + a.size());
}

// Central differences of the network output with respect to the input.
inline Matrix fd_jacobian(const cdlab::Network& net, const Vector& x, double h = 1e-6) {
  const std::size_t d = x.size();
  Matrix j(net.output_dim(), d);
  for (std::size_t k = 0; k < d; ++k) {
    Vector xp = x, xm = x;
    xp[k] += h;
    xm[k] -= h;
    const Vector fp = forward(net, xp), fm = forward(net, xm);
    for (std::size_t o = 0; o < fp.size(); ++o) j(o, k) = (fp[o] - fm[o]) / (2.0 * h);
  }
  return j;
}

inline double loss(const cdlab::Network& net, const Vector& x, const cdlab::Target& t, cdlab::Loss kind) {
  const Vector f = forward(net, x);
  if (kind == cdlab::Loss::mse) {
    const Vector& y = std::get<Vector>(t);
    double s = 0.0;
    for (std::size_t k = 0; k < f.size(); ++k) s += (f[k] - y[k]) * (f[k] - y[k]);
    return s;
  }
  const std::size_t y = std::get<std::size_t>(t);
  double m = f[0];
  for (double v : f) m = std::max(m, v);
  double z = 0.0;
  for (double v : f) z += std::exp(v - m);
  return -(f[y] - m - std::log(z));
}

// Central differences of the loss with respect to every parameter.
inline Vector fd_param_gradient(const cdlab::Network& net, const Vector& x, const cdlab::Target& t,
                                cdlab::Loss kind, double h = 1e-6) {
  const Vector p = net.parameters();
  Vector g(p.size());
  for (std::size_t k = 0; k < p.size(); ++k) {
    Vector pp = p, pm = p;
    pp[k] += h;
    pm[k] -= h;
    g[k] = (loss(net.with_parameters(pp), x, t, kind) - loss(net.with_parameters(pm), x, t, kind)) / (2.0 * h);
  }
  return g;
}

// Eigen's self-adjoint QR solver, values descending.
inline Vector eigenvalues(const Matrix& a) {
  const auto n = static_cast<Eigen::Index>(a.rows());
  Eigen::MatrixXd m(n, n);
  for (Eigen::Index r = 0; r < n; ++r)
    for (Eigen::Index c = 0; c < n; ++c) m(r, c) = a(static_cast<std::size_t>(r), static_cast<std::size_t>(c));
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m, Eigen::EigenvaluesOnly);
  Vector v(es.eigenvalues().data(), es.eigenvalues().data() + n);
  std::sort(v.rbegin(), v.rend());
  return v;
}

// Fraction of the disk of radius r covered by the strip |signed distance| <= delta
// around a line at distance p from the centre.
inline double strip_fraction(double delta, double r, double p) {
  auto segment = [r](double h) {  // area of the disk part with signed distance >= h
    if (h >= r) return 0.0;
    if (h <= -r) return std::numbers::pi * r * r;
    return r * r * std::acos(h / r) - h * std::sqrt(r * r - h * h);
  };
  return (segment(p - delta) - segment(p + delta)) / (std::numbers::pi * r * r);
}

inline double rel_err(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-300}); }

}  // namespace oracle
