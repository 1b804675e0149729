#include "cdlab/catlab.hpp"

#include <algorithm>
#include <boost/math/distributions/normal.hpp>
#include <cmath>
#include <map>

#include "cdlab/errors.hpp"
#include "cdlab/learnlab.hpp"
#include "cdlab/parallel.hpp"
#include "cdlab/rng.hpp"

namespace cdlab::catlab {

CatastropheCriterion CatastropheCriterion::output_jump(double epsilon, OutputNorm norm) {
  if (!(epsilon > 0.0)) throw PreconditionError("output_jump criterion needs epsilon > 0");
  return {Kind::output_jump, epsilon, norm};
}

double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) throw PreconditionError("normal quantile needs p in (0, 1)");
  return boost::math::quantile(boost::math::normal_distribution<double>(), p);
}

Interval wilson_interval(std::size_t hits, std::size_t n, double confidence) {
  if (n == 0) throw PreconditionError("Wilson interval needs n > 0");
  if (hits > n) throw PreconditionError("Wilson interval: hits > n");
  if (!(confidence > 0.0 && confidence < 1.0)) throw PreconditionError("confidence must be in (0, 1)");
  const double z = normal_quantile(1.0 - 0.5 * (1.0 - confidence));
  const double nn = static_cast<double>(n);
  const double p = static_cast<double>(hits) / nn;
  const double z2 = z * z;
  const double denom = 1.0 + z2 / nn;
  const double center = (p + z2 / (2.0 * nn)) / denom;
  const double half = z / denom * std::sqrt(p * (1.0 - p) / nn + z2 / (4.0 * nn * nn));
  Interval ci{std::clamp(center - half, 0.0, 1.0), std::clamp(center + half, 0.0, 1.0)};
  if (hits == 0) ci.low = 0.0;
  if (hits == n) ci.high = 1.0;
  ci.low = std::min(ci.low, p);
  ci.high = std::max(ci.high, p);
  return ci;
}

std::vector<Vector> sample_points(const Domain& domain, std::size_t samples, std::uint64_t seed) {
  std::vector<Vector> pts;
  pts.reserve(samples);
  const std::size_t chunks = (samples + kChunkSize - 1) / kChunkSize;
  for (std::size_t c = 0; c < chunks; ++c) {
    Rng rng(derive_seed(seed, c));
    const std::size_t end = std::min(samples, (c + 1) * kChunkSize);
    for (std::size_t i = c * kChunkSize; i < end; ++i) pts.push_back(domain.sample(rng));
  }
  return pts;
}

bool is_kink_catastrophic(const Network& net, std::span<const double> x, double delta, std::uint64_t probe_seed) {
  return regionlab::distance_to_boundary(net, x, {regionlab::kDefaultProbeDirections, probe_seed}).distance <= delta;
}

namespace {

void check_common(const Network& net, const Domain& domain, const SamplingOptions& options) {
  if (domain.dim() != net.input_dim()) throw PreconditionError("domain and network dimensions differ");
  if (options.samples == 0) throw PreconditionError("need at least one sample");
}

DensityEstimate make_estimate(std::size_t hits, const SamplingOptions& options, CatastropheCriterion criterion,
                              bool lower_bound) {
  DensityEstimate e;
  e.hits = hits;
  e.n_samples = options.samples;
  e.rho = static_cast<double>(hits) / static_cast<double>(options.samples);
  const Interval ci = wilson_interval(hits, options.samples, options.confidence);
  e.ci_low = ci.low;
  e.ci_high = ci.high;
  e.confidence = options.confidence;
  e.criterion = criterion;
  e.seed = options.seed;
  e.is_lower_bound = lower_bound;
  return e;
}

// Counts points satisfying `pred(x, global_index)` over the sample stream,
// chunk by chunk, summing the integer counts in chunk order.
template <class Pred>
std::size_t count_hits(const Domain& domain, const SamplingOptions& options, Pred&& pred) {
  const std::size_t chunks = (options.samples + kChunkSize - 1) / kChunkSize;
  std::vector<std::size_t> hits(chunks, 0);
  parallel_for(chunks, options.workers, [&](std::size_t c) {
    Rng rng(derive_seed(options.seed, c));
    const std::size_t end = std::min(options.samples, (c + 1) * kChunkSize);
    std::size_t h = 0;
    for (std::size_t i = c * kChunkSize; i < end; ++i) {
      const Vector x = domain.sample(rng);
      if (pred(x, i)) ++h;
    }
    hits[c] = h;
  });
  std::size_t total = 0;
  for (std::size_t h : hits) total += h;
  return total;
}

double output_change(std::span<const double> base, std::span<const double> moved, OutputNorm norm,
                     std::size_t base_class) {
  switch (norm) {
    case OutputNorm::l2: {
      double s = 0.0;
      for (std::size_t k = 0; k < base.size(); ++k) s += (moved[k] - base[k]) * (moved[k] - base[k]);
      return std::sqrt(s);
    }
    case OutputNorm::linf: {
      double m = 0.0;
      for (std::size_t k = 0; k < base.size(); ++k) m = std::max(m, std::abs(moved[k] - base[k]));
      return m;
    }
    case OutputNorm::logit_gap: {
      // Decrease of the margin of the class predicted at x.
      const auto margin = [&](std::span<const double> f) {
        double other = -std::numeric_limits<double>::infinity();
        for (std::size_t k = 0; k < f.size(); ++k)
          if (k != base_class) other = std::max(other, f[k]);
        return f[base_class] - other;
      };
      return margin(base) - margin(moved);
    }
  }
  return 0.0;
}

// Gradient (w.r.t. x') of the change objective at x'.
Vector change_gradient(const Network& net, std::span<const double> base, std::span<const double> xp, OutputNorm norm,
                       std::size_t base_class) {
  const Matrix jac = jacobian_input(net, xp).jacobian;
  const Vector f = forward(net, xp);
  Vector g(xp.size(), 0.0);
  switch (norm) {
    case OutputNorm::l2: {
      Vector diff(f.size());
      for (std::size_t k = 0; k < f.size(); ++k) diff[k] = f[k] - base[k];
      return matvec_transposed(jac, diff);
    }
    case OutputNorm::linf: {
      std::size_t best = 0;
      for (std::size_t k = 1; k < f.size(); ++k)
        if (std::abs(f[k] - base[k]) > std::abs(f[best] - base[best])) best = k;
      const double s = f[best] >= base[best] ? 1.0 : -1.0;
      for (std::size_t i = 0; i < g.size(); ++i) g[i] = s * jac(best, i);
      return g;
    }
    case OutputNorm::logit_gap: {
      std::size_t other = base_class == 0 ? 1 : 0;
      for (std::size_t k = 0; k < f.size(); ++k)
        if (k != base_class && f[k] > f[other]) other = k;
      for (std::size_t i = 0; i < g.size(); ++i) g[i] = jac(other, i) - jac(base_class, i);
      return g;
    }
  }
  return g;
}

// Top right singular vector of J via power iteration on J^T J.
Vector top_input_direction(const Matrix& jac, Rng& rng) {
  const std::size_t d = jac.cols();
  Vector v(d);
  for (double& x : v) x = rng.normal();
  double n = norm2(v);
  if (n == 0.0) return {};
  for (double& x : v) x /= n;
  for (int it = 0; it < 50; ++it) {
    const Vector w = matvec_transposed(jac, matvec(jac, v));
    n = norm2(w);
    if (n == 0.0) return {};
    for (std::size_t i = 0; i < d; ++i) v[i] = w[i] / n;
  }
  return v;
}

}  // namespace

InstabilityWitness find_output_jump(const Network& net, std::span<const double> x, double epsilon, double delta,
                                    OutputNorm norm, const InnerSearch& search, std::uint64_t seed) {
  if (!(epsilon > 0.0)) throw PreconditionError("epsilon must be positive");
  if (!(delta > 0.0)) throw PreconditionError("delta must be positive");
  const std::size_t d = x.size();
  const Vector base = forward(net, x);
  if (norm == OutputNorm::logit_gap && base.size() < 2)
    throw PreconditionError("logit_gap needs at least two outputs");
  const std::size_t base_class = argmax(base);
  Rng rng(seed);

  InstabilityWitness best;
  best.change = -std::numeric_limits<double>::infinity();
  const auto consider = [&](Vector xp) {
    const double change = output_change(base, forward(net, xp), norm, base_class);
    if (change > best.change) {
      best.change = change;
      best.x_prime = std::move(xp);
    }
    return best.change >= epsilon;
  };
  const auto start_along = [&](std::span<const double> u, double sign) {
    Vector xp(d);
    for (std::size_t i = 0; i < d; ++i) xp[i] = x[i] + sign * delta * u[i];
    return consider(std::move(xp));
  };

  std::vector<Vector> directions;
  const Vector top = top_input_direction(jacobian_input(net, x).jacobian, rng);
  if (!top.empty()) directions.push_back(top);
  for (std::size_t i = 0; i < d; ++i) {
    Vector e(d, 0.0);
    e[i] = 1.0;
    directions.push_back(std::move(e));
  }
  for (std::size_t k = 0; k < search.random_starts; ++k) {
    Vector u(d);
    double n = 0.0;
    do {
      for (double& v : u) v = rng.normal();
      n = norm2(u);
    } while (n == 0.0);
    for (double& v : u) v /= n;
    directions.push_back(std::move(u));
  }
  for (const auto& u : directions)
    for (double sign : {1.0, -1.0})
      if (start_along(u, sign)) {
        best.found = true;
        return best;
      }

  // Projected normalized-gradient ascent from the best start.
  const double step = 2.5 * delta / static_cast<double>(std::max<std::size_t>(search.budget, 1));
  Vector cur = best.x_prime;
  for (std::size_t it = 0; it < search.budget; ++it) {
    Vector g = change_gradient(net, base, cur, norm, base_class);
    const double gn = norm2(g);
    if (gn == 0.0 || !std::isfinite(gn)) break;
    for (std::size_t i = 0; i < d; ++i) cur[i] += step * g[i] / gn;
    cur = learnlab::project_onto_ball(x, cur, delta, learnlab::ThreatNorm::l2);
    if (consider(cur)) {
      best.found = true;
      return best;
    }
  }
  best.found = best.change >= epsilon;
  return best;
}

DensityEstimate estimate_kink_density(const Network& net, const Domain& domain, double delta,
                                      const SamplingOptions& options) {
  check_common(net, domain, options);
  if (!(delta > 0.0)) throw PreconditionError("delta must be positive");
  if (!net.is_piecewise_linear()) throw PreconditionError("kink criterion needs a piecewise-linear network");
  const bool shallow = net.is_depth_one();
  const auto planes = regionlab::first_layer_boundaries(net, domain);
  // Same arithmetic as Hyperplane::distance with the norms hoisted.
  std::vector<double> norms;
  for (const auto& h : planes) norms.push_back(norm2(h.normal));
  const std::uint64_t probe_root = derive_seed(options.seed, "catlab", "probe");
  const std::size_t hits = count_hits(domain, options, [&](const Vector& x, std::size_t i) {
    if (shallow) {
      for (std::size_t p = 0; p < planes.size(); ++p) {
        const auto& h = planes[p];
        double z = h.bias;
        for (std::size_t k = 0; k < x.size(); ++k) z += h.normal[k] * x[k];
        if (std::abs((z - h.breakpoint) / norms[p]) <= delta) return true;
      }
      return false;
    }
    return is_kink_catastrophic(net, x, delta, derive_seed(probe_root, i));
  });
  return make_estimate(hits, options, CatastropheCriterion::kink(), !shallow);
}

DensityEstimate estimate_output_instability(const Network& net, const Domain& domain, double epsilon, double delta,
                                            OutputNorm norm, const InnerSearch& search,
                                            const SamplingOptions& options) {
  check_common(net, domain, options);
  const auto criterion = CatastropheCriterion::output_jump(epsilon, norm);
  if (!(delta > 0.0)) throw PreconditionError("delta must be positive");
  const std::uint64_t root = derive_seed(options.seed, "catlab", "inner-search");
  const std::size_t hits = count_hits(domain, options, [&](const Vector& x, std::size_t i) {
    return find_output_jump(net, x, epsilon, delta, norm, search, derive_seed(root, i)).found;
  });
  return make_estimate(hits, options, criterion, true);
}

DensityEstimate estimate_safe_measure(const Network& net, const Domain& domain, const CatastropheCriterion& criterion,
                                      double delta, const SamplingOptions& options, const InnerSearch& search) {
  DensityEstimate e;
  switch (criterion.kind) {
    case CatastropheCriterion::Kind::kink:
      e = estimate_kink_density(net, domain, delta, options);
      break;
    case CatastropheCriterion::Kind::output_jump:
      e = estimate_output_instability(net, domain, criterion.epsilon, delta, criterion.norm, search, options);
      break;
    case CatastropheCriterion::Kind::class_flip:
      throw PreconditionError("safe measure is defined for the kink and output_jump criteria");
  }
  const double rho = e.rho, lo = e.ci_low, hi = e.ci_high;
  e.rho = 1.0 - rho;
  e.ci_low = 1.0 - hi;
  e.ci_high = 1.0 - lo;
  e.hits = e.n_samples - e.hits;
  return e;
}

MannKendall mann_kendall(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw PreconditionError("mann_kendall: length mismatch");
  const std::size_t n = x.size();
  MannKendall mk;
  if (n < 3) return mk;
  const auto sgn = [](double v) { return (v > 0.0) - (v < 0.0); };
  long long s = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) s += sgn(x[j] - x[i]) * sgn(y[j] - y[i]);
  mk.s = static_cast<double>(s);

  const auto tie_sums = [](std::span<const double> v) {
    std::map<double, double> groups;
    for (double e : v) groups[e] += 1.0;
    double a = 0, b = 0, c = 0;
    for (const auto& [value, t] : groups) {
      a += t * (t - 1.0) * (2.0 * t + 5.0);
      b += t * (t - 1.0) * (t - 2.0);
      c += t * (t - 1.0);
    }
    return std::array<double, 3>{a, b, c};
  };
  const auto tx = tie_sums(x), ty = tie_sums(y);
  const double nn = static_cast<double>(n);
  mk.variance = (nn * (nn - 1.0) * (2.0 * nn + 5.0) - tx[0] - ty[0]) / 18.0 +
                tx[1] * ty[1] / (9.0 * nn * (nn - 1.0) * (nn - 2.0)) + tx[2] * ty[2] / (2.0 * nn * (nn - 1.0));
  if (mk.variance <= 0.0) return mk;
  const double corrected = mk.s > 0 ? mk.s - 1.0 : (mk.s < 0 ? mk.s + 1.0 : 0.0);
  mk.z = corrected / std::sqrt(mk.variance);
  mk.p_value = std::erfc(std::abs(mk.z) / std::sqrt(2.0));
  return mk;
}

SweepResult genericity_sweep(const Domain& domain, const SweepOptions& options) {
  if (options.widths.empty()) throw PreconditionError("sweep needs at least one width");
  if (options.trials < 30) throw PreconditionError("sweep needs at least 30 trials per width");
  if (!(options.delta > 0.0)) throw PreconditionError("delta must be positive");
  for (std::size_t i = 1; i < options.widths.size(); ++i)
    if (options.widths[i] == options.widths[i - 1]) throw PreconditionError("sweep widths must be distinct");

  const std::size_t n_widths = options.widths.size();
  const std::size_t jobs = n_widths * options.trials;
  std::vector<double> rhos(jobs);
  const std::uint64_t net_root = derive_seed(options.seed, "catlab", "sweep-network");
  const std::uint64_t sample_root = derive_seed(options.seed, "catlab", "sweep-samples");
  parallel_for(jobs, options.workers, [&](std::size_t job) {
    const std::size_t w = options.widths[job / options.trials];
    const std::vector<std::size_t> hidden = w == 0 ? std::vector<std::size_t>{} : std::vector<std::size_t>{w};
    const Network net =
        random_network(mlp_shape(domain.dim(), hidden, 1, Activation::relu()), options.weight_scale,
                       derive_seed(net_root, job));
    SamplingOptions so;
    so.samples = options.samples_per_estimate;
    so.seed = derive_seed(sample_root, job);
    so.confidence = options.confidence;
    so.workers = 1;
    rhos[job] = estimate_kink_density(net, domain, options.delta, so).rho;
  });

  SweepResult result;
  std::vector<double> xs, indicators;
  for (std::size_t wi = 0; wi < n_widths; ++wi) {
    SweepRow row;
    row.width = options.widths[wi];
    row.trials = options.trials;
    double sum = 0.0;
    for (std::size_t t = 0; t < options.trials; ++t) {
      const double rho = rhos[wi * options.trials + t];
      const bool above = rho > 0.0 && rho >= options.threshold;
      row.above += above ? 1 : 0;
      row.rhos.push_back(rho);
      sum += rho;
      xs.push_back(static_cast<double>(row.width));
      indicators.push_back(above ? 1.0 : 0.0);
    }
    row.fraction = static_cast<double>(row.above) / static_cast<double>(row.trials);
    row.ci = wilson_interval(row.above, row.trials, options.confidence);
    row.mean_rho = sum / static_cast<double>(row.trials);
    if (!result.rows.empty() && row.fraction < result.rows.back().fraction) result.fractions_non_decreasing = false;
    result.rows.push_back(std::move(row));
  }
  result.trend = mann_kendall(xs, indicators);
  return result;
}

}  // namespace cdlab::catlab
