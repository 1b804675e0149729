#include "cdlab/regionlab.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>

#include "cdlab/errors.hpp"
#include "cdlab/parallel.hpp"
#include "cdlab/rng.hpp"

namespace cdlab::regionlab {

double Hyperplane::signed_distance(std::span<const double> x) const {
  double z = bias;
  for (std::size_t k = 0; k < normal.size(); ++k) z += normal[k] * x[k];
  return (z - breakpoint) / norm2(normal);
}

double Hyperplane::distance(std::span<const double> x) const { return std::abs(signed_distance(x)); }

namespace {

void require_piecewise(const Network& net) {
  if (!net.is_piecewise_linear())
    throw PreconditionError("activation boundaries are only defined for piecewise-linear networks");
}

// Hyperplanes of the first layer without the domain test.
std::vector<Hyperplane> raw_boundaries(const Network& net) {
  const Layer& first = net.layers().front();
  std::vector<Hyperplane> planes;
  for (std::size_t j = 0; j < first.weights.rows(); ++j) {
    const auto w = first.weights.row(j);
    if (norm2(w) == 0.0) continue;
    const auto& bps = first.activation.breakpoints();
    for (std::size_t k = 0; k < bps.size(); ++k) {
      Hyperplane h;
      h.normal.assign(w.begin(), w.end());
      h.bias = first.bias[j];
      h.breakpoint = bps[k];
      h.offset = first.bias[j] - bps[k];
      h.unit = j;
      h.breakpoint_index = k;
      planes.push_back(std::move(h));
    }
  }
  return planes;
}

// Normalized plane data for the hot loops: n.x + o with |n| = 1.
struct UnitPlane {
  Vector n;
  double o;
};

std::vector<UnitPlane> unit_planes(const std::vector<Hyperplane>& planes) {
  std::vector<UnitPlane> out;
  out.reserve(planes.size());
  for (const auto& h : planes) {
    const double s = norm2(h.normal);
    UnitPlane u{h.normal, h.offset / s};
    for (double& v : u.n) v /= s;
    out.push_back(std::move(u));
  }
  return out;
}

// Local affine state of every layer at x: pre-activations and their input
// gradients under the current activation pattern.
struct LocalAffine {
  std::vector<Vector> z;
  std::vector<Matrix> grad;  // out x d
};

LocalAffine local_affine(const Network& net, std::span<const double> x) {
  const std::size_t d = x.size();
  LocalAffine st;
  Vector a(x.begin(), x.end());
  Matrix da = Matrix::identity(d);
  for (const auto& layer : net.layers()) {
    const std::size_t out = layer.weights.rows();
    Vector z(out);
    for (std::size_t j = 0; j < out; ++j) z[j] = layer.bias[j] + dot(layer.weights.row(j), a);
    Matrix g = matmul(layer.weights, da);
    Vector next(out);
    Matrix dnext = g;
    for (std::size_t j = 0; j < out; ++j) {
      next[j] = layer.activation.apply(z[j]);
      const double s = layer.activation.derivative(z[j]);
      for (double& v : dnext.row(j)) v *= s;
    }
    st.z.push_back(std::move(z));
    st.grad.push_back(std::move(g));
    a = std::move(next);
    da = std::move(dnext);
  }
  return st;
}

// Time until a unit with pre-activation z moving at `rate` leaves its piece.
double crossing_time(const Activation& act, double z, double rate) {
  const auto& bps = act.breakpoints();
  const int seg = act.segment(z);
  if (rate > 0.0) {
    if (static_cast<std::size_t>(seg) < bps.size()) return (bps[seg] - z) / rate;
  } else if (rate < 0.0) {
    if (seg > 0) return (z - bps[seg - 1]) / -rate;
  }
  return std::numeric_limits<double>::infinity();
}

// First pattern change along x + t u (|u| = 1), exact for piecewise-linear nets.
double first_crossing(const Network& net, const LocalAffine& st, std::span<const double> u) {
  double best = std::numeric_limits<double>::infinity();
  const auto& layers = net.layers();
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& act = layers[l].activation;
    if (!act.has_kinks()) continue;
    for (std::size_t j = 0; j < st.z[l].size(); ++j)
      best = std::min(best, crossing_time(act, st.z[l][j], dot(st.grad[l].row(j), u)));
  }
  return best;
}

}  // namespace

std::vector<Hyperplane> first_layer_boundaries(const Network& net, const Domain& domain) {
  require_piecewise(net);
  if (domain.dim() != net.input_dim()) throw PreconditionError("domain and network dimensions differ");
  auto planes = raw_boundaries(net);
  for (auto& h : planes) h.active = h.distance(domain.center()) < domain.radius();
  return planes;
}

BoundaryDistance distance_to_boundary(const Network& net, std::span<const double> x, const ProbeOptions& probes) {
  require_piecewise(net);
  if (x.size() != net.input_dim()) throw PreconditionError("point dimension does not match the network");
  BoundaryDistance result;
  for (const auto& h : raw_boundaries(net)) result.distance = std::min(result.distance, h.distance(x));
  if (net.is_depth_one()) return result;

  result.exact = false;
  const std::size_t d = x.size();
  const LocalAffine st = local_affine(net, x);

  // Gradient-aligned rays toward the nearest deep breakpoints.
  struct Candidate {
    double estimate;
    std::size_t layer, unit;
    double sign;
  };
  std::vector<Candidate> candidates;
  const auto& layers = net.layers();
  for (std::size_t l = 1; l < layers.size(); ++l) {
    const auto& act = layers[l].activation;
    if (!act.has_kinks()) continue;
    for (std::size_t j = 0; j < st.z[l].size(); ++j) {
      const double gn = norm2(st.grad[l].row(j));
      if (gn == 0.0) continue;
      const double z = st.z[l][j];
      const int seg = act.segment(z);
      const auto& bps = act.breakpoints();
      if (seg > 0) candidates.push_back({(z - bps[seg - 1]) / gn, l, j, -1.0});
      if (static_cast<std::size_t>(seg) < bps.size()) candidates.push_back({(bps[seg] - z) / gn, l, j, 1.0});
    }
  }
  const std::size_t keep = std::min<std::size_t>(candidates.size(), 16);
  std::partial_sort(candidates.begin(), candidates.begin() + keep, candidates.end(),
                    [](const Candidate& a, const Candidate& b) { return a.estimate < b.estimate; });
  Vector u(d);
  for (std::size_t c = 0; c < keep; ++c) {
    const auto g = st.grad[candidates[c].layer].row(candidates[c].unit);
    const double gn = norm2(g);
    for (std::size_t i = 0; i < d; ++i) u[i] = candidates[c].sign * g[i] / gn;
    result.distance = std::min(result.distance, first_crossing(net, st, u));
    ++result.directions;
  }

  Rng rng(probes.seed);
  for (std::size_t k = 0; k < probes.directions; ++k) {
    double n = 0.0;
    do {
      for (double& v : u) v = rng.normal();
      n = norm2(u);
    } while (n == 0.0);
    for (double& v : u) v /= n;
    result.distance = std::min(result.distance, first_crossing(net, st, u));
    for (double& v : u) v = -v;
    result.distance = std::min(result.distance, first_crossing(net, st, u));
    result.directions += 2;
  }
  return result;
}

// ---------------------------------------------------------------------------
// Region census

namespace {

RegionCensus census_1d(const Network& net, const Domain& domain) {
  const double c = domain.center()[0];
  const double r = domain.radius();
  const double eta = kArrangementEta * r;
  std::vector<double> cuts;
  for (const auto& h : raw_boundaries(net)) {
    const double t = -(h.offset) / h.normal[0];
    if (t > c - r + eta && t < c + r - eta) cuts.push_back(t);
  }
  std::sort(cuts.begin(), cuts.end());
  std::vector<double> distinct;
  for (double t : cuts)
    if (distinct.empty() || t - distinct.back() > eta) distinct.push_back(t);

  std::vector<double> ends{c - r};
  ends.insert(ends.end(), distinct.begin(), distinct.end());
  ends.push_back(c + r);
  std::set<ActivationPattern> patterns;
  for (std::size_t i = 0; i + 1 < ends.size(); ++i) {
    const double mid[1] = {0.5 * (ends[i] + ends[i + 1])};
    patterns.insert(forward_with_pattern(net, mid).pattern);
  }
  RegionCensus census;
  census.region_count = distinct.size() + 1;
  census.patterns.assign(patterns.begin(), patterns.end());
  census.method = CensusMethod::arrangement_exact;
  return census;
}

struct Line2 {
  double nx, ny, o;  // centre-relative, |n| = 1
};

// Incremental arrangement of chords in a disk. Each accepted chord adds one
// region plus one per distinct interior crossing with earlier chords.
// Degeneracies are resolved by unit order: a line coincident with an
// earlier one is dropped, near-parallel lines never cross, and crossings
// closer than eta merge into one vertex.
RegionCensus census_2d(const Network& net, const Domain& domain) {
  const double r = domain.radius();
  const double eta = kArrangementEta;
  const double cx = domain.center()[0], cy = domain.center()[1];

  std::vector<Line2> accepted;
  std::vector<std::vector<double>> cuts;  // distinct crossing parameters per accepted line
  std::size_t regions = 1;
  for (const auto& up : unit_planes(raw_boundaries(net))) {
    Line2 line{up.n[0], up.n[1], up.o + up.n[0] * cx + up.n[1] * cy};
    if (std::abs(line.o) >= r * (1.0 - eta)) continue;  // misses or only touches the disk
    bool coincident = false;
    for (const auto& prev : accepted) {
      const bool same = std::abs(line.nx - prev.nx) <= eta && std::abs(line.ny - prev.ny) <= eta &&
                        std::abs(line.o - prev.o) <= eta * r;
      const bool flipped = std::abs(line.nx + prev.nx) <= eta && std::abs(line.ny + prev.ny) <= eta &&
                           std::abs(line.o + prev.o) <= eta * r;
      if (same || flipped) {
        coincident = true;
        break;
      }
    }
    if (coincident) continue;

    std::vector<double> ts;
    for (std::size_t j = 0; j < accepted.size(); ++j) {
      const Line2& other = accepted[j];
      const double det = line.nx * other.ny - line.ny * other.nx;
      if (std::abs(det) <= eta) continue;
      const double px = (line.ny * other.o - other.ny * line.o) / det;
      const double py = (other.nx * line.o - line.nx * other.o) / det;
      if (px * px + py * py >= r * r * (1.0 - eta)) continue;
      const double t = -line.ny * px + line.nx * py;
      ts.push_back(t);
      // Record the crossing on the earlier line as well, for pattern probes.
      cuts[j].push_back(-other.ny * px + other.nx * py);
    }
    std::sort(ts.begin(), ts.end());
    std::size_t distinct = 0;
    for (std::size_t k = 0; k < ts.size(); ++k)
      if (k == 0 || ts[k] - ts[k - 1] > eta * r) ++distinct;
    regions += 1 + distinct;
    accepted.push_back(line);
    cuts.push_back(std::move(ts));
  }

  // Every region touches some chord, so probing both sides of every chord
  // sub-segment visits them all.
  std::set<ActivationPattern> patterns;
  if (accepted.empty()) patterns.insert(forward_with_pattern(net, domain.center()).pattern);
  for (std::size_t i = 0; i < accepted.size(); ++i) {
    const Line2& line = accepted[i];
    const double half = std::sqrt(r * r - line.o * line.o);
    std::vector<double> stops = cuts[i];
    stops.push_back(-half);
    stops.push_back(half);
    std::sort(stops.begin(), stops.end());
    for (std::size_t s = 0; s + 1 < stops.size(); ++s) {
      if (stops[s + 1] - stops[s] <= eta * r) continue;
      const double t = 0.5 * (stops[s] + stops[s + 1]);
      const double px = -line.o * line.nx - t * line.ny;
      const double py = -line.o * line.ny + t * line.nx;
      double room = std::min(1e-7 * r, 0.25 * (r - std::hypot(px, py)));
      for (std::size_t j = 0; j < accepted.size(); ++j) {
        if (j == i) continue;
        room = std::min(room, 0.25 * std::abs(accepted[j].nx * px + accepted[j].ny * py + accepted[j].o));
      }
      if (!(room > 0.0)) continue;
      for (double side : {-1.0, 1.0}) {
        const double p[2] = {cx + px + side * room * line.nx, cy + py + side * room * line.ny};
        patterns.insert(forward_with_pattern(net, p).pattern);
      }
    }
  }
  RegionCensus census;
  census.region_count = regions;
  census.patterns.assign(patterns.begin(), patterns.end());
  census.method = CensusMethod::arrangement_exact;
  return census;
}

}  // namespace

RegionCensus region_count_exact(const Network& net, const Domain& domain, const CensusOptions& options) {
  require_piecewise(net);
  if (domain.dim() != net.input_dim()) throw PreconditionError("domain and network dimensions differ");
  const bool arrangement_possible = net.is_depth_one() && domain.dim() <= 2;
  const CensusMethod method = options.method.value_or(
      arrangement_possible ? CensusMethod::arrangement_exact : CensusMethod::pattern_sampling_lower_bound);
  if (method == CensusMethod::arrangement_exact) {
    if (!net.is_depth_one())
      throw PreconditionError("arrangement_exact needs a depth-one network (kinks only in the first layer)");
    if (domain.dim() > 2) throw PreconditionError("arrangement_exact supports d <= 2");
    return domain.dim() == 1 ? census_1d(net, domain) : census_2d(net, domain);
  }
  return region_count_sampled(net, domain, options.samples, options.seed, options.workers);
}

RegionCensus region_count_sampled(const Network& net, const Domain& domain, std::size_t samples, std::uint64_t seed,
                                  unsigned workers) {
  require_piecewise(net);
  if (domain.dim() != net.input_dim()) throw PreconditionError("domain and network dimensions differ");
  if (samples == 0) throw PreconditionError("sampling census needs at least one sample");
  constexpr std::size_t kChunk = 8192;
  const std::size_t chunks = (samples + kChunk - 1) / kChunk;
  std::vector<std::set<ActivationPattern>> found(chunks);
  parallel_for(chunks, workers, [&](std::size_t c) {
    Rng rng(derive_seed(seed, c));
    const std::size_t end = std::min(samples, (c + 1) * kChunk);
    for (std::size_t i = c * kChunk; i < end; ++i) found[c].insert(forward_with_pattern(net, domain.sample(rng)).pattern);
  });
  std::set<ActivationPattern> all;
  for (auto& s : found) all.merge(s);
  RegionCensus census;
  census.region_count = all.size();
  census.patterns.assign(all.begin(), all.end());
  census.method = CensusMethod::pattern_sampling_lower_bound;
  census.is_lower_bound = true;
  census.samples = samples;
  return census;
}

// ---------------------------------------------------------------------------
// Grid density

GridDensity exact_kink_density(const Network& net, const Domain& domain, double delta, double step, unsigned workers) {
  require_piecewise(net);
  if (domain.dim() != net.input_dim()) throw PreconditionError("domain and network dimensions differ");
  if (domain.dim() > 2) throw PreconditionError("grid density supports d <= 2");
  if (!(delta > 0.0)) throw PreconditionError("delta must be positive");
  if (!(step > 0.0)) throw PreconditionError("grid step must be positive");
  if (step > delta / 10.0 * (1.0 + 1e-12)) throw PreconditionError("grid step must be <= delta/10 to avoid aliasing");

  const std::size_t d = domain.dim();
  const double r = domain.radius();
  const auto& c = domain.center();
  const std::size_t per_axis = static_cast<std::size_t>(std::ceil(2.0 * r / step));
  const auto coord = [&](std::size_t axis, std::size_t k) {
    return c[axis] - r + (static_cast<double>(k) + 0.5) * step;
  };
  const bool shallow = net.is_depth_one();
  const auto planes = raw_boundaries(net);
  const auto units = unit_planes(planes);

  const auto hit = [&](std::span<const double> p) {
    if (shallow) {
      for (const auto& h : planes)
        if (h.distance(p) <= delta) return true;
      return false;
    }
    return distance_to_boundary(net, p).distance <= delta;
  };

  GridDensity result;
  result.step = step;
  result.is_lower_bound = !shallow;

  if (d == 1) {
    for (std::size_t k = 0; k < per_axis; ++k) {
      const double p[1] = {coord(0, k)};
      if (std::abs(p[0] - c[0]) > r) continue;
      ++result.grid_points;
      if (hit(p)) ++result.catastrophic_points;
    }
  } else {
    constexpr std::size_t kTileRows = 32;
    const std::size_t tiles = (per_axis + kTileRows - 1) / kTileRows;
    std::vector<std::size_t> inside(tiles, 0), hits(tiles, 0);
    parallel_for(tiles, workers, [&](std::size_t tile) {
      std::vector<int> cover(per_axis + 1);
      const std::size_t row_end = std::min(per_axis, (tile + 1) * kTileRows);
      for (std::size_t row = tile * kTileRows; row < row_end; ++row) {
        const double y = coord(1, row);
        const double dy = y - c[1];
        if (std::abs(dy) > r) continue;
        // Columns inside the disk on this row.
        std::size_t k0 = per_axis, k1 = 0;
        for (std::size_t k = 0; k < per_axis; ++k) {
          const double dx = coord(0, k) - c[0];
          if (dx * dx + dy * dy <= r * r) {
            k0 = std::min(k0, k);
            k1 = k + 1;
          }
        }
        if (k0 >= k1) continue;
        inside[tile] += k1 - k0;
        if (!shallow) {
          for (std::size_t k = k0; k < k1; ++k) {
            const double p[2] = {coord(0, k), y};
            if (hit(p)) ++hits[tile];
          }
          continue;
        }
        // Each plane covers one interval of the row. Locate it analytically,
        // then settle the two ends with the exact per-point test.
        std::fill(cover.begin(), cover.end(), 0);
        for (std::size_t h = 0; h < planes.size(); ++h) {
          const auto& u = units[h];
          const auto within = [&](std::ptrdiff_t k) {
            const double p[2] = {coord(0, static_cast<std::size_t>(k)), y};
            return planes[h].distance(p) <= delta;
          };
          std::ptrdiff_t lo, hi;
          const double base = u.n[1] * y + u.o;
          if (std::abs(u.n[0]) < 1e-300) {
            if (std::abs(base) > delta * (1.0 + 1e-9)) continue;
            lo = static_cast<std::ptrdiff_t>(k0);
            hi = static_cast<std::ptrdiff_t>(k1) - 1;
          } else {
            double xa = (-delta - base) / u.n[0], xb = (delta - base) / u.n[0];
            if (xa > xb) std::swap(xa, xb);
            const double fa = (xa - (c[0] - r)) / step - 0.5;
            const double fb = (xb - (c[0] - r)) / step - 0.5;
            if (fb < static_cast<double>(k0) - 2.0 || fa > static_cast<double>(k1) + 1.0) continue;
            lo = std::max<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(k0), static_cast<std::ptrdiff_t>(std::ceil(fa)));
            hi = std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(k1) - 1,
                                          static_cast<std::ptrdiff_t>(std::floor(fb)));
          }
          const auto first = static_cast<std::ptrdiff_t>(k0), last = static_cast<std::ptrdiff_t>(k1) - 1;
          while (lo - 1 >= first && within(lo - 1)) --lo;
          while (lo <= hi && !within(lo)) ++lo;
          while (hi + 1 <= last && within(hi + 1)) ++hi;
          while (hi >= lo && !within(hi)) --hi;
          if (lo > hi) continue;
          cover[static_cast<std::size_t>(lo)] += 1;
          cover[static_cast<std::size_t>(hi) + 1] -= 1;
        }
        int running = 0;
        for (std::size_t k = 0; k < k1; ++k) {
          running += cover[k];
          if (k >= k0 && running > 0) ++hits[tile];
        }
      }
    });
    for (std::size_t t = 0; t < tiles; ++t) {
      result.grid_points += inside[t];
      result.catastrophic_points += hits[t];
    }
  }
  result.value = result.grid_points == 0
                     ? 0.0
                     : static_cast<double>(result.catastrophic_points) / static_cast<double>(result.grid_points);
  return result;
}

double strip_disk_area(double delta, const Domain& disk, const Hyperplane& line) {
  if (!(delta > 0.0)) throw PreconditionError("delta must be positive");
  if (disk.dim() != 2 || line.normal.size() != 2) throw PreconditionError("strip_disk_area is defined for d = 2");
  const double r = disk.radius();
  const double p = line.distance(disk.center());
  const double lo = std::max(p - delta, -r);
  const double hi = std::min(p + delta, r);
  if (hi <= lo) return 0.0;
  // Area of the part of the disk with signed coordinate <= t.
  const auto below = [r](double t) {
    return r * r * (0.5 * std::numbers::pi + std::asin(t / r)) + t * std::sqrt(std::max(0.0, r * r - t * t));
  };
  return below(hi) - below(lo);
}

Network random_through_disk_network(std::size_t N, const Domain& domain, std::uint64_t seed) {
  const std::size_t d = domain.dim();
  if (d == 0) throw PreconditionError("domain dimension must be positive");
  Rng rng(seed);
  Layer hidden{Matrix(N, d), Vector(N), Activation::relu()};
  for (std::size_t j = 0; j < N; ++j) {
    Vector w(d);
    double n = 0.0;
    do {
      for (double& v : w) v = rng.normal();
      n = norm2(w);
    } while (n == 0.0);
    double wc = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      hidden.weights(j, i) = w[i] / n;
      wc += hidden.weights(j, i) * domain.center()[i];
    }
    hidden.bias[j] = rng.uniform(-domain.radius(), domain.radius()) - wc;
  }
  Layer out{Matrix(1, N), Vector(1, 0.0), Activation::linear()};
  for (std::size_t j = 0; j < N; ++j) out.weights(0, j) = 1.0;
  std::vector<Layer> layers;
  layers.push_back(std::move(hidden));
  layers.push_back(std::move(out));
  return Network(d, std::move(layers));
}

}  // namespace cdlab::regionlab
