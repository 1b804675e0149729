#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include "cdlab/netcore.hpp"

// Exact geometry of activation boundaries for shallow piecewise-linear
// networks. This is the ground truth the Monte Carlo estimators in catlab are
// checked against, so it only claims exactness where it can deliver it:
// depth-one networks, and d <= 2 for region counts and grid densities.
namespace cdlab::regionlab {

// Degeneracy tolerance for the 2D arrangement (parallel lines, coincident
// intersection points), relative to the domain radius.
inline constexpr double kArrangementEta = 1e-12;
inline constexpr std::size_t kDefaultProbeDirections = 64;

// Locus w.x + offset = 0 where first-layer unit `unit` crosses its breakpoint
// number `breakpoint_index`; offset = bias - breakpoint.
struct Hyperplane {
  Vector normal;
  double offset = 0.0;
  double bias = 0.0;
  double breakpoint = 0.0;
  std::size_t unit = 0;
  std::size_t breakpoint_index = 0;
  // Meets the open domain ball.
  bool active = true;

  // (w.x + bias - breakpoint) / |w|, evaluated in the same order as the
  // network's pre-activation so a point on the kink gives exactly 0.
  double signed_distance(std::span<const double> x) const;
  double distance(std::span<const double> x) const;
};

// One hyperplane per breakpoint per first-layer unit with nonzero weights.
// Hyperplanes missing the domain are kept with active = false.
std::vector<Hyperplane> first_layer_boundaries(const Network& net, const Domain& domain);

struct ProbeOptions {
  std::size_t directions = kDefaultProbeDirections;
  std::uint64_t seed = 0;
};

struct BoundaryDistance {
  double distance = std::numeric_limits<double>::infinity();
  // True for depth-one networks (closed form); otherwise an upper bound.
  bool exact = true;
  std::size_t directions = 0;
};

// Distance from x to the nearest activation-pattern change.
//
// Depth-one: min over first-layer hyperplanes of |w.x + b| / |w|.
// Deeper: min over rays from x of the exact first pattern change along the
// ray. Rays are the `directions` random directions (both signs) plus the
// local gradient directions of the nearest deep units, and the first-layer
// hyperplane distances are included. Every candidate is a realized change
// point, so the result is an upper bound on the true distance.
BoundaryDistance distance_to_boundary(const Network& net, std::span<const double> x,
                                      const ProbeOptions& probes = {});

enum class CensusMethod { arrangement_exact, pattern_sampling_lower_bound };

struct RegionCensus {
  std::size_t region_count = 0;
  std::vector<ActivationPattern> patterns;  // sorted, distinct
  CensusMethod method = CensusMethod::arrangement_exact;
  bool is_lower_bound = false;
  std::size_t samples = 0;
};

struct CensusOptions {
  // Unset: arrangement when possible (depth one, d <= 2), sampling otherwise.
  std::optional<CensusMethod> method;
  std::size_t samples = 100000;
  std::uint64_t seed = 0;
  unsigned workers = 0;
};

RegionCensus region_count_exact(const Network& net, const Domain& domain, const CensusOptions& options = {});

// Distinct patterns over `samples` uniform draws from the domain.
RegionCensus region_count_sampled(const Network& net, const Domain& domain, std::size_t samples,
                                  std::uint64_t seed, unsigned workers = 0);

struct GridDensity {
  double value = 0.0;
  std::size_t grid_points = 0;
  std::size_t catastrophic_points = 0;
  double step = 0.0;
  // Depth-one distances are exact; deeper nets use the probe bound and the
  // density is a lower bound.
  bool is_lower_bound = false;
};

// Fraction of cell-centred grid points inside the domain whose distance to an
// activation boundary is <= delta. Requires d <= 2 and step <= delta / 10.
// Rows are processed in independent tiles whose integer counts are summed, so
// the result does not depend on the worker count.
GridDensity exact_kink_density(const Network& net, const Domain& domain, double delta, double step,
                               unsigned workers = 0);

// Area of {x in the disk : dist(x, line) <= delta} from circular-segment
// formulas. d must be 2.
double strip_disk_area(double delta, const Domain& disk, const Hyperplane& line);

// Depth-one relu net d -> N -> 1 whose first-layer hyperplanes all cut the
// domain: unit normals uniform on the sphere, signed offsets from the centre
// uniform on (-R, R). Output weights are 1.
Network random_through_disk_network(std::size_t N, const Domain& domain, std::uint64_t seed);

}  // namespace cdlab::regionlab
