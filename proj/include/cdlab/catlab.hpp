#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "cdlab/netcore.hpp"
#include "cdlab/regionlab.hpp"

// Monte Carlo estimators of catastrophe density and the random-network
// genericity sweep.
namespace cdlab::catlab {

enum class OutputNorm { l2, linf, logit_gap };

struct CatastropheCriterion {
  enum class Kind {
    kink,         // an activation boundary lies within delta
    output_jump,  // some x' within delta moves the output by >= epsilon
    class_flip,   // an attack changes the predicted class (learnlab attack rates)
  };
  Kind kind = Kind::kink;
  double epsilon = 0.0;
  OutputNorm norm = OutputNorm::l2;

  static CatastropheCriterion kink() { return {}; }
  static CatastropheCriterion output_jump(double epsilon, OutputNorm norm = OutputNorm::l2);
  static CatastropheCriterion class_flip() { return {Kind::class_flip, 0.0, OutputNorm::logit_gap}; }
};

struct DensityEstimate {
  double rho = 0.0;
  double ci_low = 0.0;
  double ci_high = 1.0;
  double confidence = 0.99;
  std::size_t n_samples = 0;
  std::size_t hits = 0;
  CatastropheCriterion criterion;
  std::uint64_t seed = 0;
  // Deep-net kink densities and output-jump searches only find witnesses, so
  // the true density is at least rho.
  bool is_lower_bound = false;
};

struct Interval {
  double low = 0.0;
  double high = 1.0;
};

// Two-sided Wilson score interval for hits/n.
Interval wilson_interval(std::size_t hits, std::size_t n, double confidence);
// Standard-normal quantile.
double normal_quantile(double p);

struct SamplingOptions {
  std::size_t samples = 100000;
  std::uint64_t seed = 0;
  double confidence = 0.99;
  unsigned workers = 0;
};

// Points per chunk; chunk c draws from Rng(derive_seed(seed, c)), so the
// sample set depends only on (seed, samples).
inline constexpr std::size_t kChunkSize = 4096;

// The exact sample set used by the estimators for these options.
std::vector<Vector> sample_points(const Domain& domain, std::size_t samples, std::uint64_t seed);

// Kink criterion at one point: distance_to_boundary(x) <= delta. Exact for
// depth-one networks; deeper networks use the probe bound.
bool is_kink_catastrophic(const Network& net, std::span<const double> x, double delta,
                          std::uint64_t probe_seed = 0);

// Output-jump search inner loop budget.
struct InnerSearch {
  std::size_t budget = 20;         // projected ascent steps
  std::size_t random_starts = 8;   // random directions tried on the delta-sphere
};

struct InstabilityWitness {
  bool found = false;
  Vector x_prime;
  double change = 0.0;
};

// Looks for x' with |x' - x|_2 <= delta and output change >= epsilon. Starts
// are the top singular direction of the input Jacobian (both signs), both
// signs of every coordinate axis and `random_starts` random directions; the
// best start is refined by normalized gradient ascent projected on the ball.
InstabilityWitness find_output_jump(const Network& net, std::span<const double> x, double epsilon, double delta,
                                    OutputNorm norm, const InnerSearch& search, std::uint64_t seed);

DensityEstimate estimate_kink_density(const Network& net, const Domain& domain, double delta,
                                      const SamplingOptions& options);

DensityEstimate estimate_output_instability(const Network& net, const Domain& domain, double epsilon, double delta,
                                            OutputNorm norm, const InnerSearch& search,
                                            const SamplingOptions& options);

// mu_safe = 1 - rho for the matching criterion, with the complementary interval.
DensityEstimate estimate_safe_measure(const Network& net, const Domain& domain, const CatastropheCriterion& criterion,
                                      double delta, const SamplingOptions& options, const InnerSearch& search = {});

struct MannKendall {
  double s = 0.0;
  double variance = 0.0;
  double z = 0.0;
  double p_value = 1.0;  // two-sided
};

// Kendall S statistic of y against x (pairs tied in x contribute nothing),
// with the tie-corrected null variance and the continuity-corrected normal
// approximation.
MannKendall mann_kendall(std::span<const double> x, std::span<const double> y);

struct SweepRow {
  std::size_t width = 0;
  std::size_t trials = 0;
  std::size_t above = 0;
  double fraction = 0.0;
  Interval ci;
  double mean_rho = 0.0;
  std::vector<double> rhos;
};

struct SweepResult {
  std::vector<SweepRow> rows;
  // Trend of the per-trial above-threshold indicator against width.
  MannKendall trend;
  bool fractions_non_decreasing = true;
};

struct SweepOptions {
  std::vector<std::size_t> widths;
  std::size_t trials = 30;
  double delta = 0.01;
  double threshold = 0.9;
  std::size_t samples_per_estimate = 20000;
  double weight_scale = 1.0;
  double confidence = 0.99;
  std::uint64_t seed = 0;
  unsigned workers = 0;
};

// For every width N draws `trials` random depth-one relu networks d -> N -> 1
// (N = 0 gives a purely linear net), estimates rho for each and reports the
// fraction with rho >= threshold and rho > 0.
SweepResult genericity_sweep(const Domain& domain, const SweepOptions& options);

}  // namespace cdlab::catlab
