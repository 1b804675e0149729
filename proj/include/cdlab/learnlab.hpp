#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "cdlab/catlab.hpp"
#include "cdlab/netcore.hpp"

// Toy datasets, a plain SGD trainer, gradient attacks and a histogram
// mutual-information estimator.
namespace cdlab::learnlab {

struct Dataset {
  Matrix inputs;                    // n x d
  std::vector<std::size_t> labels;  // classification targets, empty for regression
  Matrix values;                    // regression targets (n x k), empty for classification
  std::size_t classes = 0;
  // Generator id and parameters, written to the CSV header.
  std::string generator = "custom";
  std::map<std::string, std::string> params;

  std::size_t size() const noexcept { return inputs.rows(); }
  std::size_t dim() const noexcept { return inputs.cols(); }
  bool is_classification() const noexcept { return !labels.empty(); }
  std::span<const double> x(std::size_t i) const { return inputs.row(i); }
  // Class index for softmax_xent; one-hot (classification) or the value row for mse.
  Target target(std::size_t i, Loss loss) const;
  // Throws PreconditionError on empty data, non-finite entries or labels out of range.
  void validate() const;
};

enum class DatasetKind { two_moons, xor_grid, random_teacher };

struct DatasetSpec {
  DatasetKind kind = DatasetKind::two_moons;
  std::size_t n = 1000;
  double noise = 0.1;
  // random_teacher only: inputs uniform in [-1, 1]^d, labels argmax of the teacher.
  NetworkShape teacher;
  std::uint64_t teacher_seed = 0;
};

// two_moons: label alternates with the index; class 0 on (cos t, sin t),
// class 1 on (1 - cos t, 1/2 - sin t), t ~ U[0, pi], plus N(0, noise^2) per coordinate.
// xor_grid: clusters at (+-1, +-1) with N(0, noise^2) spread; label is 1 when the
// cluster's coordinate signs differ.
Dataset make_dataset(const DatasetSpec& spec, std::uint64_t seed);
Dataset make_dataset_from_teacher(const Network& teacher, std::size_t n, std::uint64_t seed);

// CSV with a "# generator=... key=value" header line, then x0..x{d-1} and a
// label (or y0..y{k-1}) column set.
std::string dataset_to_csv(const Dataset& data);
Dataset dataset_from_csv(std::string_view text);
Dataset load_dataset(const std::filesystem::path& path);
void save_dataset(const std::filesystem::path& path, const Dataset& data);

struct TrainOptions {
  double lr = 0.1;
  std::size_t epochs = 100;
  std::size_t batch = 32;
  std::uint64_t seed = 0;
  Loss loss = Loss::softmax_xent;
};

struct TrainResult {
  Network network;
  // Mean per-sample loss over each epoch, each sample evaluated just before
  // the update of its batch.
  std::vector<double> loss_curve;
};

// Mini-batch SGD. Every epoch reshuffles with a Fisher-Yates pass from one
// seeded stream; batch gradients are summed in batch order. Throws
// NumericError naming the epoch if the loss becomes non-finite.
TrainResult train_sgd(const Network& net, const Dataset& data, const TrainOptions& options);

double accuracy(const Network& net, const Dataset& data);

// Frozen named training setups.
struct FixtureSpec {
  std::string name;
  DatasetSpec data;
  std::uint64_t data_seed = 0;
  std::vector<std::size_t> hidden;
  Activation activation = Activation::relu();
  double init_scale = 1.0;
  TrainOptions train;
};

FixtureSpec fixture_spec(std::string_view name);

struct TrainedFixture {
  FixtureSpec spec;
  Dataset data;
  Network initial;
  Network trained;
  std::vector<double> loss_curve;
};

TrainedFixture build_fixture(const FixtureSpec& spec);

enum class ThreatNorm { l2, linf };

// Closest point of the norm ball around `center` to y.
Vector project_onto_ball(std::span<const double> center, std::span<const double> y, double radius,
                         ThreatNorm norm);

struct AttackResult {
  bool success = false;
  Vector x_adv;
  double perturbation_norm = 0.0;  // L2 distance to x
  double output_change = 0.0;      // L2 change of the logits
  std::size_t steps_used = 0;
  bool jittered = false;           // a kink forced the 1e-9 jitter retry
};

inline constexpr double kKinkJitter = 1e-9;

// x + eps * sign(grad_x softmax_xent). Success: the predicted class changes.
AttackResult fgsm(const Network& net, std::span<const double> x, std::size_t label, double eps_step,
                  std::uint64_t seed = 0);

struct PgdOptions {
  std::size_t steps = 20;
  double step_size = 0.0;  // 0: 2.5 * delta / steps
  ThreatNorm norm = ThreatNorm::l2;
};

// Projected ascent on softmax_xent from x with normalized gradient steps.
// Stops at the first iterate whose predicted class differs from that of x;
// otherwise returns the highest-loss iterate.
AttackResult pgd(const Network& net, std::span<const double> x, std::size_t label, double delta,
                 const PgdOptions& options = {}, std::uint64_t seed = 0);

enum class AttackMethod { fgsm, pgd };

struct AttackOptions {
  PgdOptions pgd;
  std::uint64_t seed = 0;
  double confidence = 0.99;
  unsigned workers = 0;
};

// Share of initially correct points that the attack flips, with a Wilson
// interval. n_samples is the number of correct points.
catlab::DensityEstimate attack_success_rate(const Network& net, const Dataset& data, AttackMethod method,
                                            double delta, const AttackOptions& options = {});

struct MIEstimate {
  double i_xy_bits = 0.0;
  std::size_t bins = 0;
  std::size_t n = 0;
  std::size_t x_cells = 0;
  std::size_t y_values = 0;
  double bias_bound_bits = 0.0;
  double h_x_bits = 0.0;
  double h_y_bits = 0.0;
};

// Plug-in I(X;Y) in bits with X quantized into equal-width bins over the data
// bounding box. Rejects d > 3 and bins^d > n / 5.
MIEstimate mutual_information_plugin(const Dataset& data, std::size_t bins_per_dim);

}  // namespace cdlab::learnlab
