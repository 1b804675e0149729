#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "cdlab/linalg.hpp"
#include "cdlab/rng.hpp"

namespace cdlab {

// A pre-activation within this relative distance of a breakpoint counts as
// sitting on the kink. Scale is |b| + sum |w_k a_k| of the unit.
inline constexpr double kKinkTolerance = 1e-12;

enum class ActivationType { linear, relu, leaky_relu, hard_piecewise, tanh, sigmoid };

// Scalar activation. Piecewise-linear kinds carry their breakpoints and one
// slope per segment; segment i covers [breakpoint[i-1], breakpoint[i]).
//
// hard_piecewise is the continuous function
//   phi(z) = s_0 z + sum_i (s_i - s_{i-1}) max(0, z - b_i)
// so relu == hard_piecewise({0}, {0, 1}).
class Activation {
 public:
  static Activation linear();
  static Activation relu();
  static Activation leaky_relu(double slope);
  static Activation hard_piecewise(Vector breakpoints, Vector slopes);
  static Activation tanh();
  static Activation sigmoid();

  // Text form used by NETV1: "relu", "leaky_relu:0.01", "hard_piecewise:-1,1;0,1,0".
  static Activation parse(std::string_view text);
  std::string to_string() const;

  ActivationType type() const noexcept { return type_; }
  // Number of linear pieces m; 1 for smooth and linear kinds.
  int pieces() const noexcept;
  bool is_piecewise_linear() const noexcept;
  bool has_kinks() const noexcept { return !breakpoints_.empty(); }
  const Vector& breakpoints() const noexcept { return breakpoints_; }
  const Vector& slopes() const noexcept { return slopes_; }

  // Index of the linear piece containing z (number of breakpoints <= z), so a
  // point exactly on a breakpoint belongs to the right-hand piece.
  int segment(double z) const noexcept;
  double apply(double z) const noexcept;
  // Right-hand derivative at breakpoints.
  double derivative(double z) const noexcept;

  friend bool operator==(const Activation&, const Activation&) = default;

 private:
  Activation(ActivationType type, Vector breakpoints, Vector slopes);

  ActivationType type_ = ActivationType::linear;
  Vector breakpoints_;
  Vector slopes_;
};

struct Layer {
  Matrix weights;  // out x in
  Vector bias;     // out
  Activation activation = Activation::linear();

  friend bool operator==(const Layer&, const Layer&) = default;
};

// Feedforward network. Immutable after construction; outputs are the raw
// affine (post-activation) values of the last layer, no softmax.
class Network {
 public:
  Network(std::size_t input_dim, std::vector<Layer> layers);

  std::size_t input_dim() const noexcept { return input_dim_; }
  std::size_t output_dim() const noexcept { return layers_.back().bias.size(); }
  const std::vector<Layer>& layers() const noexcept { return layers_; }

  // Complexity C: total number of weights and biases.
  std::size_t parameter_count() const noexcept;
  // N: total width of all layers except the output layer.
  std::size_t neuron_count() const noexcept;
  // Number of units whose activation has at least one kink.
  std::size_t kink_unit_count() const noexcept;

  bool is_piecewise_linear() const noexcept;
  // Piecewise-linear and only the first layer has kinks: every activation
  // boundary is then a hyperplane in input space.
  bool is_depth_one() const noexcept;

  // Canonical flattening: layer-major; within a layer the weights row-major
  // (out x in), then the bias. Fisher indices refer to this order.
  Vector parameters() const;
  Network with_parameters(std::span<const double> params) const;

  friend bool operator==(const Network&, const Network&) = default;

 private:
  std::size_t input_dim_;
  std::vector<Layer> layers_;
};

// Euclidean ball used as the input domain.
class Domain {
 public:
  Domain(Vector center, double radius);
  static Domain ball(std::size_t dim, double radius) { return Domain(Vector(dim, 0.0), radius); }

  std::size_t dim() const noexcept { return center_.size(); }
  const Vector& center() const noexcept { return center_; }
  double radius() const noexcept { return radius_; }
  bool contains(std::span<const double> x) const;

  // Uniform draw from the ball: normalized Gaussian direction scaled by
  // radius * u^(1/d).
  Vector sample(Rng& rng) const;

 private:
  Vector center_;
  double radius_;
};

// Branch index of every kinked unit, grouped by layer. Layers without kinks
// contribute an empty list. Two inputs with equal patterns lie in the same
// linear region.
struct ActivationPattern {
  std::vector<std::vector<int>> branches;

  std::vector<int> flat() const;
  friend auto operator<=>(const ActivationPattern&, const ActivationPattern&) = default;
};

Vector forward(const Network& net, std::span<const double> x);

struct PatternedOutput {
  Vector output;
  ActivationPattern pattern;
};
// Rejects networks with smooth (tanh/sigmoid) units.
PatternedOutput forward_with_pattern(const Network& net, std::span<const double> x);

struct InputJacobian {
  Matrix jacobian;  // out x d
  // Some unit is within tolerance of a breakpoint; the right-hand branch was used.
  bool at_kink = false;
};
InputJacobian jacobian_input(const Network& net, std::span<const double> x,
                             double kink_tolerance = kKinkTolerance);

enum class Loss { softmax_xent, mse };

// Class index for softmax_xent, target vector for mse.
using Target = std::variant<std::size_t, Vector>;

Vector softmax(std::span<const double> logits);
std::size_t argmax(std::span<const double> v);

// softmax_xent: -log softmax(f)_y.  mse: sum_k (f_k - t_k)^2.
double loss_value(const Network& net, std::span<const double> x, const Target& target, Loss loss);

struct LossGradient {
  double loss = 0.0;
  Vector params;  // dL/dtheta in canonical order
  Vector input;   // dL/dx
  bool at_kink = false;
};
LossGradient loss_gradient(const Network& net, std::span<const double> x, const Target& target,
                           Loss loss);

// Backpropagated dL/dtheta in canonical order.
Vector gradient_params(const Network& net, std::span<const double> x, const Target& target, Loss loss);

struct NetworkShape {
  std::size_t input_dim = 0;
  std::vector<std::size_t> widths;       // one per layer, last is the output width
  std::vector<Activation> activations;   // one per layer
};

// Hidden layers with `hidden` activation, linear output layer.
NetworkShape mlp_shape(std::size_t input_dim, const std::vector<std::size_t>& hidden,
                       std::size_t output_dim, const Activation& hidden_activation);

// Weights ~ N(0, (weight_scale / sqrt(fan_in))^2), biases ~ U[-weight_scale, weight_scale],
// drawn layer by layer (weights row-major, then biases) from Rng(seed).
Network random_network(const NetworkShape& shape, double weight_scale, std::uint64_t seed);

// NETV1 text format.
std::string serialize(const Network& net);
// Throws ParseError (with line/column) on malformed input; never returns a partial network.
Network deserialize(std::string_view text);

Network load_network(const std::filesystem::path& path);
void save_network(const std::filesystem::path& path, const Network& net);

}  // namespace cdlab
