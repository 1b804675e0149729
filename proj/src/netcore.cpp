#include "cdlab/netcore.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <sstream>

#include "cdlab/errors.hpp"
#include "cdlab/rng.hpp"

namespace cdlab {

// ---------------------------------------------------------------------------
// Activation

Activation::Activation(ActivationType type, Vector breakpoints, Vector slopes)
    : type_(type), breakpoints_(std::move(breakpoints)), slopes_(std::move(slopes)) {}

Activation Activation::linear() { return {ActivationType::linear, {}, {1.0}}; }
Activation Activation::relu() { return {ActivationType::relu, {0.0}, {0.0, 1.0}}; }
Activation Activation::tanh() { return {ActivationType::tanh, {}, {}}; }
Activation Activation::sigmoid() { return {ActivationType::sigmoid, {}, {}}; }

Activation Activation::leaky_relu(double slope) {
  if (!std::isfinite(slope)) throw PreconditionError("leaky_relu slope must be finite");
  return {ActivationType::leaky_relu, {0.0}, {slope, 1.0}};
}

Activation Activation::hard_piecewise(Vector breakpoints, Vector slopes) {
  if (slopes.size() != breakpoints.size() + 1)
    throw PreconditionError("hard_piecewise: need exactly one more slope than breakpoints");
  for (std::size_t i = 0; i < breakpoints.size(); ++i) {
    if (!std::isfinite(breakpoints[i])) throw PreconditionError("hard_piecewise: non-finite breakpoint");
    if (i > 0 && !(breakpoints[i] > breakpoints[i - 1]))
      throw PreconditionError("hard_piecewise: breakpoints must be strictly increasing");
  }
  for (double s : slopes)
    if (!std::isfinite(s)) throw PreconditionError("hard_piecewise: non-finite slope");
  return {ActivationType::hard_piecewise, std::move(breakpoints), std::move(slopes)};
}

int Activation::pieces() const noexcept { return static_cast<int>(breakpoints_.size()) + 1; }

bool Activation::is_piecewise_linear() const noexcept {
  return type_ != ActivationType::tanh && type_ != ActivationType::sigmoid;
}

int Activation::segment(double z) const noexcept {
  return static_cast<int>(std::upper_bound(breakpoints_.begin(), breakpoints_.end(), z) -
                          breakpoints_.begin());
}

double Activation::apply(double z) const noexcept {
  switch (type_) {
    case ActivationType::linear:
      return z;
    case ActivationType::relu:
      return z > 0.0 ? z : 0.0;
    case ActivationType::leaky_relu:
      return z >= 0.0 ? z : slopes_[0] * z;
    case ActivationType::tanh:
      return std::tanh(z);
    case ActivationType::sigmoid:
      return 1.0 / (1.0 + std::exp(-z));
    case ActivationType::hard_piecewise: {
      double v = slopes_[0] * z;
      for (std::size_t i = 0; i < breakpoints_.size(); ++i)
        v += (slopes_[i + 1] - slopes_[i]) * std::max(0.0, z - breakpoints_[i]);
      return v;
    }
  }
  return z;
}

double Activation::derivative(double z) const noexcept {
  switch (type_) {
    case ActivationType::tanh: {
      const double t = std::tanh(z);
      return 1.0 - t * t;
    }
    case ActivationType::sigmoid: {
      const double s = 1.0 / (1.0 + std::exp(-z));
      return s * (1.0 - s);
    }
    default:
      return slopes_[static_cast<std::size_t>(segment(z))];
  }
}

namespace {

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

std::vector<double> parse_double_list(std::string_view text, std::string_view what) {
  std::vector<double> out;
  if (text.empty()) return out;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t comma = text.find(',', pos);
    const std::string_view item = text.substr(pos, comma == std::string_view::npos ? text.size() - pos : comma - pos);
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
    if (ec != std::errc() || ptr != item.data() + item.size() || item.empty())
      throw PreconditionError("bad number '" + std::string(item) + "' in " + std::string(what));
    out.push_back(v);
    if (comma == std::string_view::npos) break;
    pos = comma + 1;
  }
  return out;
}

}  // namespace

std::string Activation::to_string() const {
  switch (type_) {
    case ActivationType::linear:
      return "linear";
    case ActivationType::relu:
      return "relu";
    case ActivationType::tanh:
      return "tanh";
    case ActivationType::sigmoid:
      return "sigmoid";
    case ActivationType::leaky_relu:
      return "leaky_relu:" + format_double(slopes_[0]);
    case ActivationType::hard_piecewise: {
      std::string s = "hard_piecewise:";
      for (std::size_t i = 0; i < breakpoints_.size(); ++i) s += (i ? "," : "") + format_double(breakpoints_[i]);
      s += ";";
      for (std::size_t i = 0; i < slopes_.size(); ++i) s += (i ? "," : "") + format_double(slopes_[i]);
      return s;
    }
  }
  return "linear";
}

Activation Activation::parse(std::string_view text) {
  const std::size_t colon = text.find(':');
  const std::string_view name = text.substr(0, colon);
  const std::string_view params = colon == std::string_view::npos ? std::string_view{} : text.substr(colon + 1);
  const bool has_params = colon != std::string_view::npos;
  auto no_params = [&](Activation a) {
    if (has_params) throw PreconditionError("activation '" + std::string(name) + "' takes no parameters");
    return a;
  };
  if (name == "linear") return no_params(linear());
  if (name == "relu") return no_params(relu());
  if (name == "tanh") return no_params(tanh());
  if (name == "sigmoid") return no_params(sigmoid());
  if (name == "leaky_relu") {
    const auto v = parse_double_list(params, "leaky_relu slope");
    if (v.size() != 1) throw PreconditionError("leaky_relu needs exactly one slope");
    return leaky_relu(v[0]);
  }
  if (name == "hard_piecewise") {
    const std::size_t semi = params.find(';');
    if (semi == std::string_view::npos)
      throw PreconditionError("hard_piecewise needs '<breakpoints>;<slopes>'");
    return hard_piecewise(parse_double_list(params.substr(0, semi), "breakpoints"),
                          parse_double_list(params.substr(semi + 1), "slopes"));
  }
  throw PreconditionError("unknown activation '" + std::string(name) + "'");
}

// ---------------------------------------------------------------------------
// Network

Network::Network(std::size_t input_dim, std::vector<Layer> layers)
    : input_dim_(input_dim), layers_(std::move(layers)) {
  if (input_dim_ == 0) throw PreconditionError("network input dimension must be positive");
  if (layers_.empty()) throw PreconditionError("network needs at least one layer");
  std::size_t fan_in = input_dim_;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const Layer& layer = layers_[l];
    if (layer.weights.cols() != fan_in)
      throw PreconditionError("layer " + std::to_string(l) + ": expected " + std::to_string(fan_in) +
                              " inputs, got " + std::to_string(layer.weights.cols()));
    if (layer.weights.rows() == 0) throw PreconditionError("layer " + std::to_string(l) + " has no units");
    if (layer.bias.size() != layer.weights.rows())
      throw PreconditionError("layer " + std::to_string(l) + ": bias length does not match width");
    for (double v : layer.weights.data())
      if (!std::isfinite(v)) throw PreconditionError("non-finite weight in layer " + std::to_string(l));
    for (double v : layer.bias)
      if (!std::isfinite(v)) throw PreconditionError("non-finite bias in layer " + std::to_string(l));
    fan_in = layer.weights.rows();
  }
}

std::size_t Network::parameter_count() const noexcept {
  std::size_t c = 0;
  for (const auto& layer : layers_) c += layer.weights.rows() * layer.weights.cols() + layer.bias.size();
  return c;
}

std::size_t Network::neuron_count() const noexcept {
  std::size_t n = 0;
  for (std::size_t l = 0; l + 1 < layers_.size(); ++l) n += layers_[l].bias.size();
  return n;
}

std::size_t Network::kink_unit_count() const noexcept {
  std::size_t n = 0;
  for (const auto& layer : layers_)
    if (layer.activation.has_kinks()) n += layer.bias.size();
  return n;
}

bool Network::is_piecewise_linear() const noexcept {
  return std::all_of(layers_.begin(), layers_.end(),
                     [](const Layer& l) { return l.activation.is_piecewise_linear(); });
}

bool Network::is_depth_one() const noexcept {
  if (!is_piecewise_linear()) return false;
  for (std::size_t l = 1; l < layers_.size(); ++l)
    if (layers_[l].activation.has_kinks()) return false;
  return true;
}

Vector Network::parameters() const {
  Vector p;
  p.reserve(parameter_count());
  for (const auto& layer : layers_) {
    p.insert(p.end(), layer.weights.data().begin(), layer.weights.data().end());
    p.insert(p.end(), layer.bias.begin(), layer.bias.end());
  }
  return p;
}

Network Network::with_parameters(std::span<const double> params) const {
  if (params.size() != parameter_count()) throw PreconditionError("parameter vector has wrong length");
  std::vector<Layer> layers = layers_;
  std::size_t k = 0;
  for (auto& layer : layers) {
    for (double& w : layer.weights.data()) w = params[k++];
    for (double& b : layer.bias) b = params[k++];
  }
  return Network(input_dim_, std::move(layers));
}

Domain::Domain(Vector center, double radius) : center_(std::move(center)), radius_(radius) {
  if (center_.empty()) throw PreconditionError("domain dimension must be positive");
  if (!(radius_ > 0.0) || !std::isfinite(radius_)) throw PreconditionError("domain radius must be positive and finite");
  for (double c : center_)
    if (!std::isfinite(c)) throw PreconditionError("domain center must be finite");
}

bool Domain::contains(std::span<const double> x) const {
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += (x[i] - center_[i]) * (x[i] - center_[i]);
  return s <= radius_ * radius_;
}

Vector Domain::sample(Rng& rng) const {
  const std::size_t d = dim();
  Vector x(d);
  double n2 = 0.0;
  do {
    n2 = 0.0;
    for (double& v : x) {
      v = rng.normal();
      n2 += v * v;
    }
  } while (n2 == 0.0);
  const double r = radius_ * std::pow(rng.uniform(), 1.0 / static_cast<double>(d)) / std::sqrt(n2);
  for (std::size_t i = 0; i < d; ++i) x[i] = center_[i] + r * x[i];
  return x;
}

std::vector<int> ActivationPattern::flat() const {
  std::vector<int> out;
  for (const auto& layer : branches) out.insert(out.end(), layer.begin(), layer.end());
  return out;
}

// ---------------------------------------------------------------------------
// Evaluation

namespace {

void check_input(const Network& net, std::span<const double> x) {
  if (x.size() != net.input_dim())
    throw PreconditionError("input has dimension " + std::to_string(x.size()) + ", network expects " +
                            std::to_string(net.input_dim()));
  for (double v : x)
    if (!std::isfinite(v)) throw PreconditionError("non-finite input");
}

// Pre-activations z_l and activations a_l for every layer (a_{-1} = x).
struct Trace {
  std::vector<Vector> pre;
  std::vector<Vector> post;
  std::vector<Vector> scale;  // |b| + sum |w a| per unit, for the kink test
};

Trace run_trace(const Network& net, std::span<const double> x, bool with_scale) {
  Trace t;
  const auto& layers = net.layers();
  t.pre.reserve(layers.size());
  t.post.reserve(layers.size());
  Vector input(x.begin(), x.end());
  for (const auto& layer : layers) {
    const std::size_t out = layer.weights.rows();
    Vector z(out), a(out), s;
    if (with_scale) s.resize(out);
    for (std::size_t j = 0; j < out; ++j) {
      const auto w = layer.weights.row(j);
      double acc = layer.bias[j];
      double mag = std::abs(layer.bias[j]);
      for (std::size_t k = 0; k < w.size(); ++k) {
        acc += w[k] * input[k];
        if (with_scale) mag += std::abs(w[k] * input[k]);
      }
      z[j] = acc;
      a[j] = layer.activation.apply(acc);
      if (with_scale) s[j] = mag;
    }
    t.pre.push_back(std::move(z));
    if (with_scale) t.scale.push_back(std::move(s));
    input = a;
    t.post.push_back(std::move(a));
  }
  return t;
}

bool near_breakpoint(const Activation& act, double z, double scale, double tol) {
  for (double b : act.breakpoints())
    if (std::abs(z - b) <= tol * scale) return true;
  return false;
}

bool trace_at_kink(const Network& net, const Trace& t, double tol) {
  const auto& layers = net.layers();
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& act = layers[l].activation;
    if (!act.has_kinks()) continue;
    for (std::size_t j = 0; j < t.pre[l].size(); ++j)
      if (near_breakpoint(act, t.pre[l][j], t.scale[l][j], tol)) return true;
  }
  return false;
}

}  // namespace

Vector forward(const Network& net, std::span<const double> x) {
  check_input(net, x);
  Vector input(x.begin(), x.end());
  for (const auto& layer : net.layers()) {
    Vector a(layer.weights.rows());
    for (std::size_t j = 0; j < a.size(); ++j)
      a[j] = layer.activation.apply(layer.bias[j] + dot(layer.weights.row(j), input));
    input = std::move(a);
  }
  return input;
}

PatternedOutput forward_with_pattern(const Network& net, std::span<const double> x) {
  if (!net.is_piecewise_linear())
    throw PreconditionError("activation pattern undefined for networks with smooth units");
  check_input(net, x);
  PatternedOutput result;
  Vector input(x.begin(), x.end());
  for (const auto& layer : net.layers()) {
    const bool kinked = layer.activation.has_kinks();
    std::vector<int> branches;
    Vector a(layer.weights.rows());
    for (std::size_t j = 0; j < a.size(); ++j) {
      const double z = layer.bias[j] + dot(layer.weights.row(j), input);
      a[j] = layer.activation.apply(z);
      if (kinked) branches.push_back(layer.activation.segment(z));
    }
    result.pattern.branches.push_back(std::move(branches));
    input = std::move(a);
  }
  result.output = std::move(input);
  return result;
}

InputJacobian jacobian_input(const Network& net, std::span<const double> x, double kink_tolerance) {
  check_input(net, x);
  const Trace t = run_trace(net, x, true);
  Matrix jac = Matrix::identity(net.input_dim());
  const auto& layers = net.layers();
  for (std::size_t l = 0; l < layers.size(); ++l) {
    Matrix next = matmul(layers[l].weights, jac);
    for (std::size_t j = 0; j < next.rows(); ++j) {
      const double slope = layers[l].activation.derivative(t.pre[l][j]);
      for (double& v : next.row(j)) v *= slope;
    }
    jac = std::move(next);
  }
  return {std::move(jac), trace_at_kink(net, t, kink_tolerance)};
}

Vector softmax(std::span<const double> logits) {
  const double m = *std::max_element(logits.begin(), logits.end());
  Vector p(logits.size());
  double s = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) {
    p[k] = std::exp(logits[k] - m);
    s += p[k];
  }
  for (double& v : p) v /= s;
  return p;
}

std::size_t argmax(std::span<const double> v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

namespace {

// dL/d(output) and the loss value.
std::pair<double, Vector> output_loss(std::span<const double> out, const Target& target, Loss loss) {
  if (loss == Loss::softmax_xent) {
    const auto* cls = std::get_if<std::size_t>(&target);
    if (!cls) throw PreconditionError("softmax_xent needs a class-index target");
    if (*cls >= out.size()) throw PreconditionError("class index out of range for the output head");
    const double m = *std::max_element(out.begin(), out.end());
    double s = 0.0;
    for (double v : out) s += std::exp(v - m);
    const double log_z = m + std::log(s);
    Vector grad = softmax(out);
    grad[*cls] -= 1.0;
    return {log_z - out[*cls], std::move(grad)};
  }
  const auto* vec = std::get_if<Vector>(&target);
  if (!vec) throw PreconditionError("mse needs a vector target");
  if (vec->size() != out.size()) throw PreconditionError("mse target length does not match the output head");
  double l = 0.0;
  Vector grad(out.size());
  for (std::size_t k = 0; k < out.size(); ++k) {
    const double r = out[k] - (*vec)[k];
    l += r * r;
    grad[k] = 2.0 * r;
  }
  return {l, std::move(grad)};
}

}  // namespace

double loss_value(const Network& net, std::span<const double> x, const Target& target, Loss loss) {
  return output_loss(forward(net, x), target, loss).first;
}

LossGradient loss_gradient(const Network& net, std::span<const double> x, const Target& target, Loss loss) {
  check_input(net, x);
  const Trace t = run_trace(net, x, true);
  const auto& layers = net.layers();
  auto [value, upstream] = output_loss(t.post.back(), target, loss);

  LossGradient g;
  g.loss = value;
  g.at_kink = trace_at_kink(net, t, kKinkTolerance);
  g.params.assign(net.parameter_count(), 0.0);

  // Offsets of each layer's block in the canonical order.
  std::vector<std::size_t> offset(layers.size());
  std::size_t off = 0;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    offset[l] = off;
    off += layers[l].weights.rows() * layers[l].weights.cols() + layers[l].bias.size();
  }

  for (std::size_t l = layers.size(); l-- > 0;) {
    const Layer& layer = layers[l];
    const std::size_t out = layer.weights.rows();
    const std::size_t in = layer.weights.cols();
    Vector delta(out);
    for (std::size_t j = 0; j < out; ++j) delta[j] = upstream[j] * layer.activation.derivative(t.pre[l][j]);
    const std::span<const double> prev = l == 0 ? x : std::span<const double>(t.post[l - 1]);
    double* w_grad = g.params.data() + offset[l];
    double* b_grad = w_grad + out * in;
    for (std::size_t j = 0; j < out; ++j) {
      for (std::size_t k = 0; k < in; ++k) w_grad[j * in + k] = delta[j] * prev[k];
      b_grad[j] = delta[j];
    }
    upstream = matvec_transposed(layer.weights, delta);
  }
  g.input = std::move(upstream);
  return g;
}

Vector gradient_params(const Network& net, std::span<const double> x, const Target& target, Loss loss) {
  return loss_gradient(net, x, target, loss).params;
}

// ---------------------------------------------------------------------------
// Construction

NetworkShape mlp_shape(std::size_t input_dim, const std::vector<std::size_t>& hidden, std::size_t output_dim,
                       const Activation& hidden_activation) {
  NetworkShape shape;
  shape.input_dim = input_dim;
  for (std::size_t w : hidden) {
    shape.widths.push_back(w);
    shape.activations.push_back(hidden_activation);
  }
  shape.widths.push_back(output_dim);
  shape.activations.push_back(Activation::linear());
  return shape;
}

Network random_network(const NetworkShape& shape, double weight_scale, std::uint64_t seed) {
  if (shape.widths.empty()) throw PreconditionError("network shape has no layers");
  if (shape.widths.size() != shape.activations.size())
    throw PreconditionError("network shape needs one activation per layer");
  if (!(weight_scale >= 0.0) || !std::isfinite(weight_scale))
    throw PreconditionError("weight_scale must be finite and non-negative");
  Rng rng(seed);
  std::vector<Layer> layers;
  std::size_t fan_in = shape.input_dim;
  for (std::size_t l = 0; l < shape.widths.size(); ++l) {
    const std::size_t out = shape.widths[l];
    if (out == 0) throw PreconditionError("layer widths must be positive");
    Layer layer{Matrix(out, fan_in), Vector(out), shape.activations[l]};
    const double std_dev = weight_scale / std::sqrt(static_cast<double>(fan_in));
    for (double& w : layer.weights.data()) w = std_dev * rng.normal();
    for (double& b : layer.bias) b = rng.uniform(-weight_scale, weight_scale);
    layers.push_back(std::move(layer));
    fan_in = out;
  }
  return Network(shape.input_dim, std::move(layers));
}

}  // namespace cdlab
