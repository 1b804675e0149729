#include "cdlab/learnlab.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "cdlab/errors.hpp"
#include "cdlab/parallel.hpp"
#include "cdlab/rng.hpp"

namespace cdlab::learnlab {

namespace {

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string format_u64(std::uint64_t v) { return std::to_string(v); }

}  // namespace

Target Dataset::target(std::size_t i, Loss loss) const {
  if (is_classification()) {
    if (loss == Loss::softmax_xent) return labels[i];
    Vector onehot(classes, 0.0);
    onehot[labels[i]] = 1.0;
    return onehot;
  }
  if (loss == Loss::softmax_xent) throw PreconditionError("softmax_xent needs class labels");
  const auto r = values.row(i);
  return Vector(r.begin(), r.end());
}

void Dataset::validate() const {
  if (size() == 0 || dim() == 0) throw PreconditionError("dataset is empty");
  for (double v : inputs.data())
    if (!std::isfinite(v)) throw PreconditionError("dataset has non-finite inputs");
  if (is_classification()) {
    if (labels.size() != size()) throw PreconditionError("one label per row required");
    for (std::size_t y : labels)
      if (y >= classes) throw PreconditionError("label out of range");
  } else {
    if (values.rows() != size()) throw PreconditionError("one target row per input required");
    for (double v : values.data())
      if (!std::isfinite(v)) throw PreconditionError("dataset has non-finite targets");
  }
}

// ---------------------------------------------------------------------------
// Generators

Dataset make_dataset(const DatasetSpec& spec, std::uint64_t seed) {
  if (spec.n == 0) throw PreconditionError("dataset needs n >= 1");
  if (!(spec.noise >= 0.0) || !std::isfinite(spec.noise)) throw PreconditionError("noise must be >= 0");
  if (spec.kind == DatasetKind::random_teacher) {
    const Network teacher = random_network(spec.teacher, 1.0, spec.teacher_seed);
    Dataset d = make_dataset_from_teacher(teacher, spec.n, seed);
    d.params["teacher_seed"] = format_u64(spec.teacher_seed);
    return d;
  }
  Rng rng(derive_seed(seed, "learnlab", "dataset"));
  Dataset d;
  d.inputs = Matrix(spec.n, 2);
  d.labels.resize(spec.n);
  d.classes = 2;
  for (std::size_t i = 0; i < spec.n; ++i) {
    double x = 0.0, y = 0.0;
    std::size_t label = 0;
    if (spec.kind == DatasetKind::two_moons) {
      label = i % 2;
      const double t = std::numbers::pi * rng.uniform();
      if (label == 0) {
        x = std::cos(t);
        y = std::sin(t);
      } else {
        x = 1.0 - std::cos(t);
        y = 0.5 - std::sin(t);
      }
    } else {
      const std::size_t cluster = i % 4;
      const double sx = (cluster & 1) ? 1.0 : -1.0;
      const double sy = (cluster & 2) ? 1.0 : -1.0;
      x = sx;
      y = sy;
      label = (sx > 0) != (sy > 0) ? 1 : 0;
    }
    if (spec.noise > 0.0) {
      x += spec.noise * rng.normal();
      y += spec.noise * rng.normal();
    }
    d.inputs(i, 0) = x;
    d.inputs(i, 1) = y;
    d.labels[i] = label;
  }
  d.generator = spec.kind == DatasetKind::two_moons ? "two_moons" : "xor_grid";
  d.params["n"] = format_u64(spec.n);
  d.params["noise"] = format_double(spec.noise);
  d.params["seed"] = format_u64(seed);
  return d;
}

Dataset make_dataset_from_teacher(const Network& teacher, std::size_t n, std::uint64_t seed) {
  if (n == 0) throw PreconditionError("dataset needs n >= 1");
  if (teacher.output_dim() < 2) throw PreconditionError("teacher needs at least two outputs");
  Rng rng(derive_seed(seed, "learnlab", "teacher-inputs"));
  Dataset d;
  const std::size_t dim = teacher.input_dim();
  d.inputs = Matrix(n, dim);
  d.labels.resize(n);
  d.classes = teacher.output_dim();
  Vector x(dim);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < dim; ++j) x[j] = d.inputs(i, j) = rng.uniform(-1.0, 1.0);
    d.labels[i] = argmax(forward(teacher, x));
  }
  d.generator = "random_teacher";
  d.params["n"] = format_u64(n);
  d.params["seed"] = format_u64(seed);
  return d;
}

// ---------------------------------------------------------------------------
// CSV

std::string dataset_to_csv(const Dataset& data) {
  data.validate();
  std::ostringstream out;
  out << "# generator=" << data.generator;
  for (const auto& [k, v] : data.params) out << ' ' << k << '=' << v;
  if (data.is_classification()) out << " classes=" << data.classes;
  out << '\n';
  for (std::size_t j = 0; j < data.dim(); ++j) out << (j ? "," : "") << 'x' << j;
  if (data.is_classification()) {
    out << ",label\n";
  } else {
    for (std::size_t k = 0; k < data.values.cols(); ++k) out << ",y" << k;
    out << '\n';
  }
  for (std::size_t i = 0; i < data.size(); ++i) {
    for (std::size_t j = 0; j < data.dim(); ++j) out << (j ? "," : "") << format_double(data.inputs(i, j));
    if (data.is_classification()) {
      out << ',' << data.labels[i];
    } else {
      for (std::size_t k = 0; k < data.values.cols(); ++k) out << ',' << format_double(data.values(i, k));
    }
    out << '\n';
  }
  return out.str();
}

Dataset dataset_from_csv(std::string_view text) {
  Dataset d;
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;
  std::size_t line_no = 0;
  bool have_header = false;
  std::size_t declared_classes = 0;
  while (!text.empty()) {
    const std::size_t nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;
    if (line.front() == '#') {
      std::istringstream words{std::string(line.substr(1))};
      std::string word;
      while (words >> word) {
        const auto eq = word.find('=');
        if (eq == std::string::npos) continue;
        const std::string key = word.substr(0, eq), value = word.substr(eq + 1);
        if (key == "generator") {
          d.generator = value;
        } else if (key == "classes") {
          declared_classes = std::stoul(value);
        } else {
          d.params[key] = value;
        }
      }
      continue;
    }
    std::vector<std::string_view> fields;
    std::size_t start = 0;
    for (;;) {
      const std::size_t comma = line.find(',', start);
      fields.push_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
      if (comma == std::string_view::npos) break;
      start = comma + 1;
    }
    if (!have_header) {
      for (auto f : fields) columns.emplace_back(f);
      have_header = true;
      continue;
    }
    if (fields.size() != columns.size()) throw ParseError(line_no, 1, "wrong number of CSV fields");
    std::vector<double> row;
    std::size_t col = 1;
    for (auto f : fields) {
      double v = 0.0;
      const auto res = std::from_chars(f.data(), f.data() + f.size(), v);
      if (res.ec != std::errc{} || res.ptr != f.data() + f.size()) throw ParseError(line_no, col, "bad number");
      row.push_back(v);
      col += f.size() + 1;
    }
    rows.push_back(std::move(row));
  }
  if (!have_header) throw ParseError(line_no, 1, "missing CSV header");
  std::size_t dim = 0;
  while (dim < columns.size() && columns[dim] == "x" + std::to_string(dim)) ++dim;
  if (dim == 0) throw ParseError(1, 1, "CSV needs x0.. columns");
  const bool classification = columns.size() == dim + 1 && columns[dim] == "label";
  if (!classification) {
    for (std::size_t k = dim; k < columns.size(); ++k)
      if (columns[k] != "y" + std::to_string(k - dim)) throw ParseError(1, 1, "unexpected column " + columns[k]);
    if (columns.size() == dim) throw ParseError(1, 1, "CSV has no target columns");
  }
  d.inputs = Matrix(rows.size(), dim);
  if (!classification) d.values = Matrix(rows.size(), columns.size() - dim);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < dim; ++j) d.inputs(i, j) = rows[i][j];
    if (classification) {
      const double y = rows[i][dim];
      if (y < 0 || y != std::floor(y)) throw ParseError(i + 1, 1, "label must be a non-negative integer");
      d.labels.push_back(static_cast<std::size_t>(y));
      d.classes = std::max(d.classes, d.labels.back() + 1);
    } else {
      for (std::size_t k = dim; k < columns.size(); ++k) d.values(i, k - dim) = rows[i][k];
    }
  }
  if (classification) d.classes = std::max(d.classes, declared_classes);
  d.validate();
  return d;
}

Dataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw PreconditionError("cannot open dataset " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return dataset_from_csv(ss.str());
}

void save_dataset(const std::filesystem::path& path, const Dataset& data) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw PreconditionError("cannot write dataset " + path.string());
  out << dataset_to_csv(data);
}

// ---------------------------------------------------------------------------
// Training

TrainResult train_sgd(const Network& net, const Dataset& data, const TrainOptions& options) {
  data.validate();
  if (data.dim() != net.input_dim()) throw PreconditionError("dataset and network input dims differ");
  if (!(options.lr > 0.0)) throw PreconditionError("learning rate must be positive");
  if (options.batch == 0) throw PreconditionError("batch must be >= 1");
  if (data.is_classification() && net.output_dim() != data.classes)
    throw PreconditionError("network outputs must match the class count");

  Vector params = net.parameters();
  Network current = net;
  TrainResult result{net, {}};
  const std::size_t n = data.size();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(derive_seed(options.seed, "learnlab", "shuffle"));
  Vector grad(params.size());

  for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < n; start += options.batch) {
      const std::size_t end = std::min(n, start + options.batch);
      std::fill(grad.begin(), grad.end(), 0.0);
      for (std::size_t b = start; b < end; ++b) {
        const std::size_t i = order[b];
        const LossGradient g = loss_gradient(current, data.x(i), data.target(i, options.loss), options.loss);
        epoch_loss += g.loss;
        for (std::size_t p = 0; p < grad.size(); ++p) grad[p] += g.params[p];
      }
      const double scale = options.lr / static_cast<double>(end - start);
      for (std::size_t p = 0; p < params.size(); ++p) params[p] -= scale * grad[p];
      bool finite = true;
      for (double v : params) finite = finite && std::isfinite(v);
      if (!finite || !std::isfinite(epoch_loss))
        throw NumericError("training diverged at epoch " + std::to_string(epoch));
      current = current.with_parameters(params);
    }
    result.loss_curve.push_back(epoch_loss / static_cast<double>(n));
  }
  result.network = std::move(current);
  return result;
}

double accuracy(const Network& net, const Dataset& data) {
  if (!data.is_classification()) throw PreconditionError("accuracy needs class labels");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < data.size(); ++i) correct += argmax(forward(net, data.x(i))) == data.labels[i];
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

FixtureSpec fixture_spec(std::string_view name) {
  if (name == "two_moons_v1") {
    FixtureSpec f;
    f.name = "two_moons_v1";
    f.data.kind = DatasetKind::two_moons;
    f.data.n = 2000;
    f.data.noise = 0.1;
    f.data_seed = 7;
    f.hidden = {32, 32};
    f.activation = Activation::tanh();
    f.init_scale = 1.0;
    f.train.lr = 0.1;
    f.train.epochs = 200;
    f.train.batch = 32;
    f.train.seed = 7;
    f.train.loss = Loss::mse;
    return f;
  }
  throw PreconditionError("unknown fixture " + std::string(name));
}

TrainedFixture build_fixture(const FixtureSpec& spec) {
  Dataset data = make_dataset(spec.data, spec.data_seed);
  const std::size_t outputs = data.is_classification() ? data.classes : data.values.cols();
  Network initial = random_network(mlp_shape(data.dim(), spec.hidden, outputs, spec.activation), spec.init_scale,
                                   derive_seed(spec.train.seed, "learnlab", "init"));
  TrainResult r = train_sgd(initial, data, spec.train);
  return {spec, std::move(data), std::move(initial), std::move(r.network), std::move(r.loss_curve)};
}

// ---------------------------------------------------------------------------
// Attacks

Vector project_onto_ball(std::span<const double> center, std::span<const double> y, double radius,
                         ThreatNorm norm) {
  if (center.size() != y.size()) throw PreconditionError("projection: dimension mismatch");
  if (!(radius >= 0.0)) throw PreconditionError("projection radius must be >= 0");
  Vector out(y.begin(), y.end());
  if (norm == ThreatNorm::linf) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::clamp(out[i], center[i] - radius, center[i] + radius);
    return out;
  }
  Vector diff(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) diff[i] = y[i] - center[i];
  const double n = norm2(diff);
  if (n <= radius) return out;
  const double s = radius / n;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = center[i] + s * diff[i];
  return out;
}

namespace {

struct InputGrad {
  Vector grad;
  double loss = 0.0;
  bool jittered = false;
};

// Input gradient of softmax_xent; at a kink the gradient is taken at a point
// jittered by kKinkJitter in a seeded random direction.
InputGrad input_gradient(const Network& net, std::span<const double> x, std::size_t label, Rng& rng) {
  LossGradient g = loss_gradient(net, x, Target{label}, Loss::softmax_xent);
  InputGrad out{std::move(g.input), g.loss, false};
  if (g.at_kink) {
    Vector u(x.size());
    double n = 0.0;
    do {
      for (double& v : u) v = rng.normal();
      n = norm2(u);
    } while (n == 0.0);
    for (std::size_t i = 0; i < u.size(); ++i) u[i] = x[i] + kKinkJitter * u[i] / n;
    out.grad = loss_gradient(net, u, Target{label}, Loss::softmax_xent).input;
    out.jittered = true;
  }
  return out;
}

void finish(AttackResult& r, const Network& net, std::span<const double> x, const Vector& base_out,
            std::size_t base_class) {
  Vector diff(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) diff[i] = r.x_adv[i] - x[i];
  r.perturbation_norm = norm2(diff);
  const Vector out = forward(net, r.x_adv);
  Vector dout(out.size());
  for (std::size_t k = 0; k < out.size(); ++k) dout[k] = out[k] - base_out[k];
  r.output_change = norm2(dout);
  r.success = argmax(out) != base_class;
}

void check_attack_input(const Network& net, std::span<const double> x, std::size_t label) {
  if (x.size() != net.input_dim()) throw PreconditionError("attack: input dimension mismatch");
  if (net.output_dim() < 2) throw PreconditionError("attack needs a classifier head");
  if (label >= net.output_dim()) throw PreconditionError("attack: label out of range");
  for (double v : x)
    if (!std::isfinite(v)) throw PreconditionError("attack: non-finite input");
}

}  // namespace

AttackResult fgsm(const Network& net, std::span<const double> x, std::size_t label, double eps_step,
                  std::uint64_t seed) {
  check_attack_input(net, x, label);
  if (!(eps_step >= 0.0)) throw PreconditionError("fgsm step must be >= 0");
  const Vector base = forward(net, x);
  Rng rng(seed);
  AttackResult r;
  r.x_adv.assign(x.begin(), x.end());
  if (eps_step > 0.0) {
    const InputGrad g = input_gradient(net, x, label, rng);
    r.jittered = g.jittered;
    for (std::size_t i = 0; i < x.size(); ++i)
      r.x_adv[i] += eps_step * static_cast<double>((g.grad[i] > 0.0) - (g.grad[i] < 0.0));
    r.steps_used = 1;
  }
  finish(r, net, x, base, argmax(base));
  return r;
}

AttackResult pgd(const Network& net, std::span<const double> x, std::size_t label, double delta,
                 const PgdOptions& options, std::uint64_t seed) {
  check_attack_input(net, x, label);
  if (!(delta >= 0.0)) throw PreconditionError("pgd radius must be >= 0");
  if (options.steps == 0) throw PreconditionError("pgd needs at least one step");
  const Vector base = forward(net, x);
  const std::size_t base_class = argmax(base);
  Rng rng(seed);
  AttackResult r;
  r.x_adv.assign(x.begin(), x.end());
  if (delta == 0.0) {
    finish(r, net, x, base, base_class);
    return r;
  }
  const double step = options.step_size > 0.0 ? options.step_size : 2.5 * delta / static_cast<double>(options.steps);
  Vector cur(x.begin(), x.end());
  double best_loss = loss_value(net, x, Target{label}, Loss::softmax_xent);
  for (std::size_t it = 0; it < options.steps; ++it) {
    const InputGrad g = input_gradient(net, cur, label, rng);
    r.jittered = r.jittered || g.jittered;
    if (options.norm == ThreatNorm::l2) {
      const double gn = norm2(g.grad);
      if (gn == 0.0 || !std::isfinite(gn)) break;
      for (std::size_t i = 0; i < cur.size(); ++i) cur[i] += step * g.grad[i] / gn;
    } else {
      bool moved = false;
      for (std::size_t i = 0; i < cur.size(); ++i) {
        const double s = static_cast<double>((g.grad[i] > 0.0) - (g.grad[i] < 0.0));
        cur[i] += step * s;
        moved = moved || s != 0.0;
      }
      if (!moved) break;
    }
    cur = project_onto_ball(x, cur, delta, options.norm);
    r.steps_used = it + 1;
    const Vector out = forward(net, cur);
    if (argmax(out) != base_class) {
      r.x_adv = cur;
      break;
    }
    const double l = loss_value(net, cur, Target{label}, Loss::softmax_xent);
    if (l > best_loss) {
      best_loss = l;
      r.x_adv = cur;
    }
  }
  finish(r, net, x, base, base_class);
  return r;
}

catlab::DensityEstimate attack_success_rate(const Network& net, const Dataset& data, AttackMethod method,
                                            double delta, const AttackOptions& options) {
  data.validate();
  if (!data.is_classification()) throw PreconditionError("attacks need class labels");
  if (data.dim() != net.input_dim()) throw PreconditionError("dataset and network input dims differ");
  const std::size_t n = data.size();
  // 0: misclassified, 1: correct and held, 2: correct and flipped.
  std::vector<unsigned char> outcome(n, 0);
  const std::uint64_t root = derive_seed(options.seed, "learnlab", "attack");
  parallel_for(n, options.workers, [&](std::size_t i) {
    const auto x = data.x(i);
    if (argmax(forward(net, x)) != data.labels[i]) return;
    const std::uint64_t s = derive_seed(root, i);
    const AttackResult r = method == AttackMethod::fgsm ? fgsm(net, x, data.labels[i], delta, s)
                                                        : pgd(net, x, data.labels[i], delta, options.pgd, s);
    outcome[i] = r.success ? 2 : 1;
  });
  std::size_t correct = 0, flipped = 0;
  for (unsigned char o : outcome) {
    correct += o != 0;
    flipped += o == 2;
  }
  catlab::DensityEstimate e;
  e.criterion = catlab::CatastropheCriterion::class_flip();
  e.confidence = options.confidence;
  e.seed = options.seed;
  e.n_samples = correct;
  e.hits = flipped;
  e.is_lower_bound = true;
  if (correct > 0) {
    e.rho = static_cast<double>(flipped) / static_cast<double>(correct);
    const catlab::Interval ci = catlab::wilson_interval(flipped, correct, options.confidence);
    e.ci_low = ci.low;
    e.ci_high = ci.high;
  }
  return e;
}

// ---------------------------------------------------------------------------
// Mutual information

MIEstimate mutual_information_plugin(const Dataset& data, std::size_t bins_per_dim) {
  data.validate();
  if (!data.is_classification()) throw PreconditionError("plug-in MI needs discrete labels");
  if (bins_per_dim < 2) throw PreconditionError("need at least 2 bins per dimension");
  const std::size_t d = data.dim(), n = data.size();
  if (d > 3) throw PreconditionError("plug-in MI supports d <= 3");
  std::size_t cells = 1;
  for (std::size_t j = 0; j < d; ++j) cells *= bins_per_dim;
  if (static_cast<double>(cells) > static_cast<double>(n) / 5.0)
    throw PreconditionError("too many cells for the sample size (bins^d > n/5)");

  Vector lo(d, std::numeric_limits<double>::infinity()), hi(d, -std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      lo[j] = std::min(lo[j], data.inputs(i, j));
      hi[j] = std::max(hi[j], data.inputs(i, j));
    }
  const std::size_t ny = data.classes;
  std::vector<std::size_t> joint(cells * ny, 0), cx(cells, 0), cy(ny, 0);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t cell = 0;
    for (std::size_t j = 0; j < d; ++j) {
      std::size_t b = 0;
      if (hi[j] > lo[j]) {
        const double t = (data.inputs(i, j) - lo[j]) / (hi[j] - lo[j]);
        b = std::min(bins_per_dim - 1, static_cast<std::size_t>(t * static_cast<double>(bins_per_dim)));
      }
      cell = cell * bins_per_dim + b;
    }
    ++joint[cell * ny + data.labels[i]];
    ++cx[cell];
    ++cy[data.labels[i]];
  }
  const double nn = static_cast<double>(n);
  MIEstimate m;
  m.bins = bins_per_dim;
  m.n = n;
  m.x_cells = cells;
  m.y_values = ny;
  double mi = 0.0;
  for (std::size_t c = 0; c < cells; ++c)
    for (std::size_t y = 0; y < ny; ++y) {
      const double cxy = static_cast<double>(joint[c * ny + y]);
      if (cxy == 0.0) continue;
      mi += cxy / nn * std::log2(cxy * nn / (static_cast<double>(cx[c]) * static_cast<double>(cy[y])));
    }
  const auto entropy = [nn](const std::vector<std::size_t>& counts) {
    double h = 0.0;
    for (std::size_t c : counts)
      if (c) h -= static_cast<double>(c) / nn * std::log2(static_cast<double>(c) / nn);
    return h;
  };
  m.h_x_bits = entropy(cx);
  m.h_y_bits = entropy(cy);
  m.i_xy_bits = std::clamp(mi, 0.0, std::min(m.h_x_bits, m.h_y_bits));
  m.bias_bound_bits = (static_cast<double>(cells) * static_cast<double>(ny) - 1.0) / (2.0 * nn * std::numbers::ln2);
  return m;
}

}  // namespace cdlab::learnlab
