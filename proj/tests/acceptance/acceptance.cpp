// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fail.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <numbers>
#include <string>
#include <vector>

#include <unistd.h>

#include "cdlab/boundlab.hpp"
#include "cdlab/catlab.hpp"
#include "cdlab/errors.hpp"
#include "cdlab/expcli.hpp"
#include "cdlab/fimlab.hpp"
#include "cdlab/learnlab.hpp"
#include "cdlab/regionlab.hpp"

using namespace cdlab;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string num(double v, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", digits, v);
  return buf;
}

const double kLn2 = std::numbers::ln2;
const std::uint64_t kRoot = 20240901;

std::uint64_t seed_for(std::string_view purpose) { return derive_seed(kRoot, "acceptance", purpose); }

// Built once, shared by criteria 10 and 12.
const learnlab::TrainedFixture& fixture() {
  static const learnlab::TrainedFixture f = learnlab::build_fixture(learnlab::fixture_spec("two_moons_v1"));
  return f;
}

Network center_line_net() {
  return Network(2, {Layer{Matrix::from_rows({{0, 1}}), {0}, Activation::relu()},
                     Layer{Matrix::from_rows({{1}}), {0}, Activation::linear()}});
}

// ---------------------------------------------------------------------------

Outcome c01_alpha() {
  const double a2 = boundlab::alpha(2);
  bool ok = std::abs(a2 - 0.346574) <= 1e-6;
  double worst = 0.0, factorial = 1.0;
  for (int d = 1; d <= 20; ++d) {
    factorial *= d;
    worst = std::max(worst, std::abs(boundlab::alpha(d) * factorial - kLn2));
  }
  ok = ok && worst <= 1e-15;
  return {ok, "alpha(2)=" + num(a2, 10) + " max|alpha*d!-ln2| (d<=20)=" + num(worst, 3)};
}

Outcome c02_c0() {
  const double c0 = boundlab::max_safe_complexity(0.01, 1e-3, 2, boundlab::C0Mode::linear).value;
  const double rel = std::abs(c0 - 2.885e-5) / 2.885e-5;
  const double rel_quoted = std::abs(c0 - 2.8e-5) / 2.8e-5;
  return {rel <= 0.05, "C0=" + num(c0, 6) + " rel.err vs 2.885e-5=" + num(rel, 3) + " (vs 2.8e-5: " +
                           num(rel_quoted, 3) + ")"};
}

Outcome c03_sandwich() {
  const double r12 = boundlab::sandwich_report(1e12, 0.01, 1e-3, 2, 0.0).output("log10_ratio");
  const double r8 = boundlab::sandwich_report(1e8, 0.01, 1e-3, 2, 0.0).output("log10_ratio");
  const bool ok = r12 >= 16.4 && r12 <= 17.6 && r8 >= 12.4 && r8 <= 13.6;
  return {ok, "log10(C/C0): C=1e12 -> " + num(r12, 5) + ", C=1e8 -> " + num(r8, 5)};
}

Outcome c04_log_domain() {
  const boundlab::BoundReport r = boundlab::asymptotic_density_bound(1e12, 1e-3, 2);
  const bool ok = std::isfinite(r.log10_complement) && r.log10_complement <= -1e6;
  return {ok, "log10(1-rho)=" + num(r.log10_complement, 6) + " overflow=" + (r.overflow ? "yes" : "no")};
}

Outcome c05_mc_vs_grid() {
  const Domain disk = Domain::ball(2, 1.0);
  const double delta = 0.01;
  Rng pick(seed_for("c05-widths"));
  std::size_t inside = 0;
  std::string misses;
  for (std::size_t i = 0; i < 20; ++i) {
    const std::size_t width = 1 + pick.below(50);
    const Network net =
        random_network(mlp_shape(2, {width}, 1, Activation::relu()), 1.0, derive_seed(seed_for("c05-nets"), i));
    const double grid = regionlab::exact_kink_density(net, disk, delta, delta / 10.0).value;
    const catlab::DensityEstimate e =
        catlab::estimate_kink_density(net, disk, delta, {1000000, derive_seed(seed_for("c05-mc"), i), 0.99, 0});
    if (grid >= e.ci_low && grid <= e.ci_high) ++inside;
    else misses += " [N=" + std::to_string(width) + " grid=" + num(grid) + " ci=" + num(e.ci_low) + ".." +
                   num(e.ci_high) + "]";
  }
  return {inside >= 18, std::to_string(inside) + "/20 grid values inside the 99% MC interval" + misses};
}

Outcome c06_center_line() {
  const Network net = center_line_net();
  const Domain disk = Domain::ball(2, 1.0);
  const double delta = 0.01;
  // Circular strip |y| <= delta over the unit disk.
  const double truth = (2.0 * (std::asin(delta) + delta * std::sqrt(1 - delta * delta))) / std::numbers::pi;
  const double grid = regionlab::exact_kink_density(net, disk, delta, delta / 10.0).value;
  const double mc = catlab::estimate_kink_density(net, disk, delta, {4000000, seed_for("c06"), 0.99, 0}).rho;
  const double eg = std::abs(grid - truth) / truth, em = std::abs(mc - truth) / truth;
  return {eg <= 0.02 && em <= 0.02, "truth=" + num(truth) + " grid=" + num(grid) + " (" + num(100 * eg, 3) +
                                        "%) mc=" + num(mc) + " (" + num(100 * em, 3) + "%)"};
}

Outcome c07_relu_043() {
  const expcli::Report r = expcli::execute(expcli::resolve_config("reproduce", {}, {{"id", "relu_043"}}), {});
  const double rho = r.row("empirical_rho_N100").value;
  const double bound = r.row("bound_fitted_N100").value;
  const bool empirical_ok = rho >= 0.2 && rho <= 0.8;
  const bool bound_ok = std::abs(bound - 0.43) <= 0.05;
  return {empirical_ok && bound_ok, "empirical rho(N=100)=" + num(rho, 4) + (empirical_ok ? " in" : " outside") +
                                        " [0.2,0.8]; fitted c1=" + num(r.row("fitted_c1").value) +
                                        " c2=" + num(r.row("fitted_c2").value) + " bound=" + num(bound, 4) +
                                        (bound_ok ? " within" : " outside") + " 0.43+-0.05"};
}

Outcome c08_sweep() {
  catlab::SweepOptions o;
  o.widths = {10, 50, 200, 800};
  o.trials = 30;
  o.seed = seed_for("c08");
  const catlab::SweepResult s = catlab::genericity_sweep(Domain::ball(2, 1.0), o);
  std::string fr;
  for (const auto& row : s.rows) fr += (fr.empty() ? "" : ",") + num(row.fraction, 3);
  const bool ok = s.fractions_non_decreasing && s.trend.s > 0 && s.trend.p_value < 0.05;
  return {ok, "fractions=" + fr + " MK S=" + num(s.trend.s) + " p=" + num(s.trend.p_value, 3)};
}

double rel_norm(const Vector& a, const Vector& b) {
  double diff = 0, ref = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    ref += b[i] * b[i];
  }
  return std::sqrt(diff) / std::max(std::sqrt(ref), 1e-300);
}

Outcome c09_finite_differences() {
  const double h = 1e-6;
  double worst_jac = 0.0, worst_grad = 0.0;
  Rng r(seed_for("c09"));
  for (std::size_t p = 0; p < 100; ++p) {
    const std::size_t d = 1 + r.below(4), out = 1 + r.below(3), depth = 1 + r.below(3);
    std::vector<std::size_t> hidden;
    for (std::size_t k = 0; k < depth; ++k) hidden.push_back(2 + r.below(7));
    const Activation act = p % 2 == 0 ? Activation::tanh() : Activation::sigmoid();
    const Network net = random_network(mlp_shape(d, hidden, out, act), 1.0, r.next());
    Vector x(d);
    for (double& v : x) v = r.uniform(-1.0, 1.0);

    const Matrix jac = jacobian_input(net, x).jacobian;
    Vector analytic, numeric;
    for (std::size_t j = 0; j < d; ++j) {
      Vector xp = x, xm = x;
      xp[j] += h;
      xm[j] -= h;
      const Vector fp = forward(net, xp), fm = forward(net, xm);
      for (std::size_t k = 0; k < out; ++k) {
        analytic.push_back(jac(k, j));
        numeric.push_back((fp[k] - fm[k]) / (2 * h));
      }
    }
    worst_jac = std::max(worst_jac, rel_norm(analytic, numeric));

    const Loss loss = (p / 2) % 2 == 0 ? Loss::mse : Loss::softmax_xent;
    Target target;
    if (loss == Loss::mse) {
      Vector t(out);
      for (double& v : t) v = r.normal();
      target = t;
    } else {
      target = static_cast<std::size_t>(r.below(out));
    }
    const Vector g = gradient_params(net, x, target, loss);
    const Vector theta = net.parameters();
    Vector fd(theta.size());
    for (std::size_t i = 0; i < theta.size(); ++i) {
      Vector tp = theta, tm = theta;
      tp[i] += h;
      tm[i] -= h;
      fd[i] = (loss_value(net.with_parameters(tp), x, target, loss) -
               loss_value(net.with_parameters(tm), x, target, loss)) /
              (2 * h);
    }
    worst_grad = std::max(worst_grad, rel_norm(g, fd));
  }
  const bool ok = worst_jac <= 1e-4 && worst_grad <= 1e-4;
  return {ok, "100 probes: max rel.err jacobian_input=" + num(worst_jac, 3) + " gradient_params=" + num(worst_grad, 3)};
}

Outcome c10_fisher() {
  const auto& f = fixture();
  struct Case {
    std::string name;
    Network net;
    const learnlab::Dataset* data;
    Loss loss;
  };
  learnlab::DatasetSpec xs;
  xs.kind = learnlab::DatasetKind::xor_grid;
  xs.n = 400;
  const learnlab::Dataset xor_data = learnlab::make_dataset(xs, seed_for("c10-xor"));
  std::vector<Case> cases{
      {"trained", f.trained, &f.data, Loss::mse},
      {"untrained", f.initial, &f.data, Loss::mse},
      {"trained/xent", f.trained, &f.data, Loss::softmax_xent},
      {"relu", random_network(mlp_shape(2, {16, 16}, 2, Activation::relu()), 1.0, seed_for("c10-relu")), &xor_data,
       Loss::softmax_xent},
      {"sigmoid", random_network(mlp_shape(2, {12}, 2, Activation::sigmoid()), 1.0, seed_for("c10-sig")), &xor_data,
       Loss::mse},
  };
  bool psd = true, recon = true;
  double worst_min = INFINITY, worst_recon = 0.0, cond_trained = 0.0, cond_untrained = 0.0;
  std::string extra;
  for (const auto& c : cases) {
    const fimlab::FisherSpectrum s = fimlab::eigenspectrum(fimlab::empirical_fisher(c.net, *c.data, c.loss));
    const double rel_min = s.lambda_max > 0 ? s.lambda_min / s.lambda_max : 0.0;
    worst_min = std::min(worst_min, rel_min);
    worst_recon = std::max(worst_recon, s.reconstruction_error);
    psd = psd && s.lambda_min >= -1e-8 * s.lambda_max;
    recon = recon && s.reconstruction_error <= 1e-8;
    if (c.name == "trained") cond_trained = s.condition_ratio;
    if (c.name == "untrained") cond_untrained = s.condition_ratio;
    if (c.name == "trained" || c.name == "untrained")
      extra += " " + c.name + ": lmax=" + num(s.lambda_max, 4) + " cond=" + num(s.condition_ratio, 4) +
               " near0=" + num(s.near_zero_fraction, 3);
  }
  const bool large = cond_trained >= 1e3;
  const bool grows = cond_trained > cond_untrained;
  return {psd && recon && large && grows,
          std::string("PSD ") + (psd ? "ok" : "violated") + " (min lmin/lmax=" + num(worst_min, 3) +
              "), max recon=" + num(worst_recon, 3) + ", trained cond>=1e3 " + (large ? "ok" : "no") +
              ", trained>untrained " + (grows ? "ok" : "no") + ";" + extra};
}

Outcome c11_explosion() {
  const Matrix f = Matrix::diagonal(Vector{1.0, 1e-8});
  const Vector g{1.0, 1.0};
  double previous = INFINITY, first = 0.0;
  bool monotone = true;
  std::string series;
  for (double lambda : {1e-12, 1e-10, 1e-8, 1e-6, 1e-4, 1e-2}) {
    const double e = fimlab::natural_gradient_norm(f, g, lambda).explosion_index;
    if (lambda == 1e-12) first = e;
    monotone = monotone && e <= previous;
    previous = e;
    series += (series.empty() ? "" : ",") + num(e, 4);
  }
  return {first >= 1e7 && monotone, "index over lambda 1e-12..1e-2: " + series};
}

Network linear_classifier(const Vector& w0, const Vector& w1, double b0, double b1) {
  Matrix m(2, w0.size());
  for (std::size_t k = 0; k < w0.size(); ++k) {
    m(0, k) = w0[k];
    m(1, k) = w1[k];
  }
  return Network(w0.size(), {Layer{m, {b0, b1}, Activation::linear()}});
}

Outcome c12_attacks() {
  double worst_excess = -INFINITY;
  std::size_t mismatches = 0, flips = 0;
  Rng r(seed_for("c12"));
  for (std::size_t t = 0; t < 1000; ++t) {
    const std::size_t d = 2 + r.below(3);
    Vector w0(d), w1(d), x(d);
    for (std::size_t k = 0; k < d; ++k) {
      w0[k] = r.normal();
      w1[k] = r.normal();
      x[k] = r.uniform(-0.5, 0.5);
    }
    const double b0 = 0.2 * r.normal(), b1 = 0.2 * r.normal();
    Vector w(d);
    double margin = b0 - b1;
    for (std::size_t k = 0; k < d; ++k) {
      w[k] = w0[k] - w1[k];
      margin += w[k] * x[k];
    }
    const std::size_t label = margin > 0 ? 0 : 1;
    const double distance = std::abs(margin) / norm2(w);
    const double delta = r.uniform(0.0, 0.6);
    const learnlab::AttackResult a = learnlab::pgd(linear_classifier(w0, w1, b0, b1), x, label, delta);
    worst_excess = std::max(worst_excess, a.perturbation_norm - delta);
    flips += a.success;
    if (a.success != (distance <= delta)) ++mismatches;
  }

  const auto& f = fixture();
  std::size_t correct = 0, fixture_flips = 0;
  for (std::size_t i = 0; i < f.data.size(); ++i) {
    const auto x = f.data.x(i);
    const std::size_t y = f.data.labels[i];
    if (argmax(forward(f.trained, x)) != y) continue;
    ++correct;
    const learnlab::AttackResult a = learnlab::pgd(f.trained, x, y, 0.1);
    worst_excess = std::max(worst_excess, a.perturbation_norm - 0.1);
    fixture_flips += a.success;
  }
  const catlab::DensityEstimate rate = learnlab::attack_success_rate(f.trained, f.data, learnlab::AttackMethod::pgd, 0.1);
  const bool ok = worst_excess <= 1e-9 && mismatches == 0 && rate.rho > 0 && rate.hits == fixture_flips &&
                  rate.n_samples == correct;
  return {ok, "max(|x'-x|-delta)=" + num(worst_excess, 3) + "; linear fixtures: " + std::to_string(mismatches) +
                  "/1000 mismatches (" + std::to_string(flips) + " flips); two_moons_v1 PGD success at 0.1=" +
                  num(rate.rho, 4) + " (" + std::to_string(rate.hits) + "/" + std::to_string(rate.n_samples) + ")"};
}

Outcome c13_mutual_information() {
  learnlab::Dataset same;
  same.inputs = Matrix(4000, 1);
  same.labels.resize(4000);
  same.classes = 4;
  for (std::size_t i = 0; i < 4000; ++i) {
    same.labels[i] = i % 4;
    same.inputs(i, 0) = static_cast<double>(i % 4) + 0.5;
  }
  const double i_same = learnlab::mutual_information_plugin(same, 4).i_xy_bits;
  const bool exact = std::abs(i_same - 2.0) <= 1e-12;

  // 2-D uniform inputs, 8 bins per axis, independent binary labels.
  Rng r(seed_for("c13"));
  std::size_t within = 0;
  double worst_ratio = 0.0;
  for (std::size_t t = 0; t < 50; ++t) {
    learnlab::Dataset ind;
    ind.inputs = Matrix(2000, 2);
    ind.labels.resize(2000);
    ind.classes = 2;
    for (std::size_t i = 0; i < 2000; ++i) {
      ind.inputs(i, 0) = r.uniform();
      ind.inputs(i, 1) = r.uniform();
      ind.labels[i] = r.below(2);
    }
    const learnlab::MIEstimate e = learnlab::mutual_information_plugin(ind, 8);
    within += e.i_xy_bits <= e.bias_bound_bits;
    worst_ratio = std::max(worst_ratio, e.i_xy_bits / e.bias_bound_bits);
  }
  return {exact && within == 50, "I(X;X)=" + num(i_same, 17) + " bits; independent pairs within bias bound " +
                                     std::to_string(within) + "/50 (max I/bound=" + num(worst_ratio, 3) + ")"};
}

Outcome c14_determinism() {
  const fs::path dir = fs::temp_directory_path() / ("cdlab_accept_" + std::to_string(::getpid()));
  fs::create_directories(dir);
  save_network(dir / "line.netv1", center_line_net());
  save_network(dir / "deep.netv1",
               random_network(mlp_shape(2, {8, 8}, 2, Activation::relu()), 1.0, seed_for("c14-net")));
  const std::string line = (dir / "line.netv1").string(), deep = (dir / "deep.netv1").string();
  using Flags = std::map<std::string, std::string>;
  const std::vector<std::pair<std::string, Flags>> runs{
      {"density", {{"net", line}, {"method", "both"}, {"n", "200000"}}},
      {"instability", {{"net", deep}, {"n", "2000"}}},
      {"safe-measure", {{"net", line}, {"n", "50000"}}},
      {"sweep", {{"widths", "5,40,160"}, {"n", "2000"}}},
      {"bounds", {{"formula", "asymptotic"}, {"c", "1e12"}, {"delta", "1e-3"}}},
      {"bounds", {{"formula", "relu_density"}}},
      {"sandwich", {{"c", "1e12"}, {"i-xy-bits", "1e9"}}},
      {"fim", {}},
      {"train", {{"n", "400"}, {"epochs", "20"}}},
      {"attack", {{"method", "both"}}},
      {"mi", {{"n", "5000"}}},
      {"oracle-check", {{"nets", "2"}, {"n", "20000"}, {"probes", "10"}}},
      {"reproduce", {{"id", "relu_043"}}},
  };
  std::size_t identical = 0;
  std::string differs;
  for (const auto& [cmd, flags] : runs) {
    const expcli::ExperimentConfig cfg = expcli::resolve_config(cmd, {}, flags);
    std::string json, csv;
    bool same = true;
    for (unsigned workers : {1u, 4u, 8u}) {
      expcli::RunContext ctx;
      ctx.workers = workers;
      ctx.timestamp = "1970-01-01T00:00:00Z";
      const expcli::Report rep = expcli::execute(cfg, ctx);
      const std::string j = expcli::render_report(rep, expcli::Format::json);
      const std::string c = expcli::render_report(rep, expcli::Format::csv);
      if (workers == 1) {
        json = j;
        csv = c;
      } else {
        same = same && j == json && c == csv;
      }
    }
    identical += same;
    if (!same) differs += " " + cmd;
  }
  fs::remove_all(dir);
  return {identical == runs.size(), std::to_string(identical) + "/" + std::to_string(runs.size()) +
                                        " experiments byte-identical (JSON and CSV) at 1, 4 and 8 workers" +
                                        (differs.empty() ? "" : "; differ:" + differs)};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"alpha constant", c01_alpha},
      {"maximum safe complexity", c02_c0},
      {"complexity sandwich", c03_sandwich},
      {"log-domain evaluation", c04_log_domain},
      {"Monte Carlo vs exact grid", c05_mc_vs_grid},
      {"center-line density", c06_center_line},
      {"density of 100 through-disk neurons", c07_relu_043},
      {"genericity sweep trend", c08_sweep},
      {"backprop vs finite differences", c09_finite_differences},
      {"Fisher spectrum suite", c10_fisher},
      {"natural-gradient explosion", c11_explosion},
      {"adversarial attacks", c12_attacks},
      {"mutual information", c13_mutual_information},
      {"determinism across workers", c14_determinism},
  };
  std::size_t failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    failed += !o.pass;
    std::printf("%s %2zu %s: %s (%.1f s)\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first.c_str(),
                o.detail.c_str(), secs);
    std::fflush(stdout);
  }
  std::printf("%zu/%zu criteria passed\n", criteria.size() - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
