#include "cdlab/expcli.hpp"

#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <json.hpp>
#include <ostream>
#include <sstream>
#include <unistd.h>

#include "cdlab/errors.hpp"

#ifndef CDLAB_BUILD_ID
#define CDLAB_BUILD_ID "unknown"
#endif

namespace cdlab::expcli {

namespace {

KeySpec real(std::string name, std::string def, std::string help) {
  return {std::move(name), ValueType::real, std::move(def), std::move(help), {}, false};
}
KeySpec integer(std::string name, std::string def, std::string help) {
  return {std::move(name), ValueType::integer, std::move(def), std::move(help), {}, false};
}
KeySpec path(std::string name, std::string help, bool required = false) {
  return {std::move(name), ValueType::path, "", std::move(help), {}, required};
}
KeySpec reals(std::string name, std::string def, std::string help) {
  return {std::move(name), ValueType::reals, std::move(def), std::move(help), {}, false};
}
KeySpec integers(std::string name, std::string def, std::string help) {
  return {std::move(name), ValueType::integers, std::move(def), std::move(help), {}, false};
}
KeySpec choice(std::string name, std::string def, std::vector<std::string> choices, std::string help) {
  return {std::move(name), ValueType::choice, std::move(def), std::move(help), std::move(choices), false};
}
KeySpec boolean(std::string name, std::string def, std::string help) {
  return {std::move(name), ValueType::boolean, std::move(def), std::move(help), {}, false};
}

KeySpec required(KeySpec k) {
  k.required = true;
  return k;
}

std::vector<KeySpec> domain_keys() {
  return {real("radius", "1", "domain ball radius"),
          reals("center", "", "domain centre (comma list); empty is the origin")};
}

std::vector<KeySpec> sampling_keys(std::string n_default) {
  return {integer("n", std::move(n_default), "Monte Carlo samples"), integer("seed", "0", "root seed"),
          real("confidence", "0.99", "Wilson interval confidence")};
}

std::vector<KeySpec> classifier_keys() {
  return {choice("fixture", "two_moons_v1", {"two_moons_v1", "none"}, "trained fixture to use when no net is given"),
          boolean("trained", "true", "use the trained fixture weights (false: its initialization)"),
          path("net", "NETV1 network file (needs dataset)"), path("dataset", "dataset CSV for net")};
}

std::vector<KeySpec> join(std::initializer_list<std::vector<KeySpec>> parts) {
  std::vector<KeySpec> out;
  for (const auto& p : parts) out.insert(out.end(), p.begin(), p.end());
  return out;
}

std::vector<CommandSpec> build_commands() {
  const std::vector<std::string> norms = {"l2", "linf", "logit_gap"};
  const std::vector<std::string> alpha_modes = {"gamma_formula", "log_pieces"};
  const std::vector<std::string> kinds = {"parameters", "neurons"};
  std::vector<CommandSpec> cmds;

  cmds.push_back({"density", "kink catastrophe density of a piecewise-linear net",
                  join({{required(path("net", "NETV1 network file")), real("delta", "0.01", "perturbation radius"),
                         choice("method", "mc", {"mc", "grid", "both"}, "Monte Carlo, exact grid (d <= 2) or both"),
                         real("grid-step", "0", "grid step; 0 is delta/10")},
                        domain_keys(), sampling_keys("100000")})});

  cmds.push_back({"instability", "(epsilon, delta) output-jump density",
                  join({{required(path("net", "NETV1 network file")), real("epsilon", "0.5", "output change"),
                         real("delta", "0.1", "perturbation radius"),
                         choice("norm", "l2", norms, "output change measure"),
                         integer("budget", "20", "ascent steps per point"),
                         integer("random-starts", "8", "random start directions per point")},
                        domain_keys(), sampling_keys("10000")})});

  cmds.push_back({"safe-measure", "safe-region measure next to the closed-form upper bound",
                  join({{required(path("net", "NETV1 network file")),
                         choice("criterion", "kink", {"kink", "output_jump"}, "catastrophe criterion"),
                         real("epsilon", "0.5", "output change for output_jump"),
                         real("delta", "0.01", "perturbation radius"), choice("norm", "l2", norms, "output norm"),
                         integer("budget", "20", "ascent steps per point"),
                         integer("random-starts", "8", "random start directions per point"),
                         real("k", "1", "bound constant K"),
                         choice("alpha-mode", "gamma_formula", alpha_modes, "alpha convention"),
                         integer("pieces", "2", "pieces m for log_pieces"),
                         choice("complexity-kind", "parameters", kinds, "what C counts")},
                        domain_keys(), sampling_keys("100000")})});

  cmds.push_back({"sweep", "fraction of random depth-one nets above a density threshold",
                  {integer("d", "2", "input dimension"), real("radius", "1", "domain radius"),
                   integers("widths", "10,50,200,800", "hidden widths N"), integer("trials", "30", "nets per width"),
                   real("delta", "0.01", "perturbation radius"), real("threshold", "0.9", "density threshold"),
                   integer("n", "20000", "samples per estimate"), real("weight-scale", "1", "init scale"),
                   integer("seed", "0", "root seed"), real("confidence", "0.99", "Wilson interval confidence")}});

  cmds.push_back(
      {"bounds", "evaluate one closed-form bound",
       {required(choice("formula", "", {"alpha", "relu_density", "asymptotic", "safe_measure", "c0", "depth"},
                        "bound to evaluate")),
        integer("d", "2", "input dimension"), choice("alpha-mode", "gamma_formula", alpha_modes, "alpha convention"),
        integer("pieces", "2", "pieces m"), integer("n-neurons", "100", "neuron count N"),
        real("delta", "0.01", "perturbation radius"), real("radius", "1", "domain radius R"),
        reals("constants", "", "c_1..c_d; empty uses the fitted d = 2 constants"),
        real("c", "1", "complexity C"), choice("complexity-kind", "parameters", kinds, "what C counts"),
        real("k", "1", "bound constant K"), real("rho-max", "0.01", "tolerated density"),
        choice("mode", "linear", {"linear", "exact_log"}, "C0 formula"),
        real("rho-single", "0.1", "single-layer density"), integer("layers", "1", "depth L"),
        choice("model", "both", {"power", "union_independent", "both"}, "depth composition")}});

  cmds.push_back({"sandwich", "maximum safe complexity against actual and minimum useful complexity",
                  {required(real("c", "", "actual complexity C")), real("rho-max", "0.01", "tolerated density"),
                   real("delta", "1e-3", "perturbation radius"), integer("d", "2", "input dimension"),
                   real("i-xy-bits", "0", "I(X;Y) in bits"), real("bits-per-param", "2", "bits stored per parameter"),
                   choice("c0-mode", "linear", {"linear", "exact_log"}, "C0 formula"),
                   choice("complexity-kind", "parameters", kinds, "what C counts")}});

  cmds.push_back({"fim", "empirical Fisher spectrum and natural-gradient explosion",
                  join({classifier_keys(),
                        {choice("loss", "mse", {"mse", "softmax_xent"}, "loss whose gradients form the Fisher"),
                         real("lambda", "1e-6", "natural-gradient damping"), real("tau", "1e-6", "near-zero level"),
                         choice("eigen-method", "automatic", {"automatic", "jacobi", "tridiagonal_ql"},
                                "eigensolver")}})});

  cmds.push_back(
      {"train", "train a classifier with mini-batch SGD",
       {choice("dataset-kind", "two_moons", {"two_moons", "xor_grid", "random_teacher"}, "generated dataset"),
        path("dataset", "dataset CSV (overrides dataset-kind)"), integer("n", "2000", "dataset size"),
        real("noise", "0.1", "generator noise"), integer("data-seed", "7", "dataset seed"),
        integers("teacher-hidden", "16", "random_teacher hidden widths"),
        integer("teacher-seed", "0", "random_teacher weights seed"), integer("dim", "2", "random_teacher input dim"),
        integer("classes", "2", "random_teacher classes"), integers("hidden", "32,32", "student hidden widths"),
        choice("act", "tanh", {"relu", "tanh", "sigmoid", "leaky_relu:0.01"}, "hidden activation"),
        real("init-scale", "1", "init weight scale"), choice("loss", "mse", {"mse", "softmax_xent"}, "loss"),
        real("lr", "0.1", "learning rate"), integer("epochs", "200", "epochs"), integer("batch", "32", "batch size"),
        integer("seed", "7", "training seed"), path("save-net", "write the trained net here (NETV1)")}});

  cmds.push_back({"attack", "FGSM / PGD success rate on correctly classified points",
                  join({classifier_keys(),
                        {choice("method", "pgd", {"fgsm", "pgd", "both"}, "attack"),
                         real("delta", "0.1", "perturbation radius (FGSM step)"), integer("steps", "20", "PGD steps"),
                         real("step-size", "0", "PGD step; 0 is 2.5 delta / steps"),
                         choice("norm", "l2", {"l2", "linf"}, "threat model"), integer("seed", "0", "root seed"),
                         real("confidence", "0.99", "Wilson interval confidence")}})});

  cmds.push_back({"mi", "plug-in mutual information between inputs and labels",
                  {choice("dataset-kind", "two_moons", {"two_moons", "xor_grid"}, "generated dataset"),
                   path("dataset", "dataset CSV (overrides dataset-kind)"), integer("n", "10000", "dataset size"),
                   real("noise", "0", "generator noise"), integer("data-seed", "0", "dataset seed"),
                   integer("bins", "16", "bins per input dimension")}});

  cmds.push_back({"oracle-check", "Monte Carlo against the exact grid, backprop against finite differences",
                  {integer("nets", "5", "random depth-one nets"), integer("max-width", "50", "largest width"),
                   integer("n", "200000", "Monte Carlo samples per net"), real("delta", "0.01", "radius"),
                   integer("probes", "100", "finite-difference probes"), integer("seed", "0", "root seed"),
                   real("confidence", "0.99", "Wilson interval confidence")}});

  cmds.push_back({"reproduce", "recompute a worked example next to its reference value",
                  {required(choice("id", "", {"relu_043", "c0_2e5", "gpt4_margin", "resnet_margin", "alpha_d2"},
                                   "example id")),
                   integer("trials", "5", "nets per width for relu_043"), integer("seed", "0", "root seed")}});

  for (auto& c : cmds) c.keys.push_back(choice("format", "json", {"json", "csv"}, "report format"));
  return cmds;
}

bool parse_real(std::string_view s, double& out) {
  while (!s.empty() && s.front() == ' ') s.remove_prefix(1);
  while (!s.empty() && s.back() == ' ') s.remove_suffix(1);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  const auto res = std::from_chars(s.data(), s.data() + s.size(), out);
  return !s.empty() && res.ec == std::errc{} && res.ptr == s.data() + s.size() && std::isfinite(out);
}

bool parse_int(std::string_view s, std::int64_t& out) {
  while (!s.empty() && s.front() == ' ') s.remove_prefix(1);
  while (!s.empty() && s.back() == ' ') s.remove_suffix(1);
  const auto res = std::from_chars(s.data(), s.data() + s.size(), out);
  return !s.empty() && res.ec == std::errc{} && res.ptr == s.data() + s.size();
}

std::vector<std::string_view> split_commas(std::string_view s) {
  std::vector<std::string_view> out;
  if (s.empty()) return out;
  std::size_t start = 0;
  for (;;) {
    const std::size_t c = s.find(',', start);
    out.push_back(s.substr(start, c == std::string_view::npos ? std::string_view::npos : c - start));
    if (c == std::string_view::npos) break;
    start = c + 1;
  }
  return out;
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t");
  return std::string(s.substr(b, e - b + 1));
}

// Checks `value` against the key type; returns the canonical spelling.
std::string validate_value(const std::string& command_name, const KeySpec& key, const std::string& value) {
  const auto bad = [&](const std::string& why) {
    return ConfigError(command_name + ": key '" + key.name + "' " + why + " (got '" + value + "')");
  };
  switch (key.type) {
    case ValueType::real: {
      double v;
      if (!parse_real(value, v)) throw bad("expects a finite number");
      return value;
    }
    case ValueType::integer: {
      std::int64_t v;
      if (!parse_int(value, v)) throw bad("expects an integer");
      return value;
    }
    case ValueType::text:
    case ValueType::path:
      return value;
    case ValueType::reals:
      for (auto part : split_commas(value)) {
        double v;
        if (!parse_real(part, v)) throw bad("expects a comma-separated list of numbers");
      }
      return value;
    case ValueType::integers:
      for (auto part : split_commas(value)) {
        std::int64_t v;
        if (!parse_int(part, v) || v < 0) throw bad("expects a comma-separated list of non-negative integers");
      }
      return value;
    case ValueType::choice:
      for (const auto& c : key.choices)
        if (c == value) return value;
      {
        std::string all;
        for (const auto& c : key.choices) all += (all.empty() ? "" : "|") + c;
        throw bad("must be one of " + all);
      }
    case ValueType::boolean:
      if (value == "true" || value == "1" || value == "yes") return "true";
      if (value == "false" || value == "0" || value == "no") return "false";
      throw bad("expects true or false");
  }
  return value;
}

}  // namespace

const std::vector<CommandSpec>& commands() {
  static const std::vector<CommandSpec> cmds = build_commands();
  return cmds;
}

const CommandSpec& command(std::string_view name) {
  for (const auto& c : commands())
    if (c.name == name) return c;
  throw ConfigError("unknown command '" + std::string(name) + "'");
}

// ---------------------------------------------------------------------------
// Config access

const std::string& ExperimentConfig::text(const std::string& key) const {
  const auto it = values.find(key);
  if (it == values.end()) throw ConfigError(command + ": missing key '" + key + "'");
  return it->second;
}

double ExperimentConfig::real(const std::string& key) const {
  double v;
  if (!parse_real(text(key), v)) throw ConfigError(command + ": key '" + key + "' is not a number");
  return v;
}

std::int64_t ExperimentConfig::integer(const std::string& key) const {
  std::int64_t v;
  if (!parse_int(text(key), v)) throw ConfigError(command + ": key '" + key + "' is not an integer");
  return v;
}

std::uint64_t ExperimentConfig::u64(const std::string& key) const {
  const std::int64_t v = integer(key);
  if (v < 0) throw ConfigError(command + ": key '" + key + "' must be non-negative");
  return static_cast<std::uint64_t>(v);
}

std::size_t ExperimentConfig::size(const std::string& key) const { return static_cast<std::size_t>(u64(key)); }

bool ExperimentConfig::flag(const std::string& key) const { return text(key) == "true"; }

std::vector<double> ExperimentConfig::reals(const std::string& key) const {
  std::vector<double> out;
  for (auto part : split_commas(text(key))) {
    double v;
    if (!parse_real(part, v)) throw ConfigError(command + ": key '" + key + "' has a bad list entry");
    out.push_back(v);
  }
  return out;
}

std::vector<std::size_t> ExperimentConfig::sizes(const std::string& key) const {
  std::vector<std::size_t> out;
  for (auto part : split_commas(text(key))) {
    std::int64_t v;
    if (!parse_int(part, v) || v < 0) throw ConfigError(command + ": key '" + key + "' has a bad list entry");
    out.push_back(static_cast<std::size_t>(v));
  }
  return out;
}

std::map<std::string, std::string> parse_config_text(std::string_view text) {
  std::map<std::string, std::string> out;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const std::size_t nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (trim(line).empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ParseError(line_no, 1, "expected key = value");
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ParseError(line_no, 1, "empty key");
    if (out.count(key)) throw ParseError(line_no, 1, "duplicate key '" + key + "'");
    out[key] = trim(line.substr(eq + 1));
  }
  return out;
}

std::map<std::string, std::string> load_config_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

ExperimentConfig resolve_config(std::string_view command_name, const std::map<std::string, std::string>& file_values,
                                const std::map<std::string, std::string>& flag_values) {
  const CommandSpec& spec = command(command_name);
  ExperimentConfig cfg;
  cfg.command = spec.name;
  const auto find_key = [&](const std::string& k) -> const KeySpec* {
    for (const auto& key : spec.keys)
      if (key.name == k) return &key;
    return nullptr;
  };
  for (const auto* layer : {&file_values, &flag_values})
    for (const auto& [k, v] : *layer)
      if (!find_key(k)) throw ConfigError(spec.name + ": unknown key '" + k + "'");
  for (const auto& key : spec.keys) {
    std::string value = key.default_value;
    bool given = false;
    if (auto it = file_values.find(key.name); it != file_values.end()) {
      value = it->second;
      given = true;
    }
    if (auto it = flag_values.find(key.name); it != flag_values.end()) {
      value = it->second;
      given = true;
    }
    if (key.required && (!given || value.empty()))
      throw ConfigError(spec.name + ": missing required key '" + key.name + "'");
    const bool optional_empty =
        value.empty() && (key.type == ValueType::path || key.type == ValueType::text || key.type == ValueType::reals ||
                          key.type == ValueType::integers);
    cfg.values[key.name] = optional_empty ? value : validate_value(spec.name, key, value);
  }
  return cfg;
}

std::string config_hash(const ExperimentConfig& config) {
  std::uint64_t h = 14695981039346656037ull;
  const auto feed = [&](std::string_view s) {
    for (unsigned char ch : s) {
      h ^= ch;
      h *= 1099511628211ull;
    }
    h ^= 0xff;
    h *= 1099511628211ull;
  };
  feed(config.command);
  for (const auto& [k, v] : config.values) {
    feed(k);
    feed(v);
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string build_id() { return CDLAB_BUILD_ID; }

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

const ReportRow& Report::row(std::string_view metric) const {
  for (const auto& r : rows)
    if (r.metric == metric) return r;
  throw PreconditionError("report has no metric " + std::string(metric));
}

// ---------------------------------------------------------------------------
// Rendering

namespace {

std::string sci(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::scientific, 16);
  return std::string(buf, res.ptr);
}

std::string nonfinite_text(double v, const std::optional<double>& log10_value) {
  if (log10_value && std::isfinite(*log10_value)) return "overflow:log10=" + sci(*log10_value);
  if (std::isnan(v)) return "nan";
  return v > 0 ? "inf" : "-inf";
}

nlohmann::ordered_json json_number(double v, const std::optional<double>& log10_value = std::nullopt) {
  if (std::isfinite(v)) return v;
  return nonfinite_text(v, log10_value);
}

std::string csv_number(double v, const std::optional<double>& log10_value = std::nullopt) {
  return std::isfinite(v) ? sci(v) : nonfinite_text(v, log10_value);
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace

std::string render_report(const Report& report, Format format) {
  if (format == Format::json) {
    nlohmann::ordered_json j;
    j["experiment"] = report.experiment;
    j["timestamp"] = report.timestamp;
    j["build"] = report.build;
    j["config_hash"] = report.hash;
    nlohmann::ordered_json cfg;
    cfg["command"] = report.config.command;
    nlohmann::ordered_json values = nlohmann::ordered_json::object();
    for (const auto& [k, v] : report.config.values) values[k] = v;
    cfg["values"] = values;
    j["config"] = cfg;
    bool string_numbers = false;
    nlohmann::ordered_json rows = nlohmann::ordered_json::array();
    for (const auto& r : report.rows) {
      nlohmann::ordered_json row;
      row["metric"] = r.metric;
      row["value"] = json_number(r.value, r.log10_value);
      string_numbers = string_numbers || !std::isfinite(r.value);
      if (r.ci_low) row["ci_low"] = json_number(*r.ci_low);
      if (r.ci_high) row["ci_high"] = json_number(*r.ci_high);
      if (r.log10_value) {
        row["log10_value"] = json_number(*r.log10_value);
        string_numbers = string_numbers || !std::isfinite(*r.log10_value);
      }
      row["flags"] = r.flags;
      rows.push_back(row);
    }
    j["rows"] = rows;
    nlohmann::ordered_json tables = nlohmann::ordered_json::array();
    for (const auto& t : report.tables) {
      nlohmann::ordered_json tj;
      tj["name"] = t.name;
      tj["columns"] = t.columns;
      nlohmann::ordered_json tr = nlohmann::ordered_json::array();
      for (const auto& r : t.rows) {
        nlohmann::ordered_json rj = nlohmann::ordered_json::array();
        for (double v : r) {
          rj.push_back(json_number(v));
          string_numbers = string_numbers || !std::isfinite(v);
        }
        tr.push_back(rj);
      }
      tj["rows"] = tr;
      tables.push_back(tj);
    }
    j["tables"] = tables;
    if (string_numbers) j["precision"] = "non-finite numbers are encoded as strings";
    return j.dump(2) + "\n";
  }

  std::ostringstream out;
  out << "# experiment=" << report.experiment << "\n# command=" << report.config.command << '\n';
  for (const auto& [k, v] : report.config.values) out << "# " << k << '=' << v << '\n';
  out << "experiment,timestamp,build,config_hash,metric,value,ci_low,ci_high,log10_value,flags\n";
  for (const auto& r : report.rows) {
    out << csv_field(report.experiment) << ',' << csv_field(report.timestamp) << ',' << csv_field(report.build) << ','
        << report.hash << ',' << csv_field(r.metric) << ',' << csv_number(r.value, r.log10_value) << ','
        << (r.ci_low ? csv_number(*r.ci_low) : "") << ',' << (r.ci_high ? csv_number(*r.ci_high) : "") << ','
        << (r.log10_value ? csv_number(*r.log10_value) : "") << ',' << csv_field(r.flags) << '\n';
  }
  for (const auto& t : report.tables) {
    out << "\n# table=" << t.name << '\n';
    for (std::size_t c = 0; c < t.columns.size(); ++c) out << (c ? "," : "") << csv_field(t.columns[c]);
    out << '\n';
    for (const auto& r : t.rows) {
      for (std::size_t c = 0; c < r.size(); ++c) out << (c ? "," : "") << csv_number(r[c]);
      out << '\n';
    }
  }
  return out.str();
}

void write_atomic(const std::filesystem::path& path, const std::string& content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw PreconditionError("cannot write " + tmp.string());
    out << content;
    out.flush();
    if (!out) throw PreconditionError("write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp);
    throw PreconditionError("cannot rename report into " + path.string() + ": " + ec.message());
  }
}

RunResult run(const ExperimentConfig& config, const RunContext& context) {
  RunResult r{execute(config, context), context.out_path};
  const Format format = config.text("format") == "csv" ? Format::csv : Format::json;
  if (r.path.empty()) {
    const char* dir = std::getenv("CDLAB_OUT_DIR");
    const std::filesystem::path base = dir && *dir ? std::filesystem::path(dir) : std::filesystem::path(".");
    r.path = base / (r.report.experiment + "-" + r.report.hash.substr(0, 8) +
                     (format == Format::csv ? ".csv" : ".json"));
  }
  write_atomic(r.path, render_report(r.report, format));
  return r;
}

int exit_code_for_current_exception(std::ostream& err) {
  try {
    throw;
  } catch (const ParseError& e) {
    err << "parse error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const PreconditionError& e) {
    err << "precondition violated: " << e.what() << '\n';
    return kExitPrecondition;
  } catch (const NumericError& e) {
    err << "numeric failure: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
}

}  // namespace cdlab::expcli
