#include <CLI11.hpp>
#include <iostream>
#include <map>
#include <memory>

#include "cdlab/errors.hpp"
#include "cdlab/expcli.hpp"

namespace ex = cdlab::expcli;

namespace {

struct Subcommand {
  CLI::App* app = nullptr;
  const ex::CommandSpec* spec = nullptr;
  std::map<std::string, std::string> flags;
  std::string config_file;
  std::string out;
  unsigned threads = 0;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Catastrophe-density experiments: estimators, bounds, Fisher spectra and attacks"};
  app.require_subcommand(1);
  std::vector<std::unique_ptr<Subcommand>> subs;
  for (const auto& spec : ex::commands()) {
    auto sub = std::make_unique<Subcommand>();
    sub->spec = &spec;
    sub->app = app.add_subcommand(spec.name, spec.help);
    sub->app->add_option("--config", sub->config_file, "key = value config file");
    sub->app->add_option("--out", sub->out, "report path (default $CDLAB_OUT_DIR/<experiment>-<hash>.<format>)");
    sub->app->add_option("--threads", sub->threads, "worker threads, 0 = hardware concurrency");
    for (const auto& key : spec.keys) {
      std::string help = key.help;
      if (!key.default_value.empty()) help += " [" + key.default_value + "]";
      if (key.required) help += " (required)";
      Subcommand* s = sub.get();
      const std::string name = key.name;
      sub->app->add_option_function<std::string>(
          "--" + key.name, [s, name](const std::string& v) { s->flags[name] = v; }, help);
    }
    subs.push_back(std::move(sub));
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return ex::kExitConfig;
  }

  for (const auto& sub : subs) {
    if (!sub->app->parsed()) continue;
    try {
      std::map<std::string, std::string> file_values;
      if (!sub->config_file.empty()) file_values = ex::load_config_file(sub->config_file);
      const ex::ExperimentConfig cfg = ex::resolve_config(sub->spec->name, file_values, sub->flags);
      ex::RunContext ctx;
      ctx.workers = sub->threads;
      ctx.out_path = sub->out;
      const ex::RunResult r = ex::run(cfg, ctx);
      for (const auto& line : r.report.summary) std::cout << line << '\n';
      std::cout << "report: " << r.path.string() << '\n';
      return ex::kExitOk;
    } catch (...) {
      return ex::exit_code_for_current_exception(std::cerr);
    }
  }
  return ex::kExitFailure;
}
