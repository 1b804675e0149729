#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

// Schema-driven experiment configs, the experiment runner and report writer.
namespace cdlab::expcli {

enum ExitCode : int { kExitOk = 0, kExitFailure = 1, kExitConfig = 2, kExitPrecondition = 3, kExitNumeric = 4 };

enum class ValueType { real, integer, text, path, reals, integers, choice, boolean };

struct KeySpec {
  std::string name;
  ValueType type = ValueType::real;
  std::string default_value;  // empty with required = false means "unset"
  std::string help;
  std::vector<std::string> choices;
  bool required = false;
};

struct CommandSpec {
  std::string name;
  std::string help;
  std::vector<KeySpec> keys;
};

// All subcommands with their keys. Every command also accepts `format`.
const std::vector<CommandSpec>& commands();
// Throws ConfigError for an unknown command.
const CommandSpec& command(std::string_view name);

// Fully resolved configuration: every schema key has a value (possibly empty
// for optional paths). Keys are kept sorted.
struct ExperimentConfig {
  std::string command;
  std::map<std::string, std::string> values;

  const std::string& text(const std::string& key) const;
  double real(const std::string& key) const;
  std::int64_t integer(const std::string& key) const;
  std::uint64_t u64(const std::string& key) const;
  std::size_t size(const std::string& key) const;
  bool flag(const std::string& key) const;
  std::vector<double> reals(const std::string& key) const;
  std::vector<std::size_t> sizes(const std::string& key) const;
};

// Flat "key = value" lines; '#' starts a comment. Throws ParseError.
std::map<std::string, std::string> parse_config_text(std::string_view text);
std::map<std::string, std::string> load_config_file(const std::filesystem::path& path);

// defaults, then file values, then flag values. Unknown keys, malformed values
// and missing required keys throw ConfigError.
ExperimentConfig resolve_config(std::string_view command_name, const std::map<std::string, std::string>& file_values,
                                const std::map<std::string, std::string>& flag_values);

// FNV-1a over the command and the sorted key=value pairs, as 16 hex digits.
std::string config_hash(const ExperimentConfig& config);

std::string build_id();
std::string utc_timestamp();

struct ReportRow {
  std::string metric;
  double value = 0.0;
  std::optional<double> ci_low;
  std::optional<double> ci_high;
  std::optional<double> log10_value;
  std::string flags;
};

struct Table {
  std::string name;
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;
};

struct Report {
  std::string experiment;
  ExperimentConfig config;
  std::string timestamp;
  std::string build;
  std::string hash;
  std::vector<ReportRow> rows;
  std::vector<Table> tables;
  // Human-readable summary lines for the console.
  std::vector<std::string> summary;

  const ReportRow& row(std::string_view metric) const;
};

enum class Format { json, csv };

// JSON: numbers round-trip exactly; non-finite values become strings
// "overflow:log10=<v>" (or "nan"/"inf") with a "precision" note.
// CSV: "# key=value" config header, then one line per row with 17
// significant digits in exponent form, then each table.
std::string render_report(const Report& report, Format format);

// Writes through a temporary file in the same directory and renames it.
void write_atomic(const std::filesystem::path& path, const std::string& content);

struct RunContext {
  unsigned workers = 0;
  // Empty: $CDLAB_OUT_DIR (or the current directory) / <experiment>-<hash>.<ext>.
  std::filesystem::path out_path;
  // Fixed timestamp for tests; the clock otherwise.
  std::optional<std::string> timestamp;
};

// Runs one experiment and returns its report (not written).
Report execute(const ExperimentConfig& config, const RunContext& context);

struct RunResult {
  Report report;
  std::filesystem::path path;
};

RunResult run(const ExperimentConfig& config, const RunContext& context);

// Maps the current exception to an exit code and writes its message to err.
int exit_code_for_current_exception(std::ostream& err);

}  // namespace cdlab::expcli
