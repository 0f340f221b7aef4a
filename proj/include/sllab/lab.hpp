#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "sllab/localization.hpp"

namespace sllab {

enum class Experiment { kSimulate, kSchedule, kAssistFn, kHeatflow, kSpectral, kVerifyAll };
const char* to_string(Experiment e);

enum class Backend { kProduct, kPool };

/// Flat key = value configuration. Every field has a key of the same name;
/// see RunConfig::keys() for the documented ranges.
struct RunConfig {
  Experiment experiment = Experiment::kVerifyAll;
  std::string measure = "gaussian";
  std::size_t dim = 4;
  std::size_t paths = 10000;
  std::size_t pool_size = 100000;
  Backend backend = Backend::kProduct;
  Driver driver = Driver::kTiltExact;
  double dt = 1e-3;
  std::vector<double> t_grid;  // default 0, 0.05, ..., 1
  double t_end = 1.0;          // Euler-Maruyama horizon
  std::size_t record_stride = 50;
  double C2 = 1.0;
  double cap_D0 = 200.0;
  double threshold_log = -1000.0;
  double toy_exponent = 1000.0;
  double log_log_n = 500.0;
  double D0 = 5.0;
  double r0 = 2.5;
  std::vector<double> s_values{0.1, 0.5, 1.0, 2.0};
  std::size_t spectral_cells = 4000;
  std::size_t spectral_modes = 200;
  std::size_t ks_paths = 10000;
  std::size_t assist_cases = 200;
  std::size_t dyadic_cases = 1000;
  std::size_t projection_inputs = 20;
  std::uint64_t base_seed = 20240601;
  std::string out_dir = "sllab-out";
  // Check names or anchors whose failure does not affect the exit status.
  std::vector<std::string> diagnostic{"opnorm_tail", "gk2"};

  RunConfig();

  // Applies one key = value pair; unknown keys and out-of-range values throw
  // a config error naming the key.
  void set(const std::string& key, const std::string& value);
  // Range checks that involve several keys.
  void validate() const;
  // Key/value snapshot in a fixed order, values as they would be written.
  std::vector<std::pair<std::string, std::string>> snapshot() const;

  static const std::vector<std::pair<std::string, std::string>>& keys();
};

// Parses the flat format: one key = value per line, '#' starts a comment.
// Errors carry "<source>:<line>: ..." diagnostics.
RunConfig parse_config(std::istream& in, const std::string& source = "<config>");
RunConfig load_config(const std::string& path);
// "key=value" override from the command line.
void apply_override(RunConfig& config, const std::string& assignment);

struct CheckRecord {
  std::string name;
  std::string anchor;
  std::string measure;
  std::string param;
  double lhs = 0.0;
  double rhs = 0.0;
  double tolerance = 0.0;
  double margin = 0.0;  // positive when the check holds with room to spare
  bool pass = false;
  bool required = true;
  std::string note;
};

struct FileRecord {
  std::string path;  // relative to out_dir
  std::string sha256;
  std::size_t bytes = 0;
};

struct RunManifest {
  std::vector<std::pair<std::string, std::string>> config;
  std::string version;
  std::string started;
  std::string finished;
  double runtime_seconds = 0.0;
  std::vector<CheckRecord> checks;
  std::vector<FileRecord> files;
  bool pass() const;  // all pass-required checks pass
};

// Runs the configured experiment, writes artifacts and manifest.json into
// out_dir. Module errors become failed checks.
RunManifest run(const RunConfig& config);

std::string manifest_json(const RunManifest& m);
RunManifest load_manifest(const std::string& path);
void write_checks_csv(const std::vector<CheckRecord>& checks, std::ostream& out);
std::string sha256_hex(const std::string& bytes);

struct ReportRow {
  std::string source;
  CheckRecord check;
};
struct Report {
  std::vector<ReportRow> rows;   // sorted by (anchor, measure)
  std::vector<std::string> notes;
  std::size_t required_failures = 0;
  bool pass() const { return required_failures == 0; }
};
Report report(const std::vector<std::pair<std::string, RunManifest>>& manifests);
void write_report_csv(const Report& r, std::ostream& out);
void write_report_text(const Report& r, std::ostream& out);

std::string version_string();

}  // namespace sllab
