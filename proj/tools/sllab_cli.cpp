#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>

#include "sllab/error.hpp"
#include "sllab/lab.hpp"

namespace {

struct Common {
  std::string config;
  std::vector<std::string> overrides;
  std::string out_dir;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("-c,--config", c.config, "key = value configuration file")
      ->check(CLI::ExistingFile);
  app->add_option("-s,--set", c.overrides, "override, key=value (repeatable)");
  app->add_option("-o,--out", c.out_dir, "output directory (same as --set out_dir=...)");
}

sllab::RunConfig build_config(const Common& c, const std::string& experiment) {
  sllab::RunConfig cfg = c.config.empty() ? sllab::RunConfig{} : sllab::load_config(c.config);
  cfg.set("experiment", experiment);
  for (const auto& o : c.overrides) sllab::apply_override(cfg, o);
  if (!c.out_dir.empty()) cfg.set("out_dir", c.out_dir);
  cfg.validate();
  return cfg;
}

int summarize(const sllab::RunManifest& m, const std::string& out_dir) {
  std::size_t failed = 0, diagnostic = 0;
  for (const auto& c : m.checks) {
    if (c.pass) continue;
    if (c.required) {
      ++failed;
      std::cerr << "FAIL " << c.anchor << " " << c.name << " [" << c.measure << "] "
                << c.param << (c.note.empty() ? "" : "  " + c.note) << "\n";
    } else {
      ++diagnostic;
    }
  }
  std::cout << m.checks.size() << " checks, " << failed << " required failures, "
            << diagnostic << " diagnostic misses, " << m.runtime_seconds
            << " s; manifest in " << out_dir << "/manifest.json\n";
  return failed == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Stochastic-localization verification lab"};
  app.require_subcommand(0, 1);
  app.set_version_flag("--version", sllab::version_string());

  Common common;
  bool list_keys = false;
  app.add_flag("--list-keys", list_keys, "print the configuration keys and exit");

  struct Sub {
    const char* name;
    const char* help;
  };
  const Sub subs[] = {
      {"simulate", "run localization ensembles and their checks"},
      {"schedule", "build the time schedule and check it"},
      {"assistfn", "build an assistant function and validate it"},
      {"heatflow", "smoothed-measure identities and the marginal-convexity check"},
      {"spectral", "generator spectrum, Poincare and isoperimetric checks"},
      {"verify-all", "every suite on the selected measures"},
  };
  std::map<std::string, CLI::App*> apps;
  for (const auto& s : subs) {
    apps[s.name] = app.add_subcommand(s.name, s.help);
    add_common(apps[s.name], common);
  }
  std::string assist_mode, heat_mode;
  apps["assistfn"]
      ->add_option("mode", assist_mode, "'dump' also prints assistfn.json")
      ->check(CLI::IsMember({"dump"}));
  apps["heatflow"]
      ->add_option("mode", heat_mode, "'check' (the default) runs every heatflow check")
      ->check(CLI::IsMember({"check"}));

  auto* report_cmd = app.add_subcommand("report", "consolidate manifests into one table");
  std::vector<std::string> manifests;
  std::string report_csv;
  report_cmd->add_option("manifests", manifests, "manifest.json files or run directories")
      ->required();
  report_cmd->add_option("--csv", report_csv, "also write the table as CSV");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }
  if (list_keys) {
    for (const auto& [k, doc] : sllab::RunConfig::keys()) std::cout << k << "  " << doc << "\n";
    return 0;
  }
  if (app.get_subcommands().empty()) {
    std::cerr << app.help();
    return 2;
  }

  try {
    if (report_cmd->parsed()) {
      std::vector<std::pair<std::string, sllab::RunManifest>> ms;
      for (std::string p : manifests) {
        if (std::filesystem::is_directory(p)) p = (std::filesystem::path(p) / "manifest.json").string();
        ms.emplace_back(p, sllab::load_manifest(p));
      }
      const auto r = sllab::report(ms);
      sllab::write_report_text(r, std::cout);
      if (!report_csv.empty()) {
        std::ofstream out(report_csv, std::ios::binary);
        sllab::write_report_csv(r, out);
        if (!out) throw sllab::LabError(sllab::ErrorKind::kIo, "cannot write " + report_csv);
      }
      return r.pass() ? 0 : 1;
    }
    for (const auto& [name, sub] : apps) {
      if (!sub->parsed()) continue;
      const sllab::RunConfig cfg = build_config(common, name);
      const sllab::RunManifest m = sllab::run(cfg);
      if (name == "assistfn" && assist_mode == "dump") {
        std::ifstream in(std::filesystem::path(cfg.out_dir) / "assistfn.json");
        std::cout << in.rdbuf();
      }
      return summarize(m, cfg.out_dir);
    }
  } catch (const sllab::LabError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
