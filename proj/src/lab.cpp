#include "sllab/lab.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <memory>
#include <numbers>
#include <sstream>
#include <json.hpp>

#include "sllab/assist.hpp"
#include "sllab/error.hpp"
#include "sllab/heatflow.hpp"
#include "sllab/measures.hpp"
#include "sllab/numerics.hpp"
#include "sllab/rng.hpp"
#include "sllab/spectral.hpp"

namespace sllab {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

[[noreturn]] void config_error(const std::string& key, const std::string& msg) {
  throw LabError(ErrorKind::kConfig, "key '" + key + "': " + msg);
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double parse_double(const std::string& key, const std::string& v) {
  double x = 0.0;
  const auto r = std::from_chars(v.data(), v.data() + v.size(), x);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size() || !std::isfinite(x)) {
    config_error(key, "expected a finite number, got '" + v + "'");
  }
  return x;
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  std::uint64_t x = 0;
  const auto r = std::from_chars(v.data(), v.data() + v.size(), x);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size()) {
    config_error(key, "expected an unsigned integer, got '" + v + "'");
  }
  return x;
}

std::size_t parse_count(const std::string& key, const std::string& v,
                        std::size_t lo, std::size_t hi) {
  const std::uint64_t x = parse_u64(key, v);
  if (x < lo || x > hi) {
    config_error(key, "must lie in [" + std::to_string(lo) + ", " +
                          std::to_string(hi) + "], got " + v);
  }
  return static_cast<std::size_t>(x);
}

double parse_range(const std::string& key, const std::string& v, double lo,
                   double hi, bool open_lo) {
  const double x = parse_double(key, v);
  if ((open_lo ? x <= lo : x < lo) || x > hi) {
    config_error(key, std::string("must lie in ") + (open_lo ? "(" : "[") +
                          format_double(lo) + ", " + format_double(hi) +
                          "], got " + v);
  }
  return x;
}

std::vector<std::string> split(const std::string& v, char sep) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(v);
  while (std::getline(in, item, sep)) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

// Rounds to 12 significant digits so 0.05 * 3 reads back as 0.15.
double snap(double x) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.12g", x);
  return std::strtod(buf, nullptr);
}

// Comma list of numbers; an item lo:step:hi expands to an inclusive range.
std::vector<double> parse_list(const std::string& key, const std::string& v) {
  std::vector<double> out;
  for (const std::string& item : split(v, ',')) {
    const auto parts = split(item, ':');
    if (parts.size() == 3) {
      const double lo = parse_double(key, parts[0]);
      const double step = parse_double(key, parts[1]);
      const double hi = parse_double(key, parts[2]);
      if (!(step > 0.0) || hi < lo) config_error(key, "bad range '" + item + "'");
      const long count = std::lround(std::floor((hi - lo) / step + 1e-9));
      for (long k = 0; k <= count; ++k) {
        out.push_back(snap(lo + step * static_cast<double>(k)));
      }
    } else if (parts.size() == 1) {
      out.push_back(parse_double(key, parts[0]));
    } else {
      config_error(key, "bad list item '" + item + "'");
    }
  }
  if (out.empty()) config_error(key, "list is empty");
  return out;
}

std::string join_doubles(const std::vector<double>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ',';
    s += format_double(v[i]);
  }
  return s;
}

std::string join_strings(const std::vector<std::string>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ',';
    s += v[i];
  }
  return s;
}

std::string iso_now() {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) {
    if (c == '"') q += '"';
    q += c;
  }
  return q + "\"";
}

std::string param(std::initializer_list<std::pair<const char*, double>> kv) {
  std::string s;
  for (const auto& [k, v] : kv) {
    if (!s.empty()) s += ';';
    s += k;
    s += '=';
    s += format_double(v);
  }
  return s;
}

// ---------------------------------------------------------------------------
// Check collection and artifact output.

class Checks {
 public:
  explicit Checks(const RunConfig& cfg) : diagnostic_(cfg.diagnostic) {}

  void add(CheckRecord r) {
    r.required = !is_diagnostic(r.name) && !is_diagnostic(r.anchor);
    rows_.push_back(std::move(r));
  }

  void add(std::string name, std::string anchor, std::string measure,
           std::string par, double lhs, double rhs, double tol, double margin,
           bool pass, std::string note = {}) {
    CheckRecord r;
    r.name = std::move(name);
    r.anchor = std::move(anchor);
    r.measure = std::move(measure);
    r.param = std::move(par);
    r.lhs = lhs;
    r.rhs = rhs;
    r.tolerance = tol;
    r.margin = margin;
    r.pass = pass;
    r.note = std::move(note);
    add(std::move(r));
  }

  void add(const std::string& name, const std::string& anchor,
           const std::string& measure, const std::string& par,
           const ComparisonRow& c) {
    add(name, anchor, measure, par.empty() ? param({{"t", c.t}}) : par, c.lhs,
        c.rhs, c.tolerance, c.tolerance - std::abs(c.lhs - c.rhs), c.pass,
        c.label);
  }

  void add(const std::string& name, const std::string& anchor,
           const std::string& measure, const std::string& par,
           const IdentityResult& r, std::string note = {}) {
    add(name, anchor, measure, par, r.lhs, r.rhs, r.tolerance,
        r.tolerance - r.rel_err, r.pass, std::move(note));
  }

  // Runs body; a thrown error becomes one failed check.
  template <class F>
  void guard(const std::string& name, const std::string& anchor,
             const std::string& measure, const std::string& par, F&& body) {
    try {
      body();
    } catch (const LabError& e) {
      add(name, anchor, measure, par, kNaN, kNaN, kNaN, kNaN, false, e.what());
    } catch (const std::exception& e) {
      add(name, anchor, measure, par, kNaN, kNaN, kNaN, kNaN, false, e.what());
    }
  }

  std::vector<CheckRecord> take() { return std::move(rows_); }

 private:
  bool is_diagnostic(const std::string& s) const {
    return std::find(diagnostic_.begin(), diagnostic_.end(), s) != diagnostic_.end();
  }
  std::vector<std::string> diagnostic_;
  std::vector<CheckRecord> rows_;
};

class Artifacts {
 public:
  explicit Artifacts(std::string dir) : dir_(std::move(dir)) {
    std::error_code ec;
    fs::create_directories(dir_, ec);
    if (ec) throw LabError(ErrorKind::kIo, "cannot create " + dir_ + ": " + ec.message());
  }

  void write(const std::string& name, const std::string& content) {
    const fs::path p = fs::path(dir_) / name;
    std::ofstream out(p, std::ios::binary);
    out << content;
    if (!out) throw LabError(ErrorKind::kIo, "cannot write " + p.string());
    files_.push_back({name, sha256_hex(content), content.size()});
  }

  // For files produced by module writers.
  void record(const std::string& name) {
    const fs::path p = fs::path(dir_) / name;
    std::ifstream in(p, std::ios::binary);
    if (!in) throw LabError(ErrorKind::kIo, "cannot read " + p.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    const std::string bytes = ss.str();
    files_.push_back({name, sha256_hex(bytes), bytes.size()});
  }

  std::string path(const std::string& name) const {
    return (fs::path(dir_) / name).string();
  }

  std::vector<FileRecord> take() { return std::move(files_); }

 private:
  std::string dir_;
  std::vector<FileRecord> files_;
};

std::vector<std::string> selected_measures(const RunConfig& cfg) {
  if (cfg.measure == "catalog") return measure_keys();
  return {cfg.measure};
}

// Artifact name, with the measure appended when a run covers several.
std::string per_measure(const RunConfig& cfg, const std::string& stem,
                        const std::string& ext, const std::string& key) {
  if (cfg.measure == "catalog") return stem + "-" + key + ext;
  return stem + ext;
}

std::unique_ptr<PosteriorEngine> make_engine(const RunConfig& cfg,
                                             const MeasureModel& m) {
  if (cfg.backend == Backend::kProduct) {
    if (!m.factor) {
      throw LabError(ErrorKind::kConfig, "product backend needs a product measure");
    }
    return std::make_unique<ProductPosterior>(m);
  }
  auto pool = std::make_shared<SamplePool>(
      draw_pool(m, cfg.pool_size, mix64(cfg.base_seed ^ 0x706f6f6cULL)));
  return std::make_unique<PoolPosterior>(pool);
}

// ---------------------------------------------------------------------------
// simulate

void gaussian_exactness(const std::vector<LocalizationPath>& paths,
                        const EnsembleStats& st, std::size_t n, Checks& c) {
  for (std::size_t k = 0; k < st.per_time.size(); ++k) {
    const TimeStats& ts = st.per_time[k];
    const double t = ts.t;
    const double expect = t * static_cast<double>(n) / (1.0 + t);
    const double tol = 3.0 * ts.a_norm_sq.se + 1e-10;
    c.add("gaussian_a_norm_sq", "pt", "gaussian", param({{"t", t}}),
          ts.a_norm_sq.mean, expect, tol,
          tol - std::abs(ts.a_norm_sq.mean - expect),
          std::abs(ts.a_norm_sq.mean - expect) <= tol);

    double worst_dev = 0.0, worst_tol = 1e-10, margin = INFINITY;
    std::vector<double> xs(paths.size());
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i; j < n; ++j) {
        for (std::size_t p = 0; p < paths.size(); ++p) {
          xs[p] = paths[p].states[k].covariance(i, j);
        }
        const MeanSe ms = mean_se(xs);
        const double target = (i == j) ? 1.0 / (1.0 + t) : 0.0;
        const double dev = std::abs(ms.mean - target);
        const double etol = 3.0 * ms.se + 1e-10;
        if (etol - dev < margin) {
          margin = etol - dev;
          worst_dev = dev;
          worst_tol = etol;
        }
      }
    }
    c.add("gaussian_covariance", "pt", "gaussian", param({{"t", t}}), worst_dev,
          0.0, worst_tol, margin, margin >= 0.0, "max entrywise deviation");
  }
}

void band_checks(const EnsembleStats& st, std::size_t n, const std::string& key,
                 Checks& c) {
  const double nd = static_cast<double>(n);
  for (const TimeStats& ts : st.per_time) {
    if (ts.t > 0.05 + 1e-12) continue;
    const std::string par = param({{"t", ts.t}, {"n", nd}});
    {
      const double v = ts.tr_A_sq.mean, slack = 3.0 * ts.tr_A_sq.se;
      const double margin = std::min(v - nd / 2.0, 8.0 * nd - v) + slack;
      c.add("band_trace_sq", "000med", key, par, v, nd / 2.0, slack, margin,
            margin >= 0.0, "interval [n/2, 8n]");
    }
    if (ts.t > 0.0) {
      const double v = ts.a_norm_sq.mean, slack = 3.0 * ts.a_norm_sq.se;
      const double lo = ts.t * nd / 2.0, hi = 8.0 * ts.t * nd;
      const double margin = std::min(v - lo, hi - v) + slack;
      c.add("band_a_norm_sq", "medd", key, par, v, lo, slack, margin,
            margin >= 0.0, "interval [tn/2, 8tn]");
    }
  }
}

void simulate_measure(const RunConfig& cfg, const std::string& key, Checks& c,
                      Artifacts& art) {
  c.guard("simulate", "p", key, param({{"n", double(cfg.dim)}}), [&] {
    const MeasureModel m = make_measure(key, cfg.dim);
    const auto engine = make_engine(cfg, m);
    EnsembleSpec spec;
    spec.driver = cfg.driver;
    spec.times = cfg.t_grid;
    spec.dt = cfg.dt;
    spec.t_end = cfg.t_end;
    spec.paths = cfg.paths;
    spec.base_seed = cfg.base_seed;
    spec.options.third_moments = cfg.dim <= 4;
    spec.options.record_stride = cfg.record_stride;
    const auto paths = simulate_ensemble(m, *engine, spec);
    const std::string file = per_measure(cfg, "paths", ".csv", key);
    write_paths_csv(paths, art.path(file));
    art.record(file);

    const EnsembleStats st = ensemble_stats(paths);
    if (key == "gaussian") gaussian_exactness(paths, st, cfg.dim, c);

    const MartingaleReport mr = martingale_checks(paths);
    for (const auto& row : mr.conservation) c.add("conservation", "p", key, "", row);
    // Drift rows are entrywise; keep the tightest entry per time.
    std::map<double, const ComparisonRow*> worst;
    for (const auto& row : mr.drift) {
      const double m0 = row.tolerance - std::abs(row.lhs - row.rhs);
      auto it = worst.find(row.t);
      if (it == worst.end() ||
          m0 < it->second->tolerance - std::abs(it->second->lhs - it->second->rhs)) {
        worst[row.t] = &row;
      }
    }
    for (const auto& [t, row] : worst) c.add("covariance_drift", "b2", key, "", *row);

    const double t_lo = std::max(0.1, paths.front().times.at(1));
    const double t_hi = std::min(1.0, paths.front().times.back());
    if (t_hi > t_lo) {
      c.guard("derivative_identity", "one dir", key, "", [&] {
        const auto dr = derivative_identity_check(paths, t_lo, t_hi);
        for (const auto& row : dr.rows) c.add("derivative_identity", "one dir", key, "", row);
      });
    }

    if (spec.options.third_moments) {
      c.guard("eigen_drift", "a1", key, "", [&] {
        const auto er = eigen_drift_check(paths, identity_function());
        for (const auto& row : er.rows) c.add("eigen_drift", "a1", key, "", row);
      });
      for (double r : {1.0, 3.0}) {
        const auto mb = moment_bound_check(paths, r);
        c.add("moment_bound", "ba1", key, param({{"r", r}}), mb.worst_ratio, 1.0,
              0.0, 1.0 - mb.worst_ratio, mb.violations == 0,
              std::to_string(mb.violations) + " violations in " +
                  std::to_string(mb.checked));
      }
    }
    const auto lc = lichnerowicz_cap_check(paths);
    c.add("lichnerowicz_cap", "Lic", key, "", lc.worst_excess + 1.0, 1.0, 0.0,
          -lc.worst_excess, lc.violations == 0,
          std::to_string(lc.violations) + " violations in " + std::to_string(lc.checked));

    band_checks(st, cfg.dim, key, c);

    double t0 = 0.0;
    for (double t : paths.front().times) {
      if (t > 0.0) {
        t0 = t;
        break;
      }
    }
    if (t0 > 0.0) {
      c.guard("growth", "in2", key, param({{"t0", t0}}), [&] {
        const AssistFn fn = build_assist_fn(cfg.D0, cfg.r0);
        const auto gr = growth_bound_check(paths, fn, t0, cfg.toy_exponent,
                                           paths.front().times.back());
        auto emit = [&](const std::string& name, double exponent,
                        const std::vector<GrowthRow>& rows) {
          for (const auto& row : rows) {
            const double tol = 1.0 + 3.0 * row.se;
            c.add(name, "in2", key, param({{"t", row.t}, {"exponent", exponent}}),
                  row.ratio, 1.0, 3.0 * row.se, tol - row.ratio, row.pass);
          }
        };
        emit("growth", 1000.0, gr.bound_rows);
        if (cfg.toy_exponent != 1000.0) emit("growth_toy", cfg.toy_exponent, gr.rows);
      });
    }

    for (const auto& row : opnorm_tail(paths, cfg.C2)) {
      c.add("opnorm_tail", "oper", key, param({{"t", row.t}, {"C2", cfg.C2}}),
            row.frequency, row.bound, row.wilson_hi - row.wilson_lo,
            row.bound - row.wilson_lo, row.wilson_lo <= row.bound,
            "Wilson [" + format_double(row.wilson_lo) + ", " +
                format_double(row.wilson_hi) + "]");
    }
  });
}

// Band property at larger n on a short grid.
void band_suite(const RunConfig& cfg, const std::string& key, Checks& c) {
  for (std::size_t n : {std::size_t{8}, std::size_t{16}}) {
    if (n == cfg.dim) continue;
    c.guard("band", "000med", key, param({{"n", double(n)}}), [&] {
      const MeasureModel m = make_measure(key, n);
      const ProductPosterior engine(m);
      EnsembleSpec spec;
      spec.times = {0.0, 0.025, 0.05};
      spec.paths = std::min<std::size_t>(cfg.paths, 2000);
      spec.base_seed = mix64(cfg.base_seed + n);
      band_checks(ensemble_stats(simulate_ensemble(m, engine, spec)), n, key, c);
    });
  }
}

// TiltExact against Euler-Maruyama on the exponential product, n = 2.
void driver_equivalence(const RunConfig& cfg, Checks& c) {
  c.guard("driver_equivalence", "pt", "exponential", "", [&] {
    const MeasureModel m = make_measure("exponential", 2);
    const ProductPosterior engine(m);
    EnsembleSpec em;
    em.driver = Driver::kEulerMaruyama;
    em.dt = cfg.dt;
    em.t_end = 1.0;
    em.paths = cfg.ks_paths;
    em.base_seed = mix64(cfg.base_seed ^ 0x656dULL);
    em.options.record_stride =
        std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(0.5 / cfg.dt)));
    EnsembleSpec ex;
    ex.times = {0.0, 0.5, 1.0};
    ex.paths = cfg.ks_paths;
    ex.base_seed = mix64(cfg.base_seed ^ 0x6578ULL);
    const auto a = simulate_ensemble(m, engine, em);
    const auto b = simulate_ensemble(m, engine, ex);
    for (double t : {0.5, 1.0}) {
      auto pick = [t](const std::vector<LocalizationPath>& ps) {
        std::vector<double> v;
        v.reserve(ps.size());
        for (const auto& p : ps) {
          std::size_t k = 0;
          while (k + 1 < p.times.size() && std::abs(p.times[k] - t) > 1e-9) ++k;
          if (std::abs(p.times[k] - t) > 1e-9) {
            throw LabError(ErrorKind::kConfig, "time " + format_double(t) + " not recorded");
          }
          v.push_back(p.states[k].theta[0]);
        }
        return v;
      };
      const KsResult ks = ks_two_sample(pick(a), pick(b));
      c.add("driver_equivalence", "pt", "exponential",
            param({{"t", t}, {"dt", cfg.dt}, {"paths", double(cfg.ks_paths)}}),
            ks.statistic, ks.critical, 0.0, ks.critical - ks.statistic, ks.pass,
            "two-sample KS at 1%");
    }
  });
}

// ---------------------------------------------------------------------------
// schedule and assistant functions

json schedule_json(const Schedule& s) {
  json j;
  j["C2"] = s.C2;
  j["Lambda"] = s.log_log_n;
  j["k0"] = s.k0;
  j["log_t"] = s.log_t;
  j["log_abs_log_t"] = s.log_abs_log_t;
  j["s_seq"] = s.s_seq;
  j["threshold_log"] = s.threshold_log;
  j["overflow_flag"] = s.overflow_flag;
  return j;
}

void schedule_checks(double lambda, double C2, const RunConfig& cfg, Checks& c,
                     Schedule* out = nullptr) {
  const std::string par = param({{"Lambda", lambda}, {"C2", C2}});
  c.guard("schedule", "tk", "", par, [&] {
    const Schedule s = build_schedule(lambda, C2, cfg.threshold_log);
    if (out) *out = s;
    // t_k <= t_{k+1}^2  <=>  log|l_k| >= log 2 + log|l_{k+1}|
    double gap = INFINITY;
    for (std::size_t k = 0; k + 1 < s.log_abs_log_t.size(); ++k) {
      gap = std::min(gap, s.log_abs_log_t[k] - s.log_abs_log_t[k + 1]);
    }
    if (std::isfinite(gap)) {
      c.add("schedule_squares", "tk", "", par, gap, std::numbers::ln2, 0.0,
            gap - std::numbers::ln2, gap >= std::numbers::ln2,
            "min log|l_k| - log|l_{k+1}|");
    }
    double lo = INFINITY, hi = -INFINITY;
    for (double v : s.s_seq) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    const double margin = std::min(lo - 7.0 / 3.0, 8.0 / 3.0 - hi);
    c.add("schedule_s_window", "inc", "", par, hi, 8.0 / 3.0, 0.0, margin,
          margin >= 0.0, "min s " + format_double(lo));
    double sum = 0.0;
    for (int k = 1; k <= s.k0 && k < static_cast<int>(s.log_abs_log_t.size()); ++k) {
      sum += std::exp(-0.5 * s.log_abs_log_t[k]);
    }
    c.add("schedule_increment_sum", "inc", "", par, sum, 1.0 / 3.0, 0.0,
          1.0 / 3.0 - sum, sum <= 1.0 / 3.0);
    if (lambda == 500.0 && C2 == 1.0) {
      const double l2 = s.log_t.size() > 1 ? s.log_t[1] : kNaN;
      const bool ok = s.k0 == 2 && std::abs(l2 + 8011.1) <= 0.1;
      c.add("schedule_regression", "ttkk", "", par, l2, -8011.1, 0.1,
            0.1 - std::abs(l2 + 8011.1), ok, "k0 = " + std::to_string(s.k0));
    }
    const auto family = f_family(s, cfg.cap_D0);
    std::size_t bad = 0;
    for (const auto& member : family) {
      if (!validate(member.fn).ok()) ++bad;
    }
    c.add("schedule_family", "Step5", "", par, static_cast<double>(bad), 0.0, 0.0,
          0.0 - static_cast<double>(bad), bad == 0,
          std::to_string(family.size()) + " members");
  });
}

struct InvariantTally {
  std::size_t cases = 0;
  std::array<std::size_t, 8> failures{};
  double worst_continuity = 0.0;
  double worst_sece = 0.0;
  void add(const AssistValidation& v) {
    ++cases;
    const bool flags[8] = {v.b_window, v.exp_branch, v.quad_branch,
                           v.continuity, v.second_derivative_bound,
                           v.increasing, v.plateau_bounds, v.knot_derivatives};
    for (int i = 0; i < 8; ++i) failures[i] += flags[i] ? 0 : 1;
    worst_continuity = std::max(worst_continuity, v.worst_continuity);
    worst_sece = std::max(worst_sece, v.worst_sece_ratio);
  }
};

void emit_tally(const InvariantTally& t, const std::string& par, Checks& c) {
  static const std::array<std::pair<const char*, const char*>, 8> names{{
      {"assist_b_window", "sece"},
      {"assist_exp_branch", "fr"},
      {"assist_quad_branch", "fr2"},
      {"assist_continuity", "Step5"},
      {"assist_second_derivative", "sece"},
      {"assist_increasing", "Step5"},
      {"assist_plateau", "bod"},
      {"assist_knot_derivatives", "fs"},
  }};
  for (int i = 0; i < 8; ++i) {
    const double f = static_cast<double>(t.failures[i]);
    std::string note = std::to_string(t.cases) + " functions";
    if (i == 3) note += "; worst relative jump " + format_double(t.worst_continuity);
    if (i == 4) note += "; worst |f''|/(D0^2 f) " + format_double(t.worst_sece);
    c.add(names[i].first, names[i].second, "", par, f, 0.0, 0.0, 0.0 - f, f == 0.0, note);
  }
}

json assist_json(const AssistFn& fn) {
  json j;
  j["D0"] = fn.D0;
  j["r0"] = fn.r0;
  j["c"] = fn.c;
  j["s"] = fn.s;
  j["b"] = fn.b;
  j["r1"] = fn.r1;
  j["knots"] = fn.knots;
  j["c_halvings"] = fn.c_halvings;
  json samples = json::array();
  const double lo = fn.knots[0] - 1.0 / fn.D0;
  const double hi = fn.r0 + 1.0;
  constexpr int kSamples = 201;
  for (int i = 0; i < kSamples; ++i) {
    const double r = lo + (hi - lo) * i / (kSamples - 1);
    samples.push_back({r, eval(fn, r), eval(fn, r, EvalMode::kD1),
                       eval(fn, r, EvalMode::kD2)});
  }
  j["grid_samples"] = std::move(samples);
  return j;
}

void assist_suite(const RunConfig& cfg, Checks& c) {
  c.guard("assist_random", "Step5", "", "", [&] {
    InvariantTally tally;
    for (std::size_t i = 0; i < cfg.assist_cases; ++i) {
      Philox rng(stream_key(mix64(cfg.base_seed ^ 0x617373ULL), i));
      const double D0 = 4.0 * std::pow(50.0, rng.uniform());
      const double r0 = 7.0 / 3.0 + rng.uniform() / 3.0;
      tally.add(validate(build_assist_fn(D0, r0)));
    }
    emit_tally(tally, param({{"cases", double(cfg.assist_cases)}}), c);
  });
}

// Random non-increasing h on [0, 2^N]: piecewise-linear or a smooth mixture.
std::vector<double> random_h(Philox& rng, int N, bool linear) {
  const double len = std::ldexp(1.0, N);
  const std::size_t count = static_cast<std::size_t>(len * 64.0) + 1;
  std::vector<double> h(count);
  const double h0 = 0.5 + 9.5 * rng.uniform();
  if (linear) {
    const int knots = 1 + static_cast<int>(rng.uniform() * 12.0);
    std::vector<double> xs{0.0, len}, drops;
    for (int k = 0; k < knots; ++k) xs.push_back(len * rng.uniform());
    std::sort(xs.begin(), xs.end());
    double total = 0.0;
    for (std::size_t k = 0; k + 1 < xs.size(); ++k) {
      drops.push_back(rng.uniform() < 0.2 ? 0.0 : rng.exponential());
      total += drops.back();
    }
    const double scale = total > 0.0 ? h0 * rng.uniform() / total : 0.0;
    std::vector<double> ys{h0};
    for (double d : drops) ys.push_back(ys.back() - d * scale);
    for (std::size_t i = 0; i < count; ++i) {
      const double x = len * static_cast<double>(i) / static_cast<double>(count - 1);
      std::size_t k = std::upper_bound(xs.begin(), xs.end(), x) - xs.begin();
      k = std::clamp<std::size_t>(k, 1, xs.size() - 1);
      const double w = xs[k] > xs[k - 1] ? (x - xs[k - 1]) / (xs[k] - xs[k - 1]) : 1.0;
      h[i] = std::max(0.0, ys[k - 1] + w * (ys[k] - ys[k - 1]));
    }
    // Rounding may break monotonicity by an ulp.
    for (std::size_t i = 1; i < count; ++i) h[i] = std::min(h[i], h[i - 1]);
  } else {
    const double a = rng.uniform(), tau = 0.05 + 4.0 * rng.uniform();
    const double p = 0.5 + 2.0 * rng.uniform();
    for (std::size_t i = 0; i < count; ++i) {
      const double x = len * static_cast<double>(i) / static_cast<double>(count - 1);
      h[i] = h0 * (a * std::exp(-x / tau) + (1.0 - a) * std::pow(1.0 + x, -p));
    }
  }
  return h;
}

void dyadic_suite(const RunConfig& cfg, Checks& c) {
  c.guard("dyadic", "Tecn", "", "", [&] {
    std::size_t violations = 0;
    double worst = 0.0;
    for (std::size_t i = 0; i < cfg.dyadic_cases; ++i) {
      Philox rng(stream_key(mix64(cfg.base_seed ^ 0x647961ULL), i));
      const int N = static_cast<int>(rng.uniform() * 7.0);
      const auto h = random_h(rng, N, i % 2 == 0);
      const DyadicResult r = dyadic_bound_check(h, N);
      if (!r.pass) ++violations;
      if (r.rhs > 0.0) worst = std::max(worst, r.lhs / r.rhs);
    }
    c.add("dyadic_bound", "Tecn", "", param({{"cases", double(cfg.dyadic_cases)}}),
          static_cast<double>(violations), 0.0, 0.0,
          0.0 - static_cast<double>(violations), violations == 0,
          "worst lhs/rhs " + format_double(worst));
  });
}

// ---------------------------------------------------------------------------
// heatflow

void heatflow_measure(const RunConfig& cfg, const std::string& key, Checks& c) {
  const MeasureModel m1 = make_measure(key, 1);
  const TestFunction bump3 = poly_compact_bump({0.0, 0.0, 0.0, 1.0}, 3.0);
  const std::vector<TestFunction> kp_family{
      poly_gaussian_bump({0.0, 1.0}, 1.0),
      poly_gaussian_bump({1.0, -0.5, 0.25, 0.1}, 1.5),
      bump3,
  };
  for (double s : cfg.s_values) {
    const std::string ps = param({{"s", s}});
    c.guard("variance_identity", "cn", key, ps, [&] {
      const auto r = variance_identity_check(make_measure(key, cfg.dim), s);
      std::string note;
      if (key == "gaussian") {
        const double exact = 2.0 * (1.0 + s) * (1.0 + s) * double(cfg.dim);
        note = "closed form " + format_double(exact);
        c.add("variance_identity_gaussian", "cn", key, ps, r.lhs, exact, 1e-10,
              1e-10 - std::abs(r.lhs - exact) / exact,
              std::abs(r.lhs - exact) <= 1e-10 * exact);
      }
      c.add("variance_identity", "cn", key, param({{"s", s}, {"n", double(cfg.dim)}}),
            r, note);
    });
    c.guard("hessian_window", "Id", key, ps, [&] {
      const auto r = hessian_window_check(m1, s);
      const double margin = std::min(r.worst_lower_slack, r.worst_upper_slack);
      c.add("hessian_window", "Id", key, ps, r.min_hessian, -1.0 / s, 0.0, margin,
            r.window_pass, "max " + format_double(r.max_hessian));
      if (r.theta_applicable) {
        const double lo = *std::min_element(r.theta_values.begin(), r.theta_values.end());
        c.add("fisher_information", "theta", key, ps, lo, 1.0, 1e-6, lo - 1.0 + 1e-6,
              r.theta_pass);
      }
    });
    for (const auto& u : kp_family) {
      c.guard("gradient_contraction", "KP", key, ps, [&] {
        c.add("gradient_contraction", "KP", key, ps,
              gradient_contraction_check(m1, u, s), u.name);
      });
    }
    c.guard("adjointness", "Q", key, ps, [&] {
      c.add("adjointness", "Q", key, ps,
            adjointness_check(m1, bump3, poly_gaussian_bump({1.0, -1.0, 0.5}, 2.0), s));
    });
    c.guard("bochner", "boc", key, ps, [&] {
      Resolution res;
      res.nodes = 4001;
      const auto r = bochner_gamma2_check(smooth(m1, s, res), bump3);
      const std::array<const IdentityResult*, 4> ids{&r.bochner, &r.gamma2,
                                                     &r.dissipation0, &r.dissipation1};
      const std::array<const char*, 4> names{"bochner", "gamma2", "dissipation_k0",
                                             "dissipation_k1"};
      const std::array<const char*, 4> anchors{"boc", "gat", "di", "di"};
      for (int i = 0; i < 4; ++i) {
        c.add(names[i], anchors[i], key, ps, *ids[i],
              "refinement " + format_double(r.refinement[i]));
      }
    });
    const double t = 1.0 / s;
    // The compact bump's steep edges defeat the pointwise 1e-6 comparison of
    // two panel quadratures, so this family uses the analytic bump.
    const std::vector<TestFunction> st_family{
        polynomial({0.0, 1.0}), polynomial({0.0, 0.0, 1.0}),
        poly_gaussian_bump({0.0, 0.0, 0.0, 1.0}, 1.5)};
    const char* st_labels[] = {"x", "x^2", "x^3*bump"};
    for (std::size_t i = 0; i < st_family.size(); ++i) {
      const std::string pt = param({{"t", t}}) + ";u=" + st_labels[i];
      c.guard("semigroup_correspondence", "Qq", key, pt, [&] {
        const auto r = check_st_correspondence(m1, st_family[i], t, cfg.paths,
                                               mix64(cfg.base_seed + i));
        c.add("pointwise_correspondence", "st", key, pt, r.pointwise);
        c.add("distributional_correspondence", "Qq", key, pt, r.distributional.lhs,
              r.distributional.rhs, r.distributional.tolerance,
              r.distributional.tolerance - r.distributional.abs_err,
              r.distributional.pass, "MC se " + format_double(r.mc_se));
      });
    }
  }
}

Density2D bimodal_control() {
  Density2D d;
  d.name = "bimodal";
  d.log_density = [](double x, double y) {
    const double a = -0.5 * ((x - 2.5) * (x - 2.5) + y * y);
    const double b = -0.5 * ((x + 2.5) * (x + 2.5) + y * y);
    return std::max(a, b) + std::log1p(std::exp(-std::abs(a - b)));
  };
  d.box = {-7.0, 7.0, -6.0, 6.0};
  return d;
}

void projection_suite(const RunConfig& cfg, Checks& c) {
  constexpr double t = 0.5;
  const auto family = ulc_test_family(cfg.projection_inputs, t,
                                      mix64(cfg.base_seed ^ 0x706aULL));
  for (std::size_t i = 0; i < family.size(); ++i) {
    Philox rng(stream_key(mix64(cfg.base_seed ^ 0x646972ULL), i));
    const double ang = 2.0 * std::numbers::pi * rng.uniform();
    const std::string par = param({{"t", t}, {"angle", ang}});
    c.guard("projection", "Pj", family[i].name, par, [&] {
      const auto r = projection_ulc_check(family[i], t, {std::cos(ang), std::sin(ang)});
      c.add("projection", "Pj", family[i].name, par, r.min_marginal_curvature, 2.0 * t,
            1e-6, r.min_marginal_curvature - 2.0 * t + 1e-6, r.pass,
            "input min curvature " + format_double(r.min_input_curvature));
    });
  }
  c.guard("projection_negative_control", "Pj", "bimodal", param({{"t", t}}), [&] {
    const auto r = projection_ulc_check(bimodal_control(), t, {1.0, 0.0}, false);
    c.add("projection_negative_control", "Pj", "bimodal", param({{"t", t}}),
          r.min_marginal_curvature, 2.0 * t, 1e-6,
          2.0 * t - 1e-6 - r.min_marginal_curvature, !r.pass,
          "expected to violate the window");
  });
}

// ---------------------------------------------------------------------------
// spectral

void spectral_measure(const RunConfig& cfg, const std::string& key, Checks& c,
                      Artifacts& art) {
  c.guard("spectral", "gen", key, "", [&] {
    const MeasureModel m = make_measure(key, 1);
    if (!m.factor) throw LabError(ErrorKind::kConfig, key + " has no 1D factor");
    const auto dec = discretize_generator(*m.factor, cfg.spectral_cells,
                                          cfg.spectral_modes);
    const std::string pc = param({{"cells", double(cfg.spectral_cells)}});
    if (key == "gaussian") {
      for (int k = 0; k <= 3; ++k) {
        const double v = dec.eigenvalues.at(k);
        c.add("eigenvalue", "gen", key, pc + ";k=" + std::to_string(k), v, k, 1e-3,
              1e-3 - std::abs(v - k), std::abs(v - k) <= 1e-3);
      }
    } else {
      double expect = kNaN;
      if (key == "exponential") expect = 0.25;
      if (key == "cube") expect = std::numbers::pi * std::numbers::pi / 12.0;
      if (std::isfinite(expect)) {
        const double v = dec.lambda_1();
        c.add("eigenvalue", "gen", key, pc + ";k=1", v, expect, 1e-3,
              1e-3 - std::abs(v - expect), std::abs(v - expect) <= 1e-3);
      }
    }

    const auto thin = thin_shell_bound_check(dec);
    c.add("thin_shell", "thin", key, pc, thin.sigma_sq, thin.bound, 1e-6,
          thin.bound - thin.sigma_sq + 1e-6, thin.pass);

    std::vector<std::pair<std::string, ProductTestFunction>> ct_family{
        {"x^2", {1, {{1.0, {{0.0, 0.0, 1.0}}}}}},
        {"x^3-3x", {1, {{1.0, {{0.0, -3.0, 0.0, 1.0}}}}}},
        {"x1*x2", {2, {{1.0, {{0.0, 1.0}, {0.0, 1.0}}}}}},
        {"(x1^2-1)(x2^2-1)", {2, {{1.0, {{-1.0, 0.0, 1.0}, {-1.0, 0.0, 1.0}}}}}},
        {"x1*x2*x3", {3, {{1.0, {{0.0, 1.0}, {0.0, 1.0}, {0.0, 1.0}}}}}},
    };
    for (const auto& [name, u] : ct_family) {
      c.guard("h_minus1", "ct", key, pc + ";u=" + name, [&] {
        const auto r = h_minus1_inequality_check(dec, u);
        c.add("h_minus1", "ct", key, pc + ";u=" + name, r.lhs, r.rhs, 1e-6,
              r.rhs - r.lhs + 1e-6 * std::max(1.0, r.rhs), r.pass,
              "truncated mass " + format_double(r.truncated_mass));
      });
    }

    std::optional<double> kappa;
    if (key == "gaussian") kappa = 1.0;
    const auto pr = poincare_and_isoperimetry(dec, kappa);
    c.add("buser_ledoux", "buser-ledoux", key, pc, pr.psi * pr.psi, 9.0 * pr.C_p,
          1e-4, 9.0 * pr.C_p * (1.0 + 1e-4) - pr.psi * pr.psi, pr.buser_ledoux_pass);
    if (key == "gaussian") {
      const double expect = std::sqrt(std::numbers::pi / 2.0);
      c.add("isoperimetric_constant", "buser-ledoux", key, pc, pr.psi, expect, 1e-3,
            1e-3 - std::abs(pr.psi - expect), std::abs(pr.psi - expect) <= 1e-3);
    }
    if (pr.curvature_applicable) {
      c.add("lichnerowicz", "Lic", key, param({{"kappa", pr.kappa}}), pr.C_p,
            1.0 / pr.kappa, 1e-4, pr.lichnerowicz_slack + 1e-4 / pr.kappa,
            pr.lichnerowicz_pass);
      c.add("spectral_variance", "kla", key, param({{"kappa", pr.kappa}}), pr.C_p,
            std::sqrt(pr.variance / pr.kappa), 1e-4,
            pr.spectral_variance_slack + 1e-4 * std::sqrt(pr.variance / pr.kappa),
            pr.spectral_variance_pass);
    }

    std::vector<double> lambdas;
    for (int i = 0; i <= 240; ++i) lambdas.push_back(std::pow(10.0, -3.0 + i / 40.0));
    const auto prof = profile(dec, lambdas);
    std::string csv = "lambda,F,resolved\n";
    for (std::size_t i = 0; i < prof.lambdas.size(); ++i) {
      csv += format_double(prof.lambdas[i]) + ',' + format_double(prof.F_values[i]) +
             ',' + (prof.resolved[i] ? "1" : "0") + '\n';
    }
    art.write(per_measure(cfg, "profile", ".csv", key), csv);
    c.add("profile_overlay", "gk2", key, pc, prof.overlay_c, 0.0, 0.0, prof.overlay_c,
          std::isfinite(prof.overlay_c), "smallest c with F <= c lambda |log lambda|");

    json j;
    j["measure"] = key;
    j["cells"] = cfg.spectral_cells;
    j["modes"] = cfg.spectral_modes;
    const std::size_t shown = std::min<std::size_t>(dec.eigenvalues.size(), 11);
    j["eigenvalues"] = std::vector<double>(dec.eigenvalues.begin(),
                                           dec.eigenvalues.begin() + shown);
    j["lambda_1"] = dec.lambda_1();
    j["C_p"] = pr.C_p;
    j["psi"] = pr.psi;
    j["psi_threshold"] = pr.psi_threshold;
    j["variance"] = pr.variance;
    j["sigma_sq"] = thin.sigma_sq;
    j["thin_bound"] = thin.bound;
    j["gershgorin"] = dec.gershgorin;
    j["mass_defect"] = dec.mass_defect;
    j["overlay_c"] = prof.overlay_c;
    art.write(per_measure(cfg, "spectral", ".json", key), j.dump(2) + "\n");
  });
}

// ---------------------------------------------------------------------------

void run_schedule(const RunConfig& cfg, Checks& c, Artifacts& art) {
  Schedule s;
  s.k0 = -1;
  schedule_checks(cfg.log_log_n, cfg.C2, cfg, c, &s);
  if (s.k0 >= 0) art.write("schedule.json", schedule_json(s).dump(2) + "\n");
}

void run_assistfn(const RunConfig& cfg, Checks& c, Artifacts& art) {
  c.guard("assistfn", "Step5", "", param({{"D0", cfg.D0}, {"r0", cfg.r0}}), [&] {
    const AssistFn fn = build_assist_fn(cfg.D0, cfg.r0);
    art.write("assistfn.json", assist_json(fn).dump(2) + "\n");
    InvariantTally tally;
    tally.add(validate(fn));
    emit_tally(tally, param({{"D0", cfg.D0}, {"r0", cfg.r0}}), c);
  });
}

json config_json(const std::vector<std::pair<std::string, std::string>>& cfg) {
  json j = json::object();
  for (const auto& [k, v] : cfg) j[k] = v;
  return j;
}

double json_number(const json& v) {
  return v.is_number() ? v.get<double>() : kNaN;
}

}  // namespace

// ---------------------------------------------------------------------------

const char* to_string(Experiment e) {
  switch (e) {
    case Experiment::kSimulate: return "simulate";
    case Experiment::kSchedule: return "schedule";
    case Experiment::kAssistFn: return "assistfn";
    case Experiment::kHeatflow: return "heatflow";
    case Experiment::kSpectral: return "spectral";
    case Experiment::kVerifyAll: return "verify-all";
  }
  return "?";
}

std::string version_string() { return "0.3.0"; }

const std::vector<std::pair<std::string, std::string>>& RunConfig::keys() {
  static const std::vector<std::pair<std::string, std::string>> k{
      {"experiment", "simulate | schedule | assistfn | heatflow | spectral | verify-all"},
      {"measure", "catalog key, or 'catalog' for every registered measure"},
      {"dim", "dimension n, 1..64"},
      {"paths", "Monte-Carlo paths, 1..10^7"},
      {"pool_size", "prior pool size for the pool backend, 100..10^8"},
      {"backend", "product | pool"},
      {"driver", "tilt | em"},
      {"dt", "Euler-Maruyama step, (0, 1] and <= t_end"},
      {"t_grid", "increasing times >= 0; items may be lo:step:hi"},
      {"t_end", "Euler-Maruyama horizon, (0, 100]"},
      {"record_stride", "Euler-Maruyama recording stride, >= 1"},
      {"C2", "constant of the operator-norm tail bound, > 0"},
      {"cap_D0", "cap on D0 for evaluated assistant functions, >= 5"},
      {"threshold_log", "log of the schedule threshold, < 0"},
      {"toy_exponent", "growth-check exponent, > 0 (1000 is the proven exponent)"},
      {"log_log_n", "Lambda = log log n for the schedule, > 0"},
      {"D0", "assistant-function steepness, > 4"},
      {"r0", "assistant-function junction, [7/3, 8/3]"},
      {"s_values", "smoothing scales, each > 0"},
      {"spectral_cells", "finite-volume cells, 100..10^6"},
      {"spectral_modes", "computed eigenpairs K, 4 <= 4K < spectral_cells"},
      {"ks_paths", "paths per driver for the KS comparison, 100..10^7"},
      {"assist_cases", "random assistant functions in verify-all"},
      {"dyadic_cases", "random tabulated h in verify-all"},
      {"projection_inputs", "certified 2D inputs in verify-all"},
      {"base_seed", "64-bit unsigned seed"},
      {"out_dir", "output directory"},
      {"diagnostic", "check names or anchors that never fail the run"},
  };
  return k;
}

RunConfig::RunConfig() {
  for (int i = 0; i <= 20; ++i) t_grid.push_back(i / 20.0);
}

void RunConfig::set(const std::string& key, const std::string& raw) {
  const std::string v = trim(raw);
  if (key == "experiment") {
    static const std::map<std::string, Experiment> m{
        {"simulate", Experiment::kSimulate}, {"schedule", Experiment::kSchedule},
        {"assistfn", Experiment::kAssistFn}, {"heatflow", Experiment::kHeatflow},
        {"spectral", Experiment::kSpectral}, {"verify-all", Experiment::kVerifyAll}};
    const auto it = m.find(v);
    if (it == m.end()) config_error(key, "unknown experiment '" + v + "'");
    experiment = it->second;
  } else if (key == "measure") {
    const auto ks = measure_keys();
    if (v != "catalog" && std::find(ks.begin(), ks.end(), v) == ks.end()) {
      config_error(key, "unknown measure '" + v + "'");
    }
    measure = v;
  } else if (key == "dim") {
    dim = parse_count(key, v, 1, 64);
  } else if (key == "paths") {
    paths = parse_count(key, v, 1, 10000000);
  } else if (key == "pool_size") {
    pool_size = parse_count(key, v, 100, 100000000);
  } else if (key == "backend") {
    if (v == "product") backend = Backend::kProduct;
    else if (v == "pool") backend = Backend::kPool;
    else config_error(key, "expected product or pool, got '" + v + "'");
  } else if (key == "driver") {
    if (v == "tilt") driver = Driver::kTiltExact;
    else if (v == "em") driver = Driver::kEulerMaruyama;
    else config_error(key, "expected tilt or em, got '" + v + "'");
  } else if (key == "dt") {
    dt = parse_range(key, v, 0.0, 1.0, true);
  } else if (key == "t_grid") {
    auto g = parse_list(key, v);
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (g[i] < 0.0 || (i && g[i] <= g[i - 1])) {
        config_error(key, "times must be nonnegative and increasing");
      }
    }
    t_grid = std::move(g);
  } else if (key == "t_end") {
    t_end = parse_range(key, v, 0.0, 100.0, true);
  } else if (key == "record_stride") {
    record_stride = parse_count(key, v, 1, 100000000);
  } else if (key == "C2") {
    C2 = parse_range(key, v, 0.0, 1e300, true);
  } else if (key == "cap_D0") {
    cap_D0 = parse_range(key, v, 5.0, 1e12, false);
  } else if (key == "threshold_log") {
    threshold_log = parse_range(key, v, -1e300, 0.0, false);
    if (threshold_log == 0.0) config_error(key, "must be negative");
  } else if (key == "toy_exponent") {
    toy_exponent = parse_range(key, v, 0.0, 1e6, true);
  } else if (key == "log_log_n") {
    log_log_n = parse_range(key, v, 0.0, 1e6, true);
  } else if (key == "D0") {
    D0 = parse_range(key, v, 4.0, 1e12, true);
  } else if (key == "r0") {
    r0 = parse_range(key, v, 7.0 / 3.0, 8.0 / 3.0, false);
  } else if (key == "s_values") {
    auto s = parse_list(key, v);
    for (double x : s) {
      if (!(x > 0.0)) config_error(key, "scales must be positive");
    }
    s_values = std::move(s);
  } else if (key == "spectral_cells") {
    spectral_cells = parse_count(key, v, 100, 1000000);
  } else if (key == "spectral_modes") {
    spectral_modes = parse_count(key, v, 4, 250000);
  } else if (key == "ks_paths") {
    ks_paths = parse_count(key, v, 100, 10000000);
  } else if (key == "assist_cases") {
    assist_cases = parse_count(key, v, 0, 1000000);
  } else if (key == "dyadic_cases") {
    dyadic_cases = parse_count(key, v, 0, 1000000);
  } else if (key == "projection_inputs") {
    projection_inputs = parse_count(key, v, 0, 10000);
  } else if (key == "base_seed") {
    base_seed = parse_u64(key, v);
  } else if (key == "out_dir") {
    if (v.empty()) config_error(key, "must not be empty");
    out_dir = v;
  } else if (key == "diagnostic") {
    diagnostic = split(v, ',');
  } else {
    throw LabError(ErrorKind::kConfig, "unknown key '" + key + "'");
  }
}

void RunConfig::validate() const {
  if (dt > t_end) config_error("dt", "must not exceed t_end");
  if (4 * spectral_modes >= spectral_cells) {
    config_error("spectral_modes", "4 * spectral_modes must be below spectral_cells");
  }
  if (t_grid.size() < 2 && driver == Driver::kTiltExact &&
      (experiment == Experiment::kSimulate || experiment == Experiment::kVerifyAll)) {
    config_error("t_grid", "needs at least two times");
  }
}

std::vector<std::pair<std::string, std::string>> RunConfig::snapshot() const {
  return {
      {"experiment", to_string(experiment)},
      {"measure", measure},
      {"dim", std::to_string(dim)},
      {"paths", std::to_string(paths)},
      {"pool_size", std::to_string(pool_size)},
      {"backend", backend == Backend::kProduct ? "product" : "pool"},
      {"driver", driver == Driver::kTiltExact ? "tilt" : "em"},
      {"dt", format_double(dt)},
      {"t_grid", join_doubles(t_grid)},
      {"t_end", format_double(t_end)},
      {"record_stride", std::to_string(record_stride)},
      {"C2", format_double(C2)},
      {"cap_D0", format_double(cap_D0)},
      {"threshold_log", format_double(threshold_log)},
      {"toy_exponent", format_double(toy_exponent)},
      {"log_log_n", format_double(log_log_n)},
      {"D0", format_double(D0)},
      {"r0", format_double(r0)},
      {"s_values", join_doubles(s_values)},
      {"spectral_cells", std::to_string(spectral_cells)},
      {"spectral_modes", std::to_string(spectral_modes)},
      {"ks_paths", std::to_string(ks_paths)},
      {"assist_cases", std::to_string(assist_cases)},
      {"dyadic_cases", std::to_string(dyadic_cases)},
      {"projection_inputs", std::to_string(projection_inputs)},
      {"base_seed", std::to_string(base_seed)},
      {"out_dir", out_dir},
      {"diagnostic", join_strings(diagnostic)},
  };
}

RunConfig parse_config(std::istream& in, const std::string& source) {
  RunConfig cfg;
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = source + ":" + std::to_string(number) + ": ";
    if (eq == std::string::npos) {
      throw LabError(ErrorKind::kConfig, where + "expected key = value");
    }
    try {
      cfg.set(trim(line.substr(0, eq)), line.substr(eq + 1));
    } catch (const LabError& e) {
      // Drop the kind prefix the inner error already carries.
      std::string msg = e.what();
      const std::string prefix = std::string(to_string(e.kind())) + ": ";
      if (msg.rfind(prefix, 0) == 0) msg.erase(0, prefix.size());
      throw LabError(ErrorKind::kConfig, where + msg);
    }
  }
  return cfg;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw LabError(ErrorKind::kIo, "cannot open config " + path);
  return parse_config(in, path);
}

void apply_override(RunConfig& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) {
    throw LabError(ErrorKind::kConfig,
                   "override '" + assignment + "': expected key=value");
  }
  config.set(trim(assignment.substr(0, eq)), assignment.substr(eq + 1));
}

bool RunManifest::pass() const {
  return std::all_of(checks.begin(), checks.end(),
                     [](const CheckRecord& c) { return c.pass || !c.required; });
}

std::string sha256_hex(const std::string& bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw LabError(ErrorKind::kIo, "SHA-256 digest failed");
  }
  std::ostringstream out;
  for (unsigned int i = 0; i < len; ++i) {
    out << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(digest[i]);
  }
  return out.str();
}

void write_checks_csv(const std::vector<CheckRecord>& checks, std::ostream& out) {
  out << "name,anchor,measure,param,lhs,rhs,tolerance,margin,pass,required,note\n";
  for (const auto& c : checks) {
    out << csv_field(c.name) << ',' << csv_field(c.anchor) << ',' << csv_field(c.measure)
        << ',' << csv_field(c.param) << ',' << format_double(c.lhs) << ','
        << format_double(c.rhs) << ',' << format_double(c.tolerance) << ','
        << format_double(c.margin) << ',' << (c.pass ? 1 : 0) << ','
        << (c.required ? 1 : 0) << ',' << csv_field(c.note) << '\n';
  }
}

std::string manifest_json(const RunManifest& m) {
  json j;
  j["version"] = m.version;
  j["started"] = m.started;
  j["finished"] = m.finished;
  j["runtime_seconds"] = m.runtime_seconds;
  j["config"] = config_json(m.config);
  json checks = json::array();
  for (const auto& c : m.checks) {
    checks.push_back({{"name", c.name},
                      {"paper_anchor", c.anchor},
                      {"measure", c.measure},
                      {"param", c.param},
                      {"lhs", c.lhs},
                      {"rhs", c.rhs},
                      {"tolerance", c.tolerance},
                      {"margin", c.margin},
                      {"pass", c.pass},
                      {"required", c.required},
                      {"note", c.note}});
  }
  j["checks"] = std::move(checks);
  json files = json::array();
  for (const auto& f : m.files) {
    files.push_back({{"path", f.path}, {"sha256", f.sha256}, {"bytes", f.bytes}});
  }
  j["files"] = std::move(files);
  j["pass"] = m.pass();
  return j.dump(2) + "\n";
}

RunManifest load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw LabError(ErrorKind::kIo, "cannot open manifest " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw LabError(ErrorKind::kIo, path + ": " + e.what());
  }
  RunManifest m;
  m.version = j.value("version", "");
  m.started = j.value("started", "");
  m.finished = j.value("finished", "");
  m.runtime_seconds = json_number(j.value("runtime_seconds", json()));
  const json config = j.value("config", json::object());
  for (const auto& [k, v] : config.items()) {
    m.config.emplace_back(k, v.get<std::string>());
  }
  for (const auto& c : j.value("checks", json::array())) {
    CheckRecord r;
    r.name = c.value("name", "");
    r.anchor = c.value("paper_anchor", "");
    r.measure = c.value("measure", "");
    r.param = c.value("param", "");
    r.lhs = json_number(c.value("lhs", json()));
    r.rhs = json_number(c.value("rhs", json()));
    r.tolerance = json_number(c.value("tolerance", json()));
    r.margin = json_number(c.value("margin", json()));
    r.pass = c.value("pass", false);
    r.required = c.value("required", true);
    r.note = c.value("note", "");
    m.checks.push_back(std::move(r));
  }
  for (const auto& f : j.value("files", json::array())) {
    m.files.push_back({f.value("path", ""), f.value("sha256", ""),
                       f.value("bytes", std::size_t{0})});
  }
  return m;
}

RunManifest run(const RunConfig& cfg) {
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  RunManifest man;
  man.config = cfg.snapshot();
  man.version = version_string();
  man.started = iso_now();

  Artifacts art(cfg.out_dir);
  Checks c(cfg);
  const auto keys = selected_measures(cfg);
  switch (cfg.experiment) {
    case Experiment::kSimulate:
      for (const auto& k : keys) simulate_measure(cfg, k, c, art);
      break;
    case Experiment::kSchedule:
      run_schedule(cfg, c, art);
      break;
    case Experiment::kAssistFn:
      run_assistfn(cfg, c, art);
      break;
    case Experiment::kHeatflow:
      for (const auto& k : keys) heatflow_measure(cfg, k, c);
      projection_suite(cfg, c);
      break;
    case Experiment::kSpectral:
      for (const auto& k : keys) spectral_measure(cfg, k, c, art);
      break;
    case Experiment::kVerifyAll:
      for (const auto& k : keys) {
        simulate_measure(cfg, k, c, art);
        band_suite(cfg, k, c);
        heatflow_measure(cfg, k, c);
        spectral_measure(cfg, k, c, art);
      }
      run_schedule(cfg, c, art);
      for (double lambda : {10.0, 50.0, 100.0, 500.0, 690.0}) {
        for (double C2 : {0.1, 1.0, 10.0}) {
          if (lambda == cfg.log_log_n && C2 == cfg.C2) continue;
          schedule_checks(lambda, C2, cfg, c);
        }
      }
      run_assistfn(cfg, c, art);
      assist_suite(cfg, c);
      dyadic_suite(cfg, c);
      driver_equivalence(cfg, c);
      projection_suite(cfg, c);
      break;
  }

  man.checks = c.take();
  std::ostringstream csv;
  write_checks_csv(man.checks, csv);
  art.write("checks.csv", csv.str());
  man.files = art.take();
  man.finished = iso_now();
  man.runtime_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const std::string text = manifest_json(man);
  std::ofstream out(fs::path(cfg.out_dir) / "manifest.json", std::ios::binary);
  out << text;
  if (!out) throw LabError(ErrorKind::kIo, "cannot write manifest.json");
  return man;
}

Report report(const std::vector<std::pair<std::string, RunManifest>>& manifests) {
  Report r;
  for (const auto& [source, m] : manifests) {
    if (m.checks.empty()) r.notes.push_back(source + ": 0 checks");
    for (const auto& c : m.checks) {
      r.rows.push_back({source, c});
      if (c.required && !c.pass) ++r.required_failures;
    }
  }
  std::stable_sort(r.rows.begin(), r.rows.end(), [](const ReportRow& a, const ReportRow& b) {
    if (a.check.anchor != b.check.anchor) return a.check.anchor < b.check.anchor;
    return a.check.measure < b.check.measure;
  });
  return r;
}

void write_report_csv(const Report& r, std::ostream& out) {
  out << "anchor,measure,name,param,lhs,rhs,margin,pass,required,source\n";
  for (const auto& row : r.rows) {
    const auto& c = row.check;
    out << csv_field(c.anchor) << ',' << csv_field(c.measure) << ',' << csv_field(c.name)
        << ',' << csv_field(c.param) << ',' << format_double(c.lhs) << ','
        << format_double(c.rhs) << ',' << format_double(c.margin) << ','
        << (c.pass ? 1 : 0) << ',' << (c.required ? 1 : 0) << ','
        << csv_field(row.source) << '\n';
  }
}

void write_report_text(const Report& r, std::ostream& out) {
  out << std::left << std::setw(14) << "anchor" << std::setw(13) << "measure"
      << std::setw(32) << "name" << std::setw(14) << "lhs" << std::setw(14) << "rhs"
      << std::setw(14) << "margin" << "result\n";
  for (const auto& row : r.rows) {
    const auto& c = row.check;
    const char* verdict = c.pass ? "pass" : (c.required ? "FAIL" : "fail (diagnostic)");
    out << std::setw(14) << c.anchor << std::setw(13) << (c.measure.empty() ? "-" : c.measure)
        << std::setw(32) << c.name << std::setw(14) << format_double(c.lhs)
        << std::setw(14) << format_double(c.rhs) << std::setw(14)
        << format_double(c.margin) << verdict << '\n';
  }
  for (const auto& n : r.notes) out << "note: " << n << '\n';
  out << r.rows.size() << " rows, " << r.required_failures
      << " required failures\n";
}

}  // namespace sllab
