#include "sllab/assist.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

#include "sllab/error.hpp"

namespace sllab {

namespace {

constexpr double kE = std::numbers::e;
constexpr double kInvE = 1.0 / std::numbers::e;
constexpr double kLowR0 = 7.0 / 3.0;
constexpr double kHighR0 = 8.0 / 3.0;

struct Jet {
  double f, f1, f2;
};

// Cubic piece with initial jet `at` and constant f''' over length `len`.
AssistFn::Piece make_piece(double start, double len, Jet at, double f3,
                           Jet* end) {
  AssistFn::Piece p;
  p.start = start;
  p.end = start + len;
  p.coef = {at.f, at.f1, 0.5 * at.f2, f3 / 6.0};
  end->f = at.f + at.f1 * len + 0.5 * at.f2 * len * len + f3 * len * len * len / 6.0;
  end->f1 = at.f1 + at.f2 * len + 0.5 * f3 * len * len;
  end->f2 = at.f2 + f3 * len;
  return p;
}

// s as an affine function of b, from imposing
//   int h = -e^{-1} D0 + 2 r0 b   over [r0 - 1/D0, r0].
double solve_s(double D0, double r0, double c, double b) {
  return (kInvE * D0 - 2.0 * r0 * b + 0.5 * kInvE * D0 * D0 * c + c * b) /
         (kInvE * D0 * (1.0 - D0 * c));
}

struct Assembly {
  std::array<AssistFn::Piece, 3> pieces;
  Jet end;
};

// Knots are fixed as doubles first and piece lengths are their exact
// differences, so evaluating a piece at its right knot reproduces `end`.
Assembly assemble(double D0, const std::array<double, 4>& knots, double s,
                  double b) {
  const double ramp_in = knots[1] - knots[0];
  const double ramp_out = knots[3] - knots[2];
  Assembly a;
  Jet jet{kInvE, kInvE * D0, kInvE * D0 * D0};
  Jet next{};
  a.pieces[0] = make_piece(knots[0], ramp_in, jet,
                           -(1.0 + s) * kInvE * D0 * D0 / ramp_in, &next);
  jet = next;
  a.pieces[1] = make_piece(knots[1], knots[2] - knots[1], jet, 0.0, &next);
  jet = next;
  jet.f2 = -s * kInvE * D0 * D0;
  a.pieces[2] = make_piece(knots[2], ramp_out, jet,
                           kInvE * (s * D0 * D0 + 2.0 * kE * b) / ramp_out,
                           &next);
  a.end = next;
  return a;
}

double poly(const std::array<double, 4>& c, double u) {
  return c[0] + u * (c[1] + u * (c[2] + u * c[3]));
}
double poly_d1(const std::array<double, 4>& c, double u) {
  return c[1] + u * (2.0 * c[2] + 3.0 * u * c[3]);
}
double poly_d2(const std::array<double, 4>& c, double u) {
  return 2.0 * c[2] + 6.0 * u * c[3];
}

std::string diag(double D0, double r0, double c, double b, double s) {
  std::ostringstream os;
  os << "D0=" << D0 << " r0=" << r0 << " c=" << c << " b=" << b << " s=" << s;
  return os.str();
}

}  // namespace

AssistFn build_assist_fn(double D0, double r0) {
  if (!(D0 > 4.0) || !std::isfinite(D0)) {
    throw LabError(ErrorKind::kConstructionFailed, "need D0 > 4");
  }
  if (!(r0 >= kLowR0 && r0 <= kHighR0)) {
    throw LabError(ErrorKind::kConstructionFailed, "need 7/3 <= r0 <= 8/3");
  }
  double c = std::min(1e-2 / (D0 * D0), 1.0 / (4.0 * D0));
  int halvings = 0;
  auto s_ok = [&](double cc) {
    // s is affine in b, so checking the window ends suffices.
    const double lo = solve_s(D0, r0, cc, 0.01);
    const double hi = solve_s(D0, r0, cc, 0.25);
    return lo > 0.0 && lo < 1.0 && hi > 0.0 && hi < 1.0;
  };
  while (!s_ok(c)) {
    if (++halvings > 60) {
      throw LabError(ErrorKind::kConstructionFailed,
                     "no ramp width keeps s in (0,1): " + diag(D0, r0, c, 0, 0));
    }
    c *= 0.5;
  }

  const double k0 = r0 - 1.0 / D0;
  const std::array<double, 4> knots{k0, k0 + c, r0 - c, r0};

  // Both matching conditions at r0, f = b r0^2 and f' = 2 r0 b, are affine
  // in (s, b); the first is the integral condition on h. Solve the 2x2
  // system on the actual knot geometry.
  auto mismatch = [&](double ss, double bb) {
    const Jet e = assemble(D0, knots, ss, bb).end;
    return std::array<double, 2>{e.f - bb * r0 * r0, e.f1 - 2.0 * r0 * bb};
  };
  const auto m00 = mismatch(0.0, 0.0);
  const auto m10 = mismatch(1.0, 0.0);
  const auto m01 = mismatch(0.0, 1.0);
  const double a11 = m10[0] - m00[0], a12 = m01[0] - m00[0];
  const double a21 = m10[1] - m00[1], a22 = m01[1] - m00[1];
  const double det = a11 * a22 - a12 * a21;
  const double s = (-m00[0] * a22 + m00[1] * a12) / det;
  const double b = (-a11 * m00[1] + a21 * m00[0]) / det;
  if (!(b >= 0.01 && b <= 0.25)) {
    throw LabError(ErrorKind::kConstructionFailed,
                   "b left the intermediate window: " + diag(D0, r0, c, b, s));
  }
  if (!(s > 0.0 && s < 1.0)) {
    throw LabError(ErrorKind::kConstructionFailed,
                   "s left (0,1): " + diag(D0, r0, c, b, s));
  }
  if (!(b >= 0.05 && b <= 0.2)) {
    throw LabError(ErrorKind::kConstructionFailed,
                   "b left [1/20, 1/5]: " + diag(D0, r0, c, b, s));
  }

  AssistFn fn;
  fn.D0 = D0;
  fn.r0 = r0;
  fn.c = c;
  fn.s = s;
  fn.b = b;
  fn.c_halvings = halvings;
  fn.knots = knots;
  fn.pieces = assemble(D0, knots, s, b).pieces;
  fn.r1 = k0 + c / (1.0 + s);

  const AssistValidation v = validate(fn);
  if (!v.ok()) {
    throw LabError(ErrorKind::kConstructionFailed,
                   "invariants failed (" + v.failures() + "): " +
                       diag(D0, r0, c, b, s));
  }
  return fn;
}

double eval(const AssistFn& fn, double r, EvalMode mode) {
  if (r < fn.knots[0]) {
    const double e = fn.D0 * (r - fn.r0);
    switch (mode) {
      case EvalMode::kValue: return std::exp(e);
      case EvalMode::kLogValue: return e;
      case EvalMode::kD1: return fn.D0 * std::exp(e);
      case EvalMode::kD2: return fn.D0 * fn.D0 * std::exp(e);
    }
  }
  if (r >= fn.r0) {
    switch (mode) {
      case EvalMode::kValue: return fn.b * r * r;
      case EvalMode::kLogValue: return std::log(fn.b) + 2.0 * std::log(r);
      case EvalMode::kD1: return 2.0 * fn.b * r;
      case EvalMode::kD2: return 2.0 * fn.b;
    }
  }
  const AssistFn::Piece* p = &fn.pieces[2];
  if (r < fn.pieces[1].start) {
    p = &fn.pieces[0];
  } else if (r < fn.pieces[2].start) {
    p = &fn.pieces[1];
  }
  const double u = r - p->start;
  switch (mode) {
    case EvalMode::kValue: return poly(p->coef, u);
    case EvalMode::kLogValue: return std::log(poly(p->coef, u));
    case EvalMode::kD1: return poly_d1(p->coef, u);
    case EvalMode::kD2: return poly_d2(p->coef, u);
  }
  return std::numeric_limits<double>::quiet_NaN();
}

std::string AssistValidation::failures() const {
  std::string out;
  auto add = [&](bool ok, const char* name) {
    if (!ok) out += (out.empty() ? "" : ",") + std::string(name);
  };
  add(b_window, "b-window");
  add(exp_branch, "exp-branch");
  add(quad_branch, "quad-branch");
  add(continuity, "continuity");
  add(second_derivative_bound, "f''-bound");
  add(increasing, "increasing");
  add(plateau_bounds, "plateau-bounds");
  add(knot_derivatives, "knot-derivatives");
  return out;
}

AssistValidation validate(const AssistFn& fn, int grid_points) {
  AssistValidation v;
  const double rel = 1e-12;
  v.b_window = fn.b >= 0.05 && fn.b <= 0.2;

  // Left and right limits at every knot, for f, f', f''.
  const EvalMode modes[3] = {EvalMode::kValue, EvalMode::kD1, EvalMode::kD2};
  double worst = 0.0;
  for (std::size_t ki = 0; ki < fn.knots.size(); ++ki) {
    const double k = fn.knots[ki];
    for (EvalMode m : modes) {
      double left;
      if (ki == 0) {
        const double e = std::exp(fn.D0 * (k - fn.r0));
        left = m == EvalMode::kValue ? e
               : m == EvalMode::kD1  ? fn.D0 * e
                                     : fn.D0 * fn.D0 * e;
      } else {
        const AssistFn::Piece& p = fn.pieces[ki - 1];
        const double u = p.end - p.start;
        left = m == EvalMode::kValue ? poly(p.coef, u)
               : m == EvalMode::kD1  ? poly_d1(p.coef, u)
                                     : poly_d2(p.coef, u);
      }
      const double right = eval(fn, k, m);
      const double scale = std::max({std::abs(left), std::abs(right), 1e-300});
      worst = std::max(worst, std::abs(left - right) / scale);
    }
  }
  v.worst_continuity = worst;
  v.continuity = worst <= 1e-8;

  const double k0 = fn.knots[0];
  v.knot_derivatives =
      std::abs(eval(fn, k0, EvalMode::kD1) - kInvE * fn.D0) <=
          1e-10 * kInvE * fn.D0 &&
      std::abs(eval(fn, k0, EvalMode::kD2) - kInvE * fn.D0 * fn.D0) <=
          1e-10 * kInvE * fn.D0 * fn.D0;

  v.exp_branch = true;
  v.quad_branch = true;
  v.second_derivative_bound = true;
  v.increasing = true;
  v.plateau_bounds = true;
  const double lo = fn.r0 - 2.0;
  const double hi = fn.r0 + 5.0;
  for (int i = 0; i < grid_points; ++i) {
    const double r = lo + (hi - lo) * i / (grid_points - 1);
    const double f = eval(fn, r);
    const double f2 = eval(fn, r, EvalMode::kD2);
    if (r <= k0) {
      const double want = std::exp(fn.D0 * (r - fn.r0));
      if (std::abs(f - want) > rel * want) v.exp_branch = false;
    }
    if (r >= fn.r0) {
      const double want = fn.b * r * r;
      if (std::abs(f - want) > rel * want) v.quad_branch = false;
    }
    const double ratio = std::abs(f2) / (fn.D0 * fn.D0 * f);
    v.worst_sece_ratio = std::max(v.worst_sece_ratio, ratio);
    if (ratio > 1.0 + rel) v.second_derivative_bound = false;
    if (eval(fn, r, EvalMode::kD1) < 0.0) v.increasing = false;
  }
  // e^{-1} <= f <= 1 on [r0 - 1/D0, r0], sampled densely inside the window.
  for (int i = 0; i < grid_points; ++i) {
    const double r = k0 + (fn.r0 - k0) * i / (grid_points - 1);
    const double f = eval(fn, r);
    if (f < kInvE * (1.0 - rel) || f > 1.0 + rel) v.plateau_bounds = false;
  }
  for (const auto& p : fn.pieces) {
    for (int i = 0; i <= 64; ++i) {
      const double r = p.start + (p.end - p.start) * i / 64.0;
      const double f = eval(fn, r);
      if (f < kInvE * (1.0 - rel) || f > 1.0 + rel) v.plateau_bounds = false;
      if (eval(fn, r, EvalMode::kD1) < 0.0) v.increasing = false;
      const double ratio =
          std::abs(eval(fn, r, EvalMode::kD2)) / (fn.D0 * fn.D0 * f);
      v.worst_sece_ratio = std::max(v.worst_sece_ratio, ratio);
      if (ratio > 1.0 + rel) v.second_derivative_bound = false;
    }
  }
  return v;
}

ScalarFunction as_scalar_function(const AssistFn& fn) {
  std::ostringstream name;
  name << "assist(D0=" << fn.D0 << ",r0=" << fn.r0 << ")";
  return {name.str(), [fn](double r) { return eval(fn, r); },
          [fn](double r) { return eval(fn, r, EvalMode::kD1); },
          [fn](double r) { return eval(fn, r, EvalMode::kD2); }};
}

// ------------------------------------------------------------ schedule ----

Schedule build_schedule(double log_log_n, double C2, double threshold_log,
                        T1Rule rule) {
  if (!(log_log_n > 0.0) || !std::isfinite(log_log_n)) {
    throw LabError(ErrorKind::kInvalidScale, "log log n must be positive");
  }
  if (!(C2 > 0.0) || !std::isfinite(C2)) {
    throw LabError(ErrorKind::kInvalidScale, "C2 must be positive");
  }
  Schedule sch;
  sch.log_log_n = log_log_n;
  sch.C2 = C2;
  sch.threshold_log = threshold_log;

  const double lc = std::log(C2);
  double l1 = 0.0;
  double log_abs_l1 = 0.0;
  if (rule == T1Rule::kExpLogLog) {
    sch.overflow_flag = log_log_n > 700.0;
    const double big = 2.0 * std::exp(std::min(log_log_n, 700.0));
    l1 = -lc - big;
    if (sch.overflow_flag) {
      // |l1| = 2 e^Lambda (1 + log C2 / (2 e^Lambda)), kept in log form.
      log_abs_l1 = log_log_n + std::log(2.0) +
                   std::log1p(lc / 2.0 * std::exp(-log_log_n));
    } else {
      log_abs_l1 = std::log(std::abs(l1));
    }
  } else {
    l1 = -lc - 2.0 * log_log_n;
    log_abs_l1 = std::log(std::abs(l1));
  }
  sch.log_t.push_back(l1);
  sch.log_abs_log_t.push_back(log_abs_l1);

  while (sch.log_t.back() <= threshold_log) {
    if (sch.log_t.size() > 1000) {
      throw LabError(ErrorKind::kScheduleIntegrity,
                     "schedule never leaves the threshold region");
    }
    const double next = -16.0 * sch.log_abs_log_t.back();
    sch.log_t.push_back(next);
    sch.log_abs_log_t.push_back(std::log(std::abs(next)));
  }
  sch.k0 = static_cast<int>(sch.log_t.size()) - 1;

  for (int k = 0; k < sch.k0; ++k) {
    // l_k <= 2 l_{k+1}, compared through log|l| since l_k may be clamped.
    const double nxt = sch.log_t[k + 1];
    if (nxt < 0.0 &&
        !(sch.log_abs_log_t[k] >= std::log(2.0) + sch.log_abs_log_t[k + 1])) {
      std::ostringstream os;
      os << "l_" << k + 1 << " > 2 l_" << k + 2;
      throw LabError(ErrorKind::kScheduleIntegrity, os.str());
    }
  }

  sch.s_seq.push_back(kLowR0);
  for (int k = 1; k <= sch.k0; ++k) {
    const double l = sch.log_t[k];
    if (!(l < 0.0)) {
      throw LabError(ErrorKind::kScheduleIntegrity, "non-negative log t_k");
    }
    sch.s_seq.push_back(sch.s_seq.back() + 1.0 / std::sqrt(-l));
  }
  for (double s : sch.s_seq) {
    if (s < kLowR0 || s > kHighR0) {
      throw LabError(ErrorKind::kScheduleIntegrity, "s_k left [7/3, 8/3]");
    }
  }
  return sch;
}

std::vector<AssistMember> f_family(const Schedule& schedule, double cap_D0) {
  if (!(cap_D0 >= 5.0)) {
    throw LabError(ErrorKind::kConfig, "cap_D0 must be at least 5");
  }
  const std::size_t need = static_cast<std::size_t>(schedule.k0) + 1;
  if (schedule.s_seq.size() < need || schedule.log_t.size() < need) {
    throw LabError(ErrorKind::kScheduleIntegrity, "schedule is incomplete");
  }
  std::vector<AssistMember> out;
  for (int k = 1; k <= schedule.k0; ++k) {
    const double log_abs =
        schedule.log_abs_log_t.size() >= static_cast<std::size_t>(k)
            ? schedule.log_abs_log_t[k - 1]
            : std::log(std::abs(schedule.log_t[k - 1]));
    AssistMember m;
    m.k = k;
    m.log_D0_uncapped = 4.0 * log_abs;
    m.cap_bound = m.log_D0_uncapped > std::log(cap_D0);
    const double D0 =
        m.cap_bound ? cap_D0 : std::pow(std::abs(schedule.log_t[k - 1]), 4.0);
    m.fn = build_assist_fn(D0, schedule.s_seq[k - 1]);
    out.push_back(std::move(m));
  }
  return out;
}

double F_eval(const AssistFn& fn, const std::vector<double>& eigenvalues) {
  double s = 0.0;
  for (double l : eigenvalues) s += eval(fn, std::max(l, 0.0));
  return s;
}

double F_eval_log(const AssistFn& fn, const std::vector<double>& eigenvalues) {
  std::vector<double> logs;
  logs.reserve(eigenvalues.size());
  for (double l : eigenvalues) {
    logs.push_back(eval(fn, std::max(l, 0.0), EvalMode::kLogValue));
  }
  return log_sum_exp(logs);
}

// --------------------------------------------------------------- growth ----

namespace {

std::vector<GrowthRow> growth_rows(const std::vector<LocalizationPath>& paths,
                                   const AssistFn& fn, std::size_t i0,
                                   double t_end, double exponent) {
  const auto& times = paths.front().times;
  const double t0 = times[i0];
  const std::size_t np = paths.size();
  std::vector<double> f0(np);
  for (std::size_t p = 0; p < np; ++p) f0[p] = F_eval(fn, paths[p].eigenvalues[i0]);
  const MeanSe base = mean_se(f0);
  std::vector<GrowthRow> rows;
  std::vector<double> ft(np), resid(np);
  for (std::size_t i = i0; i < times.size(); ++i) {
    if (times[i] > t_end * (1.0 + 1e-12)) break;
    for (std::size_t p = 0; p < np; ++p) ft[p] = F_eval(fn, paths[p].eigenvalues[i]);
    const MeanSe cur = mean_se(ft);
    const double log_c = exponent * std::log(times[i] / t0);
    const double ratio = std::exp(std::log(cur.mean) - std::log(base.mean) - log_c);
    // Delta-method residuals for the ratio of two paired means.
    const double scale = std::exp(-log_c) / base.mean;
    for (std::size_t p = 0; p < np; ++p) {
      resid[p] = scale * ft[p] - ratio * f0[p] / base.mean;
    }
    const MeanSe r = mean_se(resid);
    GrowthRow row;
    row.t = times[i];
    row.ratio = ratio;
    row.se = r.se;
    row.pass = ratio <= 1.0 + 3.0 * r.se + 1e-12;
    rows.push_back(row);
  }
  return rows;
}

}  // namespace

GrowthReport growth_bound_check(const std::vector<LocalizationPath>& paths,
                                const AssistFn& fn, double t0, double exponent,
                                double t_end) {
  if (paths.empty()) throw LabError(ErrorKind::kEmptyEnsemble, "no paths");
  if (!(t0 > 0.0 && t0 <= 1.0)) {
    throw LabError(ErrorKind::kPreconditionViolation, "need t0 in (0, 1]");
  }
  const auto& times = paths.front().times;
  std::size_t i0 = times.size();
  for (std::size_t i = 0; i < times.size(); ++i) {
    if (std::abs(times[i] - t0) <= 1e-12 * (1.0 + t0)) i0 = i;
  }
  if (i0 == times.size()) {
    throw LabError(ErrorKind::kPreconditionViolation, "t0 is not on the grid");
  }
  const double bound_end = std::max(t0, std::pow(fn.D0, -4.0));
  GrowthReport rep;
  rep.exponent = exponent;
  rep.t_end = t_end > 0.0 ? t_end : bound_end;
  if (times.back() < rep.t_end * (1.0 - 1e-12)) {
    throw LabError(ErrorKind::kPreconditionViolation,
                   "grid does not cover the growth interval");
  }
  rep.rows = growth_rows(paths, fn, i0, rep.t_end, exponent);
  rep.bound_rows = growth_rows(paths, fn, i0, bound_end, 1000.0);
  for (const auto& r : rep.rows) rep.pass = rep.pass && r.pass;
  for (const auto& r : rep.bound_rows) rep.pass = rep.pass && r.pass;
  return rep;
}

// --------------------------------------------------------------- dyadic ----

namespace {

double dyadic_integral(const std::vector<double>& h, double span,
                       std::size_t stride) {
  const std::size_t m = (h.size() - 1) / stride;  // intervals
  const double dx = span / static_cast<double>(m);
  auto at = [&](std::size_t j) { return h[j * stride]; };
  double total = 0.0;
  for (std::size_t j = 0; j <= m; ++j) {
    double slope;
    if (j == 0) {
      slope = (at(1) - at(0)) / dx;
    } else if (j == m) {
      slope = (at(m) - at(m - 1)) / dx;
    } else {
      slope = (at(j + 1) - at(j - 1)) / (2.0 * dx);
    }
    const double s = j * dx;
    const double w = s <= 1.0 ? 1.0 : 1.0 / std::sqrt(s);
    const double g = w * std::sqrt(std::max(-slope, 0.0));
    total += (j == 0 || j == m) ? 0.5 * g : g;
  }
  return total * dx;
}

}  // namespace

DyadicResult dyadic_bound_check(const std::vector<double>& h, int N) {
  if (N < 0) throw LabError(ErrorKind::kInvalidH, "N must be non-negative");
  if (h.size() < 5) throw LabError(ErrorKind::kInvalidH, "too few samples");
  for (std::size_t j = 0; j < h.size(); ++j) {
    if (!std::isfinite(h[j]) || h[j] < 0.0) {
      throw LabError(ErrorKind::kInvalidH, "h must be finite and non-negative");
    }
    if (j > 0 && h[j] > h[j - 1] + 1e-14 * std::max(1.0, std::abs(h[j - 1]))) {
      throw LabError(ErrorKind::kInvalidH, "h is not non-increasing");
    }
  }
  const double span = std::ldexp(1.0, N);
  DyadicResult r;
  r.lhs = dyadic_integral(h, span, 1);
  r.rhs = std::sqrt(h.front()) * std::sqrt(N + 1.0);
  if ((h.size() - 1) % 2 == 0) {
    r.lhs_coarse = dyadic_integral(h, span, 2);
    r.resolved = std::abs(r.lhs - r.lhs_coarse) <=
                 1e-4 * std::max(std::abs(r.lhs), 1e-300);
  }
  // The integral is only resolved to 1e-4 relative, so that is the slack.
  r.pass = r.lhs <= r.rhs * (1.0 + 1e-4) + 1e-300;
  return r;
}

DyadicResult dyadic_bound_check(const std::function<double(double)>& h, int N) {
  if (N < 0) throw LabError(ErrorKind::kInvalidH, "N must be non-negative");
  const double span = std::ldexp(1.0, N);
  std::size_t intervals = std::size_t{1} << 12;
  DyadicResult r;
  for (int level = 0; level < 12; ++level) {
    std::vector<double> samples(intervals + 1);
    for (std::size_t j = 0; j <= intervals; ++j) {
      samples[j] = h(span * static_cast<double>(j) / static_cast<double>(intervals));
    }
    r = dyadic_bound_check(samples, N);
    if (r.resolved) return r;
    intervals *= 2;
  }
  return r;
}

}  // namespace sllab
