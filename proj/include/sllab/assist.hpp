#pragma once

#include <array>
#include <functional>
#include <string>
#include <vector>

#include "sllab/localization.hpp"

namespace sllab {

/// The C^2 glue f between e^{D0 (r - r0)} and b r^2. f'' = h is linear on
/// [r0 - 1/D0, r0 - 1/D0 + c), constant on the plateau, linear on [r0 - c, r0).
struct AssistFn {
  struct Piece {
    double start = 0.0;
    double end = 0.0;
    std::array<double, 4> coef{};  // f(r) = sum coef[m] (r - start)^m
  };

  double D0 = 0.0;
  double r0 = 0.0;
  double c = 0.0;
  double s = 0.0;
  double b = 0.0;
  double r1 = 0.0;  // zero of f'' on the first ramp
  std::array<double, 4> knots{};  // r0 - 1/D0, r0 - 1/D0 + c, r0 - c, r0
  std::array<Piece, 3> pieces;
  int c_halvings = 0;
};

AssistFn build_assist_fn(double D0, double r0);

enum class EvalMode { kValue, kLogValue, kD1, kD2 };
double eval(const AssistFn& fn, double r, EvalMode mode = EvalMode::kValue);

struct AssistValidation {
  bool b_window = false;
  bool exp_branch = false;
  bool quad_branch = false;
  bool continuity = false;
  bool second_derivative_bound = false;
  bool increasing = false;
  bool plateau_bounds = false;
  bool knot_derivatives = false;
  double worst_continuity = 0.0;  // relative jump over all knots and orders
  double worst_sece_ratio = 0.0;  // max |f''| / (D0^2 f) on the grid
  bool ok() const {
    return b_window && exp_branch && quad_branch && continuity &&
           second_derivative_bound && increasing && plateau_bounds &&
           knot_derivatives;
  }
  std::string failures() const;
};

AssistValidation validate(const AssistFn& fn, int grid_points = 10000);

ScalarFunction as_scalar_function(const AssistFn& fn);

enum class T1Rule {
  kExpLogLog,  // log t_1 = -log C2 - 2 e^Lambda (Lambda = log log n)
  kLogLog,     // log t_1 = -log C2 - 2 Lambda
};

struct Schedule {
  std::vector<double> log_t;  // l_1 .. l_{k0+1}; l_1 clamped when overflowed
  std::vector<double> log_abs_log_t;  // log |l_k|, exact even when l_1 is not
  std::vector<double> s_seq;
  int k0 = 0;
  double log_log_n = 0.0;
  double C2 = 1.0;
  double threshold_log = -1000.0;
  bool overflow_flag = false;
};

Schedule build_schedule(double log_log_n, double C2,
                        double threshold_log = -1000.0,
                        T1Rule rule = T1Rule::kExpLogLog);

struct AssistMember {
  AssistFn fn;
  int k = 0;
  double log_D0_uncapped = 0.0;  // 4 log|l_k|
  bool cap_bound = false;
};

std::vector<AssistMember> f_family(const Schedule& schedule,
                                   double cap_D0 = 200.0);

double F_eval(const AssistFn& fn, const std::vector<double>& eigenvalues);
double F_eval_log(const AssistFn& fn, const std::vector<double>& eigenvalues);

struct GrowthRow {
  double t = 0.0;
  double ratio = 0.0;  // E F_t / (E F_t0 (t/t0)^p)
  double se = 0.0;
  bool pass = false;
};

struct GrowthReport {
  double exponent = 1000.0;
  double t_end = 0.0;
  std::vector<GrowthRow> rows;         // configured exponent and interval
  std::vector<GrowthRow> bound_rows;   // exponent 1000 on [t0, max(t0, D0^-4)]
  bool pass = true;
};

GrowthReport growth_bound_check(const std::vector<LocalizationPath>& paths,
                                const AssistFn& fn, double t0,
                                double exponent = 1000.0, double t_end = -1.0);

struct DyadicResult {
  double lhs = 0.0;
  double rhs = 0.0;
  double lhs_coarse = 0.0;  // same rule on every other sample
  bool resolved = false;     // relative change under refinement < 1e-4
  bool pass = false;
};

// h sampled uniformly on [0, 2^N] (first sample at 0, last at 2^N).
DyadicResult dyadic_bound_check(const std::vector<double>& h_samples, int N);
// Refines the tabulation of h until the integral settles to 1e-4 relative.
DyadicResult dyadic_bound_check(const std::function<double(double)>& h, int N);

}  // namespace sllab
