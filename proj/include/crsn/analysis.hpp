#pragma once

// Dynamics diagnostics: projection onto the fixed eigenvector span, the
// closed-form sinusoidal readout it implies, per-mode amplitude fits at the
// fixed-eigenvector entry nodes, and the sequential multi-input experiment
// (inject a second input into a settled state; the readout becomes the sum
// of the two class signals with a phase offset equal to the injection gap).

#include <Eigen/Dense>

#include <cmath>
#include <fstream>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "crsn/errors.hpp"
#include "crsn/spectral.hpp"
#include "crsn/targets.hpp"

namespace crsn {

// Injections are legal once the running state's non-linear segment has
// drained below this max-norm; below it the superposition error stays under
// readout-meaningful scales.
inline constexpr double kInjectionResidualMax = 1e-6;

inline double nonlinear_segment_norm(const CVec& x, int n_nonlinear) {
  double m = 0.0;
  for (int i = 0; i < n_nonlinear; ++i) m = std::max(m, std::abs(x(i)));
  return m;
}

struct SubspaceProjection {
  CVec alphas;               // M coefficients alpha_m
  double residual_norm = 0;  // L2 norm of the out-of-span remainder
  CVec residual;             // x - sum alpha_m psi^(m)
};

// Least-squares coefficients of x against the M 2-sparse fixed columns.
// The Gram matrix is I + 1 1^T (columns share the last component), so the
// solve reduces to a Sherman-Morrison correction of the raw inner products.
inline SubspaceProjection project_onto_fixed(const SpectralModel& model,
                                             const CVec& x) {
  const int n = model.config.n_total, m = model.config.n_fixed;
  if (x.size() != n) throw ConfigInvalid("project_onto_fixed: bad dimension");
  CVec rhs(m);
  for (int k = 0; k < m; ++k) rhs(k) = x(n - 2 - k) + x(n - 1);
  const Cplx mean_term = rhs.sum() / double(m + 1);
  SubspaceProjection p;
  p.alphas = rhs.array() - mean_term;
  p.residual = x;
  Cplx alpha_sum(0, 0);
  for (int k = 0; k < m; ++k) {
    p.residual(n - 2 - k) -= p.alphas(k);
    alpha_sum += p.alphas(k);
  }
  p.residual(n - 1) -= alpha_sum;
  p.residual_norm = p.residual.norm();
  return p;
}

// R(t) = sum_m r_m cos(2 pi t / T_m) - c_m sin(2 pi t / T_m) with
// r = Re(alpha), c = Im(alpha); t counts steps ahead of the projected state.
inline double closed_form_readout(const SubspaceProjection& projection,
                                  const std::vector<double>& periods,
                                  double t) {
  if (projection.alphas.size() != static_cast<Eigen::Index>(periods.size()))
    throw ConfigInvalid("closed_form_readout: mode count mismatch");
  double out = 0.0;
  for (std::size_t m = 0; m < periods.size(); ++m) {
    const double w = (periods[m] == kInfinitePeriod)
                         ? 0.0
                         : 2.0 * std::numbers::pi * t / periods[m];
    out += projection.alphas(static_cast<Eigen::Index>(m)).real() * std::cos(w) -
           projection.alphas(static_cast<Eigen::Index>(m)).imag() * std::sin(w);
  }
  return out;
}

struct ModeFit {
  double r = 0.0;        // cosine amplitude
  double c = 0.0;        // negated sine amplitude, matching the readout form
  double residual = 0.0; // L2 misfit over the fitted window
};

// For each fixed mode m, reads the real signal at its entry node N-m and fits
// (r, c) against cos/sin at period T_m by least squares over the last
// `window` steps of the trajectory (absolute time phase convention).
inline std::vector<ModeFit> mode_amplitudes(const Trajectory& trajectory,
                                            const SpectralModel& model) {
  const SpectralConfig& config = model.config;
  const int window = config.window;
  if (trajectory.length() < 2 * window)
    throw ConfigInvalid("mode_amplitudes: trajectory shorter than 2*window");
  const int t0 = trajectory.length() - window;
  std::vector<ModeFit> fits;
  for (int m = 1; m <= config.n_fixed; ++m) {
    const int node = config.n_total - 1 - m;
    const double period = config.periods[static_cast<std::size_t>(m - 1)];
    RVec s(window);
    for (int j = 0; j < window; ++j)
      s(j) = trajectory.states[static_cast<std::size_t>(t0 + j)](node).real();
    RMat a(window, 2);
    for (int j = 0; j < window; ++j) {
      const double w = (period == kInfinitePeriod)
                           ? 0.0
                           : 2.0 * std::numbers::pi * (t0 + j) / period;
      a(j, 0) = std::cos(w);
      a(j, 1) = -std::sin(w);
    }
    ModeFit fit;
    if (period == kInfinitePeriod) {
      fit.r = s.mean();
      fit.c = 0.0;
    } else {
      const Eigen::Vector2d rc =
          a.jacobiSvd(Eigen::ComputeThinU | Eigen::ComputeThinV).solve(s);
      fit.r = rc(0);
      fit.c = rc(1);
    }
    fit.residual = (s - a * Eigen::Vector2d(fit.r, fit.c)).norm();
    fits.push_back(fit);
  }
  return fits;
}

// Sum of the fitted per-mode sinusoids at absolute time t.
inline double reconstruct_readout(const std::vector<ModeFit>& fits,
                                  const std::vector<double>& periods,
                                  double t) {
  double out = 0.0;
  for (std::size_t m = 0; m < fits.size(); ++m) {
    const double w = (periods[m] == kInfinitePeriod)
                         ? 0.0
                         : 2.0 * std::numbers::pi * t / periods[m];
    out += fits[m].r * std::cos(w) - fits[m].c * std::sin(w);
  }
  return out;
}

// Componentwise superposition of a new input onto a running state.
inline CVec inject(const CVec& state, const CVec& new_input) {
  if (state.size() != new_input.size())
    throw ConfigInvalid("inject: length mismatch");
  return state + new_input;
}

struct SequentialDecode {
  int label_first = 0;
  int label_second = 0;
  int gap = 0;  // the (known) injection gap the decoding assumed
  double distance = 0.0;
};

// Decodes both class labels from a combined late-time readout, given the
// known injection gap: grid search over (c1, c2) minimizing the L2 distance
// between the observed series (absolute time origin t0) and
// f_{c1}(t) + f_{c2}(t - gap). The gap must be supplied because the joint
// (labels, gap) problem is ambiguous: a cosine delayed a quarter period is
// the sine of the same frequency, so e.g. class 1 at delay 5 and class 2 at
// delay 0 produce identical signals. Ties resolve to the smaller (c1, c2).
inline SequentialDecode decode_sequential(const RVec& series, int t0,
                                          const TargetCodebook& codebook,
                                          int gap) {
  SequentialDecode best;
  best.gap = gap;
  double best_d = std::numeric_limits<double>::infinity();
  for (int c1 = 0; c1 < codebook.class_count; ++c1)
    for (int c2 = 0; c2 < codebook.class_count; ++c2) {
      double d = 0.0;
      for (Eigen::Index j = 0; j < series.size(); ++j) {
        const double t = double(t0 + j);
        const double pred = codebook.target_value(c1, t) +
                            codebook.target_value(c2, t - double(gap));
        d += (series(j) - pred) * (series(j) - pred);
      }
      if (d < best_d) {
        best_d = d;
        best.label_first = c1;
        best.label_second = c2;
        best.distance = d;
      }
    }
  return best;
}

struct SequentialResult {
  RVec combined_series;    // observed late-time readout
  RVec predicted_series;   // codebook targets f_{C1}(t) + f_{C2}(t - gap)
  RVec superposed_series;  // sum of the two solo runs' readouts, gap-shifted
  int label_first = 0;     // C1, the earlier input
  int label_second = 0;    // C2, injected gap steps later
  int gap_true = 0;
  int gap_estimate = 0;             // grid-search fit with the true labels
  SequentialDecode decoded;         // labels recovered at the known gap
  // Max abs difference between the combined readout and the sum of the
  // individual evolutions; bounded by a multiple of the non-linear residual
  // at injection (exact superposition would make it zero).
  double deviation = 0.0;
  double target_deviation = 0.0;    // combined vs codebook prediction
  double residual_at_injection = 0.0;
  int compare_start = 0;            // absolute time of combined_series[0]
  Trajectory trajectory;            // full combined evolution
};

// Evolves x0_a for `gap` steps, superimposes x0_b, continues until both
// dynamics have settled, and compares the combined readout against the sum
// of the class targets with the second one delayed by the gap. The true gap
// is only identifiable modulo the common period of the finite modes; the
// estimate reports the representative in [0, P).
inline SequentialResult sequential_experiment(
    const SpectralModel& model, const TargetCodebook& codebook,
    const CVec& x0_a, int label_a, const CVec& x0_b, int label_b, int gap,
    double residual_threshold = kInjectionResidualMax) {
  const SpectralConfig& config = model.config;
  if (gap < 0) throw ConfigInvalid("sequential_experiment: gap must be >= 0");
  const SpectralOperator op(model);

  Trajectory traj = rollout(op, x0_a, gap);
  const double resid =
      nonlinear_segment_norm(traj.states.back(), config.n_nonlinear);
  if (resid >= residual_threshold)
    throw ConvergenceNotReached(
        resid, "non-linear segment norm " + std::to_string(resid) +
                   " at injection exceeds " +
                   std::to_string(residual_threshold) +
                   "; increase the gap");

  traj.states.back() = inject(traj.states.back(), x0_b);
  traj.injection_log.push_back({gap, "second input"});

  int period = common_period(codebook.periods);
  if (period <= 0) period = config.window;
  const int compare_len = std::max(config.window, period);
  const int compare_start = gap + config.warmup + config.window;
  const int t_total = compare_start + compare_len;
  for (int t = gap; t < t_total; ++t)
    traj.states.push_back(op.step(traj.states.back()));

  SequentialResult res;
  res.label_first = label_a;
  res.label_second = label_b;
  res.gap_true = gap;
  res.residual_at_injection = resid;
  res.compare_start = compare_start;
  res.combined_series.resize(compare_len);
  res.predicted_series.resize(compare_len);
  res.superposed_series.resize(compare_len);

  // Each input's solo evolution; input b runs on its own clock, which starts
  // at the injection time.
  const Trajectory solo_a = rollout(op, x0_a, t_total);
  const Trajectory solo_b = rollout(op, x0_b, t_total - gap);
  const int readout_node = config.n_total - 1;
  for (int j = 0; j < compare_len; ++j) {
    const double t = double(compare_start + j);
    res.combined_series(j) =
        traj.states[static_cast<std::size_t>(compare_start + j)](readout_node)
            .real();
    res.predicted_series(j) = codebook.target_value(label_a, t) +
                              codebook.target_value(label_b, t - double(gap));
    res.superposed_series(j) =
        solo_a.states[static_cast<std::size_t>(compare_start + j)](readout_node)
            .real() +
        solo_b.states[static_cast<std::size_t>(compare_start + j - gap)](
                readout_node)
            .real();
  }
  res.deviation =
      (res.combined_series - res.superposed_series).cwiseAbs().maxCoeff();
  res.target_deviation =
      (res.combined_series - res.predicted_series).cwiseAbs().maxCoeff();

  // Gap fit with known labels.
  double best_d = std::numeric_limits<double>::infinity();
  for (int g = 0; g < period; ++g) {
    double d = 0.0;
    for (int j = 0; j < compare_len; ++j) {
      const double t = double(compare_start + j);
      const double pred = codebook.target_value(label_a, t) +
                          codebook.target_value(label_b, t - double(g));
      d += (res.combined_series(j) - pred) * (res.combined_series(j) - pred);
    }
    if (d < best_d) {
      best_d = d;
      res.gap_estimate = g;
    }
  }
  res.decoded =
      decode_sequential(res.combined_series, compare_start, codebook, gap);
  res.trajectory = std::move(traj);
  return res;
}

// JSON form of a diagnostic series table: {"column": [values...], ...}.
inline std::string series_to_json(
    const std::vector<std::pair<std::string, RVec>>& columns) {
  std::string out = "{";
  char buf[32];
  for (std::size_t c = 0; c < columns.size(); ++c) {
    if (c) out += ",";
    out += "\"" + columns[c].first + "\":[";
    for (Eigen::Index r = 0; r < columns[c].second.size(); ++r) {
      if (r) out += ",";
      std::snprintf(buf, sizeof(buf), "%.17g", columns[c].second(r));
      out += buf;
    }
    out += "]";
  }
  out += "}";
  return out;
}

inline void write_series_json(
    const std::string& path,
    const std::vector<std::pair<std::string, RVec>>& columns) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataMissing("cannot write " + path);
  out << series_to_json(columns) << "\n";
}

// CSV writer for diagnostic series: header row of column names, one row per
// time step, optional trailing comment lines.
inline void write_series_csv(
    const std::string& path,
    const std::vector<std::pair<std::string, RVec>>& columns,
    const std::vector<std::string>& comments = {}) {
  if (columns.empty()) throw ConfigInvalid("write_series_csv: no columns");
  const Eigen::Index rows = columns.front().second.size();
  for (const auto& [name, values] : columns)
    if (values.size() != rows)
      throw ConfigInvalid("write_series_csv: ragged column " + name);
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataMissing("cannot write " + path);
  for (std::size_t c = 0; c < columns.size(); ++c)
    out << (c ? "," : "") << columns[c].first;
  out << "\n";
  out.precision(17);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < columns.size(); ++c)
      out << (c ? "," : "") << columns[c].second(r);
    out << "\n";
  }
  for (const auto& line : comments) out << "# " << line << "\n";
}

}  // namespace crsn
