#pragma once

// Per-class target time functions f_C(t) expressed over the frequency basis
// the fixed eigenvalues provide: the constant signal for the infinite period
// plus a cos/sin pair per finite period. Readouts are decoded by L2 distance
// against the codebook over the loss window.

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <numbers>
#include <utility>
#include <vector>

#include "crsn/errors.hpp"
#include "crsn/spectral.hpp"

namespace crsn {

// Value of basis signal k at time t: g_0 = 1 for the infinite period, then
// cos(2*pi*t/T_m), sin(2*pi*t/T_m) per finite period in config order.
// (t / INF == 0, so the constant mode needs no special case.)
inline double basis_signal(const std::vector<double>& periods, int k,
                           double t) {
  int idx = 0;
  for (double period : periods) {
    if (period == kInfinitePeriod) {
      if (k == idx) return 1.0;
      idx += 1;
    } else {
      const double w = 2.0 * std::numbers::pi * t / period;
      if (k == idx) return std::cos(w);
      if (k == idx + 1) return std::sin(w);
      idx += 2;
    }
  }
  throw ConfigInvalid("basis_signal: index out of range");
}

inline int basis_dimension(const std::vector<double>& periods) {
  int d = 0;
  for (double period : periods) d += (period == kInfinitePeriod) ? 1 : 2;
  return d;
}

struct TargetCodebook {
  int class_count = 0;
  RMat coefficients;            // class_count x basis dimension
  std::vector<double> periods;  // copied from the spectral config
  int window = 0;               // T
  int warmup = 0;               // t'
  double d_min = 0.0;           // min pairwise L2 distance over the window

  double target_value(int label, double t) const {
    if (label < 0 || label >= class_count)
      throw ConfigInvalid("target_value: class " + std::to_string(label) +
                          " out of range");
    double v = 0.0;
    for (int k = 0; k < coefficients.cols(); ++k)
      v += coefficients(label, k) * basis_signal(periods, k, t);
    return v;
  }

  // Samples of f_C over the loss window {warmup, ..., warmup+window-1}.
  RVec window_samples(int label) const {
    RVec s(window);
    for (int j = 0; j < window; ++j)
      s(j) = target_value(label, double(warmup + j));
    return s;
  }
};

// Deterministic default assignment: classes 0..min(C, D)-1 take the pure
// basis signals with unit coefficient (D = basis dimension); when C == D+1
// the last class takes (g_1 + g_{D-1}) / sqrt(2), the normalized sum of the
// fundamental cosine and the highest-frequency cosine. More classes than
// D+1 cannot be told apart and are rejected.
inline TargetCodebook default_codebook(const SpectralConfig& config,
                                       int class_count) {
  const int dim = basis_dimension(config.periods);
  if (class_count < 1 || class_count > dim + 1)
    throw ConfigInvalid("default_codebook: " + std::to_string(class_count) +
                        " classes need basis dimension >= " +
                        std::to_string(class_count - 1) + ", have " +
                        std::to_string(dim));
  TargetCodebook cb;
  cb.class_count = class_count;
  cb.periods = config.periods;
  cb.window = config.window;
  cb.warmup = config.warmup;
  cb.coefficients = RMat::Zero(class_count, dim);
  for (int c = 0; c < class_count && c < dim; ++c)
    cb.coefficients(c, c) = 1.0;
  if (class_count == dim + 1) {
    cb.coefficients(dim, 1) = 1.0 / std::numbers::sqrt2;
    cb.coefficients(dim, dim - 2) = 1.0 / std::numbers::sqrt2;
  }

  // Rows must stay distinguishable; record the margin the decoder relies on.
  cb.d_min = std::numeric_limits<double>::infinity();
  for (int a = 0; a < class_count; ++a) {
    const RVec sa = cb.window_samples(a);
    for (int b = a + 1; b < class_count; ++b) {
      const double d = (sa - cb.window_samples(b)).norm();
      cb.d_min = std::min(cb.d_min, d);
    }
  }
  if (class_count > 1 && !(cb.d_min > 0.0))
    throw ConfigInvalid("default_codebook: two classes coincide over the window");
  return cb;
}

struct DecodeResult {
  int label = 0;
  RVec distances;  // squared L2 distance to each class over the window
};

// argmin_C sum_t (series[t] - f_C(warmup+t))^2, ties to the smaller class.
inline DecodeResult decode(const RVec& series, const TargetCodebook& cb) {
  if (series.size() != cb.window)
    throw ConfigInvalid("decode: series length " +
                        std::to_string(series.size()) + " != window " +
                        std::to_string(cb.window));
  DecodeResult r;
  r.distances.resize(cb.class_count);
  for (int c = 0; c < cb.class_count; ++c)
    r.distances(c) = (series - cb.window_samples(c)).squaredNorm();
  r.label = 0;
  for (int c = 1; c < cb.class_count; ++c)
    if (r.distances(c) < r.distances(r.label)) r.label = c;
  return r;
}

// Smallest positive integer P <= limit such that every finite period divides
// P (within tolerance); the common period of all target signals. Returns 0
// when none exists or no finite periods are present.
inline int common_period(const std::vector<double>& periods, int limit = 4096) {
  bool any_finite = false;
  for (double t : periods) any_finite |= (t != kInfinitePeriod);
  if (!any_finite) return 0;
  for (int p = 1; p <= limit; ++p) {
    bool ok = true;
    for (double t : periods) {
      if (t == kInfinitePeriod) continue;
      const double cycles = double(p) / t;
      if (std::abs(cycles - std::round(cycles)) > 1e-9) {
        ok = false;
        break;
      }
    }
    if (ok) return p;
  }
  return 0;
}

}  // namespace crsn
