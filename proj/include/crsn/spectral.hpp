#pragma once

// The C-RSN parameter structure and its discrete map
//   x_{t+1} = f(Phi Lambda Phi^{-1} x_t)
// where Phi = [fixed 2-sparse columns | dense trainable columns], Lambda has
// M fixed unit-modulus complex eigenvalues exp(2*pi*i/T_m) followed by
// trainable real eigenvalues tanh(rho_l), and f applies tanh to the re/im
// slots of the first n_nonlinear components and is the identity elsewhere.
// Phi^{-1} is never materialized: the map runs through one cached LU
// factorization per parameter state.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "crsn/autodiff.hpp"
#include "crsn/errors.hpp"

namespace crsn {

inline constexpr double kInfinitePeriod =
    std::numeric_limits<double>::infinity();

struct SpectralConfig {
  int n_total = 1000;         // N
  int n_nonlinear = 800;      // L, node count with tanh activation
  int n_fixed = 5;            // M, fixed eigenpairs
  std::vector<double> periods = {kInfinitePeriod, 20.0, 10.0, 20.0 / 3.0, 5.0};
  int warmup = 10;            // t' free-evolution steps before the loss window
  int window = 20;            // T, loss-window length
  std::uint64_t seed = 42;

  int n_trainable() const { return n_total - n_fixed; }

  void validate() const {
    if (n_total < 2)
      throw ConfigInvalid("n_total must be at least 2");
    if (n_fixed < 1 || n_fixed > n_nonlinear || n_nonlinear >= n_total)
      throw ConfigInvalid("config requires 1 <= M <= L < N, got N=" +
                          std::to_string(n_total) + " L=" +
                          std::to_string(n_nonlinear) + " M=" +
                          std::to_string(n_fixed));
    if (n_fixed >= n_total - n_nonlinear)
      throw ConfigInvalid(
          "fixed eigenvectors must be supported in the linear segment, "
          "which requires M < N-L");
    if (static_cast<int>(periods.size()) != n_fixed)
      throw ConfigInvalid("expected " + std::to_string(n_fixed) +
                          " periods, got " + std::to_string(periods.size()));
    for (double t : periods) {
      if (std::isnan(t) || (std::isfinite(t) && t <= 1.0))
        throw ConfigInvalid("periods must be INF or > 1");
    }
    if (warmup < 0 || window < 1)
      throw ConfigInvalid("warmup must be >= 0 and window >= 1");
  }
};

// Eigenvector for fixed mode m (1-based, as in psi^(m)): exactly two entries
// equal to one, at 1-based positions N and N-m, i.e. the last node and one
// node m places before it.
inline CVec fixed_eigenvector(int m, int n_total) {
  if (m < 1 || m >= n_total)
    throw ConfigInvalid("fixed_eigenvector: m=" + std::to_string(m) +
                        " out of range for N=" + std::to_string(n_total));
  CVec psi = CVec::Zero(n_total);
  psi(n_total - 1) = Cplx(1.0, 0.0);
  psi(n_total - 1 - m) = Cplx(1.0, 0.0);
  return psi;
}

// exp(2*pi*i / T); an infinite period maps to exactly 1+0i.
inline Cplx fixed_eigenvalue(double period) {
  if (period == kInfinitePeriod) return Cplx(1.0, 0.0);
  if (!(period > 1.0))
    throw ConfigInvalid("finite periods must be > 1, got " +
                        std::to_string(period));
  const double w = 2.0 * std::numbers::pi / period;
  return Cplx(std::cos(w), std::sin(w));
}

struct SpectralModel {
  SpectralConfig config;
  CMat fixed_basis;        // N x M, the 2-sparse columns psi^(m)
  CVec fixed_eigenvalues;  // M unit-modulus values
  CMat trainable_basis;    // N x (N-M) dense complex columns
  RVec rho;                // N-M real pre-activations, lambda_l = tanh(rho_l)

  CMat assemble_phi() const {
    CMat phi(config.n_total, config.n_total);
    phi.leftCols(config.n_fixed) = fixed_basis;
    phi.rightCols(config.n_trainable()) = trainable_basis;
    return phi;
  }

  CVec lambda_vector() const {
    CVec lambda(config.n_total);
    lambda.head(config.n_fixed) = fixed_eigenvalues;
    for (int j = 0; j < config.n_trainable(); ++j)
      lambda(config.n_fixed + j) = Cplx(std::tanh(rho(j)), 0.0);
    return lambda;
  }

  std::size_t parameter_slot_count() const {
    return 2 * static_cast<std::size_t>(trainable_basis.size()) +
           static_cast<std::size_t>(rho.size());
  }
};

// Builds a model from a seeded generator. The trainable basis starts as the
// orthonormalized columns (thin QR) of an i.i.d. complex Gaussian draw with
// standard deviation 1/sqrt(N) per real slot, column-major draw order, re
// before im; rho is uniform in [-1, 1]. Orthonormal columns keep the basis
// well conditioned, so the map's non-normal transient stays bounded and the
// non-linear segment contracts at max |tanh rho| per step instead of locking
// into tanh saturation (a raw Gaussian basis at N=1000 has condition number
// in the hundreds and saturates from image-scale inputs). The resulting
// basis is checked nonsingular with one LU factorization; an unlucky draw
// raises SingularBasis and the caller re-seeds.
inline SpectralModel init_model(const SpectralConfig& config) {
  config.validate();
  const int n = config.n_total, m = config.n_fixed;
  SpectralModel model;
  model.config = config;

  model.fixed_basis.resize(n, m);
  model.fixed_eigenvalues.resize(m);
  for (int k = 0; k < m; ++k) {
    model.fixed_basis.col(k) = fixed_eigenvector(k + 1, n);
    model.fixed_eigenvalues(k) = fixed_eigenvalue(config.periods[k]);
  }

  std::mt19937_64 rng(config.seed);
  std::normal_distribution<double> gauss(0.0, 1.0 / std::sqrt(double(n)));
  CMat draw(n, config.n_trainable());
  for (int j = 0; j < config.n_trainable(); ++j)
    for (int i = 0; i < n; ++i) {
      const double re = gauss(rng), im = gauss(rng);
      draw(i, j) = Cplx(re, im);
    }
  Eigen::HouseholderQR<CMat> qr(draw);
  model.trainable_basis.noalias() =
      qr.householderQ() * CMat::Identity(n, config.n_trainable());

  std::uniform_real_distribution<double> uni(-1.0, 1.0);
  model.rho.resize(config.n_trainable());
  for (int j = 0; j < config.n_trainable(); ++j) model.rho(j) = uni(rng);

  PhiFactor::build(model.assemble_phi(), /*with_adjoint=*/false);
  return model;
}

// One time step of the trajectory record.
struct Injection {
  int time;
  std::string tag;
};

struct Trajectory {
  std::vector<CVec> states;  // x_0 .. x_steps
  std::vector<Injection> injection_log;

  int length() const { return static_cast<int>(states.size()); }
};

// Inference-side map evaluator: assembles Phi and Lambda from a model and
// factors Phi once. Immutable afterwards; safe to share across threads.
// n_nonlinear may be overridden (test hook: 0 disables the nonlinearity to
// expose the pure linear spectrum).
class SpectralOperator {
 public:
  explicit SpectralOperator(const SpectralModel& model,
                            int n_nonlinear_override = -1)
      : phi_(model.assemble_phi()),
        lambda_(model.lambda_vector()),
        n_nonlinear_(n_nonlinear_override >= 0 ? n_nonlinear_override
                                               : model.config.n_nonlinear),
        factor_(PhiFactor::build(phi_, /*with_adjoint=*/false)) {}

  int n_total() const { return static_cast<int>(phi_.rows()); }
  int n_nonlinear() const { return n_nonlinear_; }

  // Advances each column of the state matrix by one map application.
  CMat step_matrix(const CMat& x) const {
    CMat u = factor_->solve(x);
    u = lambda_.asDiagonal() * u;
    CMat y;
    y.noalias() = phi_ * u;
    for (Eigen::Index c = 0; c < y.cols(); ++c) {
      auto* col = reinterpret_cast<double*>(y.col(c).data());
      for (Eigen::Index i = 0; i < 2 * n_nonlinear_; ++i)
        col[i] = std::tanh(col[i]);
    }
    return y;
  }

  CVec step(const CVec& x) const { return step_matrix(x); }

 private:
  CMat phi_;
  CVec lambda_;
  int n_nonlinear_;
  std::shared_ptr<const PhiFactor> factor_;
};

// step as a standalone operation; builds a fresh operator, so prefer
// SpectralOperator (or rollout) when taking more than one step.
inline CVec step(const SpectralModel& model, const CVec& x) {
  if (x.size() != model.config.n_total)
    throw ConfigInvalid("step: state has wrong dimension");
  return SpectralOperator(model).step(x);
}

inline Trajectory rollout(const SpectralOperator& op, const CVec& x0,
                          int steps) {
  if (steps < 0) throw ConfigInvalid("rollout: steps must be >= 0");
  if (x0.size() != op.n_total())
    throw ConfigInvalid("rollout: state has wrong dimension");
  Trajectory traj;
  traj.states.reserve(static_cast<std::size_t>(steps) + 1);
  traj.states.push_back(x0);
  for (int t = 0; t < steps; ++t)
    traj.states.push_back(op.step(traj.states.back()));
  return traj;
}

inline Trajectory rollout(const SpectralModel& model, const CVec& x0,
                          int steps) {
  return rollout(SpectralOperator(model), x0, steps);
}

// Model mirrored onto a tape for BPTT: the trainable basis and rho become
// trainable leaves, Phi an assembled node reused by every step.
struct TapeModel {
  CVar basis;
  CVar rho;
  CVar phi;
  CVec fixed_eigenvalues;
  int n_nonlinear = 0;
  std::shared_ptr<const PhiFactor> shared_factor;

  // Parameter ids follow leaf recording order.
  static constexpr int kBasisParam = 0;
  static constexpr int kRhoParam = 1;
};

inline TapeModel make_tape_model(
    Tape& tape, const SpectralModel& model,
    std::shared_ptr<const PhiFactor> shared_factor = nullptr) {
  TapeModel tm;
  tm.basis = tape.cvar(model.trainable_basis, /*trainable=*/true);
  tm.rho = tape.cvar_real(model.rho, /*trainable=*/true);
  tm.phi = tape.assemble_basis(tm.basis, model.fixed_basis);
  tm.fixed_eigenvalues = model.fixed_eigenvalues;
  tm.n_nonlinear = model.config.n_nonlinear;
  tm.shared_factor = std::move(shared_factor);
  return tm;
}

// One recorded map application: split_tanh(Phi * (Lambda * solve(Phi, x))).
inline CVar tape_step(Tape& tape, const TapeModel& tm, CVar x) {
  CVar u = tape.csolve(tm.phi, x, tm.shared_factor);
  CVar v = tape.spectral_scale(u, tm.rho, tm.fixed_eigenvalues);
  CVar y = tape.cmatmul(tm.phi, v);
  return tape.split_tanh(y, tm.n_nonlinear);
}

}  // namespace crsn
