#pragma once

// Central finite-difference verification of the BPTT gradients on a toy
// model. The checker only uses the forward (primal) path to probe the loss,
// so it is independent of every adjoint rule it validates.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "crsn/autodiff.hpp"
#include "crsn/spectral.hpp"
#include "crsn/targets.hpp"
#include "crsn/train.hpp"

namespace crsn {

inline SpectralConfig toy_gradcheck_config() {
  SpectralConfig c;
  c.n_total = 20;
  c.n_nonlinear = 16;
  c.n_fixed = 3;
  c.periods = {kInfinitePeriod, 6.0, 3.0};
  c.warmup = 4;
  c.window = 6;  // 10 rollout steps in total
  c.seed = 42;
  return c;
}

struct GradCheckOptions {
  int n_slots = 200;       // sampled slots; all rho slots are always included
  double fd_step = 1e-6;
  double rel_tol = 1e-5;
  double abs_floor = 1e-8;   // criterion when the gradient is tiny
  double grad_floor = 1e-3;  // |g| below this switches to the absolute check
  std::uint64_t seed = 42;
  bool corrupt_adjoint = false;  // negative control for the checker itself
};

struct GradCheckResult {
  double max_rel_err = 0.0;        // over slots with |g| >= grad_floor
  double max_abs_err_small = 0.0;  // over slots with |g| < grad_floor
  int slots_checked = 0;
  bool pass = false;
  std::string worst_slot;
};

inline GradCheckResult run_gradcheck(const SpectralConfig& config,
                                     const GradCheckOptions& opt) {
  SpectralModel model = init_model(config);
  const int class_count =
      std::min(10, basis_dimension(config.periods) + 1);
  const TargetCodebook codebook = default_codebook(config, class_count);

  std::mt19937_64 rng(opt.seed);
  std::uniform_real_distribution<double> uni01(0.0, 1.0);
  CVec x0 = CVec::Zero(config.n_total);
  for (int i = 0; i < config.n_nonlinear; ++i) x0(i) = Cplx(uni01(rng), 0.0);
  const int label =
      static_cast<int>(rng() % static_cast<std::uint64_t>(class_count));

  auto loss_value = [&](const SpectralModel& m) {
    Tape tape;
    return sample_loss(m, codebook, x0, label, tape).value()(0, 0).real();
  };

  Tape tape;
  if (opt.corrupt_adjoint) tape.debug_tanh_adjoint_scale = 1.01;
  CVar loss = sample_loss(model, codebook, x0, label, tape);
  const Gradients grads = tape.backward(loss);

  // Slot universe: (param, slot). rho first, then sampled basis slots.
  const std::size_t basis_slots = grads.slot_count(TapeModel::kBasisParam);
  const std::size_t rho_slots = grads.slot_count(TapeModel::kRhoParam);
  std::vector<std::pair<int, std::size_t>> slots;
  for (std::size_t k = 0; k < rho_slots; ++k)
    slots.emplace_back(TapeModel::kRhoParam, k);
  std::vector<std::size_t> pool(basis_slots);
  std::iota(pool.begin(), pool.end(), std::size_t{0});
  std::shuffle(pool.begin(), pool.end(), rng);
  for (std::size_t i = 0;
       i < pool.size() && slots.size() < static_cast<std::size_t>(opt.n_slots);
       ++i)
    slots.emplace_back(TapeModel::kBasisParam, pool[i]);

  auto slot_ref = [&](SpectralModel& m, int param, std::size_t k) -> double& {
    if (param == TapeModel::kBasisParam)
      return reinterpret_cast<double*>(m.trainable_basis.data())[k];
    return m.rho(static_cast<Eigen::Index>(k));
  };

  GradCheckResult res;
  SpectralModel probe = model;
  for (const auto& [param, k] : slots) {
    double& x = slot_ref(probe, param, k);
    const double saved = x;
    x = saved + opt.fd_step;
    const double f_plus = loss_value(probe);
    x = saved - opt.fd_step;
    const double f_minus = loss_value(probe);
    x = saved;
    const double fd = (f_plus - f_minus) / (2.0 * opt.fd_step);
    const double g = grads.slot(param, k);
    const double err = std::abs(fd - g);
    ++res.slots_checked;
    if (std::max(std::abs(g), std::abs(fd)) < opt.grad_floor) {
      if (err > res.max_abs_err_small) res.max_abs_err_small = err;
    } else {
      const double rel = err / std::max(std::abs(g), std::abs(fd));
      if (rel > res.max_rel_err) {
        res.max_rel_err = rel;
        res.worst_slot = "param " + std::to_string(param) + " slot " +
                         std::to_string(k) + " ad=" + std::to_string(g) +
                         " fd=" + std::to_string(fd);
      }
    }
  }
  res.pass = res.max_rel_err < opt.rel_tol &&
             res.max_abs_err_small < opt.abs_floor;
  return res;
}

}  // namespace crsn
