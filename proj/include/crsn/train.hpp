#pragma once

// Loss over the readout window, minibatch BPTT training with Adam, and
// accuracy evaluation. Within a batch, disjoint sample shards run forward and
// backward on independent tapes in parallel threads against the read-only
// model; gradients merge by summation at the optimizer barrier. Phi is
// factored once per optimizer step and shared across the shard tapes.

#include <Eigen/Dense>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <memory>
#include <numeric>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "crsn/autodiff.hpp"
#include "crsn/checkpoint.hpp"
#include "crsn/data.hpp"
#include "crsn/errors.hpp"
#include "crsn/spectral.hpp"
#include "crsn/targets.hpp"

namespace crsn {

struct TrainConfig {
  int batch_size = 64;
  int epochs = 30;
  double learning_rate = 1e-3;
  double lr_decay = 1.0;            // per-epoch multiplicative decay
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double grad_clip = 0.0;           // global L2 clip; 0 disables
  Eigen::Index train_subset = 0;    // 0 = full training split
  int eval_every = 0;               // optimizer steps between evals; 0 = epoch end only
  Eigen::Index eval_subset = 1000;  // samples per periodic eval; 0 = full
  int workers = 0;                  // 0 = hardware concurrency
  std::uint64_t seed = 42;
  std::string checkpoint_path;      // empty = keep the model in memory only
  std::string report_path;          // empty = no line-delimited JSON report

  void validate() const {
    if (!(learning_rate > 0.0))
      throw ConfigInvalid("learning_rate must be > 0");
    if (!(lr_decay > 0.0) || lr_decay > 1.0)
      throw ConfigInvalid("lr_decay must lie in (0, 1]");
    if (adam_beta1 < 0.0 || adam_beta1 >= 1.0 || adam_beta2 < 0.0 ||
        adam_beta2 >= 1.0)
      throw ConfigInvalid("adam betas must lie in [0, 1)");
    if (!(adam_eps > 0.0)) throw ConfigInvalid("adam_eps must be > 0");
    if (batch_size < 1) throw ConfigInvalid("batch_size must be >= 1");
    if (epochs < 0) throw ConfigInvalid("epochs must be >= 0");
  }
};

struct EvalRecord {
  int epoch;
  long step;
  double loss_mean;  // running epoch mean at evaluation time
  double accuracy;
  double wall_s;
};

struct TrainReport {
  std::vector<double> epoch_loss_mean;
  std::vector<double> epoch_wall_s;
  std::vector<EvalRecord> eval_history;
  std::string final_checkpoint;
  std::string best_checkpoint;
  double best_accuracy = -1.0;
  long optimizer_steps = 0;
  long invariant_checks = 0;  // post-step eigenvalue constraint checks
  std::string optimizer = "adam";
};

// Records the rollout of one shard (columns of x0) and the summed squared
// readout error over the loss window onto the tape. Returns the scalar loss.
inline CVar rollout_loss_on_tape(Tape& tape, const TapeModel& tm,
                                 const SpectralConfig& config,
                                 const TargetCodebook& codebook,
                                 const CMat& x0,
                                 const std::vector<int>& labels) {
  if (x0.cols() != static_cast<Eigen::Index>(labels.size()))
    throw ConfigInvalid("rollout_loss_on_tape: one label per column required");
  const Eigen::Index readout_row = config.n_total - 1;
  CVar x = tape.cvar(x0, false);
  CVar loss;
  auto add_term = [&](CVar state, int t) {
    RVec targets(static_cast<Eigen::Index>(labels.size()));
    for (std::size_t b = 0; b < labels.size(); ++b)
      targets(static_cast<Eigen::Index>(b)) =
          codebook.target_value(labels[b], double(t));
    CVar term = tape.sse_row(state, readout_row, targets);
    loss = loss.valid() ? tape.add(loss, term) : term;
  };
  if (config.warmup == 0) add_term(x, 0);
  const int t_end = config.warmup + config.window - 1;
  for (int t = 1; t <= t_end; ++t) {
    x = tape_step(tape, tm, x);
    if (t >= config.warmup) add_term(x, t);
  }
  return loss;
}

// Single-sample loss: rolls the encoded input through the warmup and loss
// window on the tape and sums squared differences between the readout
// Re(x_t[N]) and the class target over t in {warmup, ..., warmup+window-1}.
inline CVar sample_loss(const SpectralModel& model,
                        const TargetCodebook& codebook, const CVec& x0,
                        int label, Tape& tape) {
  TapeModel tm = make_tape_model(tape, model);
  return rollout_loss_on_tape(tape, tm, model.config, codebook, x0, {label});
}

struct AdamState {
  RVec m_basis, v_basis, m_rho, v_rho;
  long t = 0;

  void init(const SpectralModel& model) {
    m_basis = RVec::Zero(2 * model.trainable_basis.size());
    v_basis = RVec::Zero(2 * model.trainable_basis.size());
    m_rho = RVec::Zero(model.rho.size());
    v_rho = RVec::Zero(model.rho.size());
    t = 0;
  }
  bool initialized() const { return m_basis.size() > 0; }
};

namespace detail {

inline void adam_update_span(double* p, const double* g, double* m, double* v,
                             std::size_t n, const TrainConfig& cfg,
                             long step_index, double clip_scale) {
  const double b1 = cfg.adam_beta1, b2 = cfg.adam_beta2;
  const double c1 = 1.0 - std::pow(b1, double(step_index));
  const double c2 = 1.0 - std::pow(b2, double(step_index));
  for (std::size_t k = 0; k < n; ++k) {
    const double gk = g[k] * clip_scale;
    m[k] = b1 * m[k] + (1.0 - b1) * gk;
    v[k] = b2 * v[k] + (1.0 - b2) * gk * gk;
    const double mhat = m[k] / c1;
    const double vhat = v[k] / c2;
    p[k] -= cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.adam_eps);
  }
}

inline double grad_sq_norm(const Gradients& grads) {
  double s = 0.0;
  for (const auto& [pid, entry] : grads.by_parameter) {
    const auto* d = reinterpret_cast<const double*>(entry.grad.data());
    const std::size_t n = 2 * static_cast<std::size_t>(entry.grad.size());
    for (std::size_t k = 0; k < n; ++k) s += d[k] * d[k];
  }
  return s;
}

}  // namespace detail

// One Adam update of the model's trainable parameters (basis re/im slots and
// rho). rho is updated like any real slot: the tanh reparametrization keeps
// |lambda| < 1 with no projection. step_index is 1-based.
inline void adam_step(SpectralModel& model, const Gradients& grads,
                      AdamState& state, const TrainConfig& cfg,
                      long step_index) {
  if (!state.initialized()) state.init(model);
  int bad_param = -1;
  std::size_t bad_slot = 0;
  if (!grads.all_finite(&bad_param, &bad_slot))
    throw NonFiniteGradient(bad_param, bad_slot,
                            "non-finite gradient in parameter " +
                                std::to_string(bad_param) + " slot " +
                                std::to_string(bad_slot));
  double clip_scale = 1.0;
  if (cfg.grad_clip > 0.0) {
    const double norm = std::sqrt(detail::grad_sq_norm(grads));
    if (norm > cfg.grad_clip) clip_scale = cfg.grad_clip / norm;
  }

  const CMat& gb = grads.by_parameter.at(TapeModel::kBasisParam).grad;
  const CMat& gr = grads.by_parameter.at(TapeModel::kRhoParam).grad;
  if (gb.rows() != model.trainable_basis.rows() ||
      gb.cols() != model.trainable_basis.cols() ||
      gr.rows() != model.rho.size())
    throw ConfigInvalid("adam_step: gradient shapes do not match the model");

  detail::adam_update_span(
      reinterpret_cast<double*>(model.trainable_basis.data()),
      reinterpret_cast<const double*>(gb.data()), state.m_basis.data(),
      state.v_basis.data(), static_cast<std::size_t>(2 * gb.size()), cfg,
      step_index, clip_scale);

  std::vector<double> rho_grad(static_cast<std::size_t>(gr.size()));
  for (Eigen::Index k = 0; k < gr.size(); ++k) rho_grad[k] = gr(k).real();
  detail::adam_update_span(model.rho.data(), rho_grad.data(),
                           state.m_rho.data(), state.v_rho.data(),
                           rho_grad.size(), cfg, step_index, clip_scale);
  state.t = step_index;
}

// Series of window readouts Re(x_t[N-1]) for t in {warmup..warmup+window-1},
// one column per sample; inference only.
inline RMat window_readout(const SpectralOperator& op,
                           const SpectralConfig& config, CMat x) {
  RMat series(config.window, x.cols());
  if (config.warmup == 0)
    for (Eigen::Index c = 0; c < x.cols(); ++c)
      series(0, c) = x(config.n_total - 1, c).real();
  const int t_end = config.warmup + config.window - 1;
  for (int t = 1; t <= t_end; ++t) {
    x = op.step_matrix(x);
    if (t >= config.warmup)
      for (Eigen::Index c = 0; c < x.cols(); ++c)
        series(t - config.warmup, c) = x(config.n_total - 1, c).real();
  }
  return series;
}

// Fraction of samples whose window readout decodes to the true label.
// Side-effect free; parallel over sample chunks.
inline double evaluate_accuracy(const SpectralModel& model,
                                const Dataset& dataset,
                                const TargetCodebook& codebook,
                                int workers = 0,
                                Eigen::MatrixXi* confusion = nullptr) {
  if (dataset.size() == 0) throw ConfigInvalid("evaluate_accuracy: empty dataset");
  const SpectralOperator op(model);
  const SpectralConfig& config = model.config;
  const Eigen::Index n = dataset.size();
  int w = workers > 0 ? workers
                      : static_cast<int>(std::thread::hardware_concurrency());
  w = std::max(1, std::min<int>(w, static_cast<int>(n)));

  std::vector<long> correct(static_cast<std::size_t>(w), 0);
  std::vector<Eigen::MatrixXi> conf(static_cast<std::size_t>(w),
                                    Eigen::MatrixXi::Zero(10, 10));
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(w));

  auto run = [&](int wi) {
    try {
      const Eigen::Index chunk = 64;
      for (Eigen::Index start = Eigen::Index(wi) * chunk; start < n;
           start += Eigen::Index(w) * chunk) {
        const Eigen::Index b = std::min(chunk, n - start);
        CMat x0(config.n_total, b);
        for (Eigen::Index c = 0; c < b; ++c)
          x0.col(c) = encode_row(dataset.images.row(start + c).transpose(),
                                   config);
        const RMat series = window_readout(op, config, std::move(x0));
        for (Eigen::Index c = 0; c < b; ++c) {
          const int pred = decode(series.col(c), codebook).label;
          const int truth = dataset.labels(start + c);
          if (pred == truth) ++correct[static_cast<std::size_t>(wi)];
          conf[static_cast<std::size_t>(wi)](truth, pred) += 1;
        }
      }
    } catch (...) {
      errors[static_cast<std::size_t>(wi)] = std::current_exception();
    }
  };
  if (w == 1) {
    run(0);
  } else {
    std::vector<std::thread> threads;
    for (int wi = 0; wi < w; ++wi) threads.emplace_back(run, wi);
    for (auto& t : threads) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);

  long total_correct = std::accumulate(correct.begin(), correct.end(), 0L);
  if (confusion) {
    confusion->setZero(10, 10);
    for (const auto& c : conf) *confusion += c;
  }
  return double(total_correct) / double(n);
}

namespace detail {

struct ShardResult {
  Gradients grads;
  double loss_sum = 0.0;
};

inline ShardResult run_shard(const SpectralModel& model,
                             const TargetCodebook& codebook,
                             const Dataset& dataset,
                             const std::vector<Eigen::Index>& indices,
                             std::shared_ptr<const PhiFactor> factor) {
  const SpectralConfig& config = model.config;
  CMat x0(config.n_total, static_cast<Eigen::Index>(indices.size()));
  std::vector<int> labels(indices.size());
  for (std::size_t c = 0; c < indices.size(); ++c) {
    x0.col(static_cast<Eigen::Index>(c)) =
        encode_row(dataset.images.row(indices[c]).transpose(), config);
    labels[c] = dataset.labels(indices[c]);
  }
  Tape tape;
  TapeModel tm = make_tape_model(tape, model, std::move(factor));
  CVar loss = rollout_loss_on_tape(tape, tm, config, codebook, x0, labels);
  ShardResult out;
  out.loss_sum = loss.value()(0, 0).real();
  out.grads = tape.backward(loss);
  return out;
}

}  // namespace detail

// Shuffled-minibatch BPTT training. Per batch: forward+backward over worker
// shards on independent tapes, gradients averaged over the batch, one Adam
// update, then the eigenvalue constraints are re-checked. Evaluates on
// eval_dataset per eval_every / at epoch end, checkpointing the best and the
// final model when checkpoint_path is set. Halts on NonFiniteGradient.
inline TrainReport train(SpectralModel& model, const Dataset& dataset,
                         const TargetCodebook& codebook, const TrainConfig& cfg,
                         const Dataset* eval_dataset = nullptr) {
  cfg.validate();
  if (dataset.size() == 0) throw ConfigInvalid("train: empty dataset");
  Dataset subset_holder;
  const Dataset* tds = &dataset;
  if (cfg.train_subset > 0 && cfg.train_subset < dataset.size()) {
    subset_holder = dataset.take(cfg.train_subset);
    tds = &subset_holder;
  }
  const Dataset& train_ds = *tds;

  TrainReport report;
  std::ofstream report_out;
  if (!cfg.report_path.empty()) {
    report_out.open(cfg.report_path, std::ios::trunc);
    if (!report_out)
      throw DataMissing("cannot write report " + cfg.report_path);
  }
  auto emit = [&](const nlohmann::json& j) {
    if (report_out) {
      report_out << j.dump() << "\n";
      report_out.flush();
    }
  };

  const int workers =
      cfg.workers > 0 ? cfg.workers
                      : std::max(1u, std::thread::hardware_concurrency());
  AdamState adam;
  adam.init(model);
  std::mt19937_64 shuffle_rng(cfg.seed);

  // Snapshot of the fixed spectral data; must stay bit-identical throughout.
  const CMat fixed_basis_snapshot = model.fixed_basis;
  const CVec fixed_eigs_snapshot = model.fixed_eigenvalues;
  auto check_invariants = [&]() {
    for (Eigen::Index k = 0; k < model.rho.size(); ++k)
      if (!std::isfinite(model.rho(k)) || !(std::abs(std::tanh(model.rho(k))) < 1.0))
        throw ConfigInvalid("trainable eigenvalue bound violated at " +
                            std::to_string(k));
    if (std::memcmp(model.fixed_basis.data(), fixed_basis_snapshot.data(),
                    sizeof(Cplx) * model.fixed_basis.size()) != 0 ||
        std::memcmp(model.fixed_eigenvalues.data(), fixed_eigs_snapshot.data(),
                    sizeof(Cplx) * model.fixed_eigenvalues.size()) != 0)
      throw ConfigInvalid("fixed eigendata changed during training");
    ++report.invariant_checks;
  };

  auto evaluate = [&](int epoch, double loss_mean,
                      std::chrono::steady_clock::time_point t0) {
    if (!eval_dataset || eval_dataset->size() == 0) return;
    const Dataset eval_ds = cfg.eval_subset > 0
                                ? eval_dataset->take(cfg.eval_subset)
                                : *eval_dataset;
    const double acc = evaluate_accuracy(model, eval_ds, codebook, workers);
    const double wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();
    report.eval_history.push_back(
        {epoch, report.optimizer_steps, loss_mean, acc, wall});
    emit({{"event", "eval"},
          {"epoch", epoch},
          {"step", report.optimizer_steps},
          {"loss_mean", loss_mean},
          {"accuracy", acc},
          {"wall_s", wall}});
    if (acc > report.best_accuracy) {
      report.best_accuracy = acc;
      if (!cfg.checkpoint_path.empty()) {
        report.best_checkpoint = cfg.checkpoint_path + ".best";
        save_checkpoint(report.best_checkpoint, model, &codebook);
      }
    }
  };

  const auto t_start = std::chrono::steady_clock::now();
  std::vector<Eigen::Index> perm(static_cast<std::size_t>(train_ds.size()));
  std::iota(perm.begin(), perm.end(), 0);

  TrainConfig step_cfg = cfg;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto t_epoch = std::chrono::steady_clock::now();
    step_cfg.learning_rate =
        cfg.learning_rate * std::pow(cfg.lr_decay, double(epoch));
    std::shuffle(perm.begin(), perm.end(), shuffle_rng);
    double loss_accum = 0.0;
    Eigen::Index samples_seen = 0;

    for (std::size_t at = 0; at < perm.size(); at += std::size_t(cfg.batch_size)) {
      const std::size_t b_end = std::min(perm.size(), at + std::size_t(cfg.batch_size));
      const int b_n = static_cast<int>(b_end - at);

      // One factorization per parameter update, shared across shard tapes.
      auto factor =
          PhiFactor::build(model.assemble_phi(), /*with_adjoint=*/true);

      const int w = std::max(1, std::min(workers, b_n));
      std::vector<detail::ShardResult> results(static_cast<std::size_t>(w));
      std::vector<std::exception_ptr> errors(static_cast<std::size_t>(w));
      auto run = [&](int wi) {
        try {
          std::vector<Eigen::Index> indices;
          for (std::size_t k = at + std::size_t(wi); k < b_end;
               k += std::size_t(w))
            indices.push_back(perm[k]);
          if (!indices.empty())
            results[static_cast<std::size_t>(wi)] =
                detail::run_shard(model, codebook, train_ds, indices, factor);
        } catch (...) {
          errors[static_cast<std::size_t>(wi)] = std::current_exception();
        }
      };
      if (w == 1) {
        run(0);
      } else {
        std::vector<std::thread> threads;
        for (int wi = 0; wi < w; ++wi) threads.emplace_back(run, wi);
        for (auto& t : threads) t.join();
      }
      for (auto& e : errors)
        if (e) std::rethrow_exception(e);

      Gradients grads;
      double batch_loss = 0.0;
      for (auto& r : results) {
        grads.accumulate(r.grads);
        batch_loss += r.loss_sum;
      }
      grads.scale(1.0 / double(b_n));  // mean over the minibatch
      adam_step(model, grads, adam, step_cfg, ++report.optimizer_steps);
      check_invariants();

      loss_accum += batch_loss;
      samples_seen += b_n;
      if (cfg.eval_every > 0 && report.optimizer_steps % cfg.eval_every == 0)
        evaluate(epoch, loss_accum / double(samples_seen), t_start);
    }

    const double epoch_loss = loss_accum / double(samples_seen);
    report.epoch_loss_mean.push_back(epoch_loss);
    report.epoch_wall_s.push_back(
        std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                      t_epoch)
            .count());
    emit({{"event", "epoch"},
          {"epoch", epoch},
          {"loss_mean", epoch_loss},
          {"wall_s", report.epoch_wall_s.back()}});
    evaluate(epoch, epoch_loss, t_start);
  }

  if (!cfg.checkpoint_path.empty()) {
    save_checkpoint(cfg.checkpoint_path, model, &codebook);
    report.final_checkpoint = cfg.checkpoint_path;
  }
  emit({{"event", "final"},
        {"optimizer", report.optimizer},
        {"steps", report.optimizer_steps},
        {"best_accuracy", report.best_accuracy},
        {"checkpoint", report.final_checkpoint}});
  return report;
}

}  // namespace crsn
