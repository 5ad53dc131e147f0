// crsn: train, evaluate and probe Complex Recurrent Spectral Networks.
//
// Subcommands: train, eval, export-series, demo-sequential, gradcheck.
// Configuration comes from a JSON file of flat dotted keys (--config),
// overridable by command-line flags; an empty config yields the paper-scale
// network (N=1000, L=800, M=5, periods [inf,20,10,20/3,5], T=20, t'=10).
// Structured results print as single-line JSON on stdout; failures print
// "<CATEGORY>: detail" on stderr and exit 1.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "crsn/analysis.hpp"
#include "crsn/checkpoint.hpp"
#include "crsn/data.hpp"
#include "crsn/errors.hpp"
#include "crsn/fetch.hpp"
#include "crsn/gradcheck.hpp"
#include "crsn/spectral.hpp"
#include "crsn/targets.hpp"
#include "crsn/train.hpp"

namespace {

using nlohmann::json;

struct RunConfig {
  crsn::SpectralConfig spectral;
  crsn::TrainConfig train;
  std::string data_dir;  // resolved: flag > config > CRSN_DATA_DIR > data/mnist
  bool download = false;
  std::string url_base = crsn::kMnistDefaultUrlBase;
  std::string checkpoint = "crsn-checkpoint.bin";
  std::string report;
  std::string out;
  std::string json_out;  // optional JSON export of the same series
};

double parse_period(const json& j) {
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "inf" || s == "INF" || s == "Infinity") return crsn::kInfinitePeriod;
    throw crsn::ConfigInvalid("bad period value '" + s + "'");
  }
  if (j.is_null()) return crsn::kInfinitePeriod;
  return j.get<double>();
}

// Flat dotted-key JSON config; unknown keys are rejected.
void apply_config_file(RunConfig& rc, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw crsn::ConfigInvalid("cannot open config file " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw crsn::ConfigInvalid(std::string("config parse error: ") + e.what());
  }
  if (!j.is_object()) throw crsn::ConfigInvalid("config must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    try {
      if (key == "spectral.n_total") rc.spectral.n_total = value.get<int>();
      else if (key == "spectral.n_nonlinear") rc.spectral.n_nonlinear = value.get<int>();
      else if (key == "spectral.n_fixed") rc.spectral.n_fixed = value.get<int>();
      else if (key == "spectral.periods") {
        rc.spectral.periods.clear();
        for (const auto& p : value) rc.spectral.periods.push_back(parse_period(p));
      } else if (key == "spectral.warmup") rc.spectral.warmup = value.get<int>();
      else if (key == "spectral.window") rc.spectral.window = value.get<int>();
      else if (key == "spectral.seed") rc.spectral.seed = value.get<std::uint64_t>();
      else if (key == "train.batch_size") rc.train.batch_size = value.get<int>();
      else if (key == "train.epochs") rc.train.epochs = value.get<int>();
      else if (key == "train.learning_rate") rc.train.learning_rate = value.get<double>();
      else if (key == "train.lr_decay") rc.train.lr_decay = value.get<double>();
      else if (key == "train.adam_beta1") rc.train.adam_beta1 = value.get<double>();
      else if (key == "train.adam_beta2") rc.train.adam_beta2 = value.get<double>();
      else if (key == "train.adam_eps") rc.train.adam_eps = value.get<double>();
      else if (key == "train.grad_clip") rc.train.grad_clip = value.get<double>();
      else if (key == "train.train_subset") rc.train.train_subset = value.get<Eigen::Index>();
      else if (key == "train.eval_every") rc.train.eval_every = value.get<int>();
      else if (key == "train.eval_subset") rc.train.eval_subset = value.get<Eigen::Index>();
      else if (key == "train.workers") rc.train.workers = value.get<int>();
      else if (key == "train.seed") rc.train.seed = value.get<std::uint64_t>();
      else if (key == "data.dir") rc.data_dir = value.get<std::string>();
      else if (key == "data.download") rc.download = value.get<bool>();
      else if (key == "data.url_base") rc.url_base = value.get<std::string>();
      else if (key == "paths.checkpoint") rc.checkpoint = value.get<std::string>();
      else if (key == "paths.report") rc.report = value.get<std::string>();
      else if (key == "paths.out") rc.out = value.get<std::string>();
      else throw crsn::ConfigInvalid("unknown config key '" + key + "'");
    } catch (const json::exception& e) {
      throw crsn::ConfigInvalid("bad value for '" + key + "': " + e.what());
    }
  }
}

std::string resolve_data_dir(const RunConfig& rc) {
  if (!rc.data_dir.empty()) return rc.data_dir;
  if (const char* env = std::getenv("CRSN_DATA_DIR"); env && *env) return env;
  return "data/mnist";
}

crsn::Dataset load_split(const RunConfig& rc, const std::string& split) {
  const std::string dir = resolve_data_dir(rc);
  if (rc.download) crsn::fetch_mnist(dir, rc.url_base);
  return crsn::load_dataset(dir, split);
}

json confusion_to_json(const Eigen::MatrixXi& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(row);
  }
  return rows;
}

int cmd_train(RunConfig rc) {
  rc.spectral.validate();
  rc.train.validate();
  const crsn::Dataset train_ds = load_split(rc, "train");
  const crsn::Dataset test_ds = load_split(rc, "test");
  const crsn::TargetCodebook codebook = crsn::default_codebook(rc.spectral, 10);
  crsn::SpectralModel model = crsn::init_model(rc.spectral);
  rc.train.checkpoint_path = rc.checkpoint;
  if (!rc.report.empty()) rc.train.report_path = rc.report;

  const crsn::TrainReport report =
      crsn::train(model, train_ds, codebook, rc.train, &test_ds);
  // Final accuracy over eval_subset samples (0 = the whole test split); use
  // the eval subcommand for the full-test number of a finished checkpoint.
  const crsn::Dataset final_eval = rc.train.eval_subset > 0
                                       ? test_ds.take(rc.train.eval_subset)
                                       : test_ds;
  const double final_acc =
      crsn::evaluate_accuracy(model, final_eval, codebook, rc.train.workers);

  json out = {{"final_accuracy", final_acc},
              {"best_eval_accuracy", report.best_accuracy},
              {"optimizer_steps", report.optimizer_steps},
              {"epochs", rc.train.epochs},
              {"checkpoint", report.final_checkpoint},
              {"epoch_loss_mean", report.epoch_loss_mean}};
  std::cout << out.dump() << "\n";
  return 0;
}

int cmd_eval(RunConfig rc) {
  crsn::Checkpoint ck = crsn::load_checkpoint(rc.checkpoint);
  const crsn::TargetCodebook codebook =
      ck.codebook ? *ck.codebook : crsn::default_codebook(ck.model.config, 10);
  const crsn::Dataset test_ds = load_split(rc, "test");
  Eigen::MatrixXi confusion;
  const double acc = crsn::evaluate_accuracy(ck.model, test_ds, codebook,
                                             rc.train.workers, &confusion);
  json out = {{"accuracy", acc},
              {"n", test_ds.size()},
              {"confusion", confusion_to_json(confusion)}};
  std::cout << out.dump() << "\n";
  return 0;
}

int cmd_export_series(RunConfig rc, Eigen::Index sample_index, int steps) {
  crsn::Checkpoint ck = crsn::load_checkpoint(rc.checkpoint);
  const crsn::SpectralConfig& config = ck.model.config;
  const crsn::TargetCodebook codebook =
      ck.codebook ? *ck.codebook : crsn::default_codebook(config, 10);
  const crsn::Dataset test_ds = load_split(rc, "test");
  if (sample_index < 0 || sample_index >= test_ds.size())
    throw crsn::ConfigInvalid("sample index " + std::to_string(sample_index) +
                              " out of range [0," +
                              std::to_string(test_ds.size()) + ")");
  const int label = test_ds.labels(sample_index);
  const crsn::CVec x0 = crsn::encode_input(
      test_ds.images.row(sample_index).transpose(), config);
  const crsn::Trajectory traj =
      crsn::rollout(ck.model, x0, std::max(0, steps - 1));

  crsn::RVec ts(steps), readout(steps), target(steps);
  std::vector<crsn::RVec> modes(static_cast<std::size_t>(config.n_fixed),
                                crsn::RVec(steps));
  for (int t = 0; t < steps; ++t) {
    ts(t) = t;
    readout(t) = traj.states[static_cast<std::size_t>(t)](config.n_total - 1).real();
    target(t) = codebook.target_value(label, double(t));
    for (int m = 1; m <= config.n_fixed; ++m)
      modes[static_cast<std::size_t>(m - 1)](t) =
          traj.states[static_cast<std::size_t>(t)](config.n_total - 1 - m).real();
  }
  double linf = 0.0;
  for (int t = config.warmup; t < std::min(steps, config.warmup + config.window); ++t)
    linf = std::max(linf, std::abs(readout(t) - target(t)));

  std::vector<std::pair<std::string, crsn::RVec>> columns = {
      {"t", ts}, {"readout", readout}, {"target", target}};
  for (int m = 1; m <= config.n_fixed; ++m)
    columns.emplace_back("mode_" + std::to_string(m),
                         modes[static_cast<std::size_t>(m - 1)]);
  const std::string path = rc.out.empty() ? "series.csv" : rc.out;
  crsn::write_series_csv(path, columns,
                         {"label " + std::to_string(label),
                          "linf_gap_window " + std::to_string(linf)});
  if (!rc.json_out.empty()) crsn::write_series_json(rc.json_out, columns);
  json out = {{"csv", path}, {"label", label}, {"linf_gap_window", linf}};
  std::cout << out.dump() << "\n";
  return 0;
}

int cmd_demo_sequential(RunConfig rc, Eigen::Index idx_a, Eigen::Index idx_b,
                        int gap) {
  crsn::Checkpoint ck = crsn::load_checkpoint(rc.checkpoint);
  const crsn::SpectralConfig& config = ck.model.config;
  const crsn::TargetCodebook codebook =
      ck.codebook ? *ck.codebook : crsn::default_codebook(config, 10);
  const crsn::Dataset test_ds = load_split(rc, "test");
  if (idx_a < 0 || idx_a >= test_ds.size() || idx_b < 0 ||
      idx_b >= test_ds.size())
    throw crsn::ConfigInvalid("sample index out of range");
  const crsn::CVec x0_a =
      crsn::encode_input(test_ds.images.row(idx_a).transpose(), config);
  const crsn::CVec x0_b =
      crsn::encode_input(test_ds.images.row(idx_b).transpose(), config);
  const crsn::SequentialResult res = crsn::sequential_experiment(
      ck.model, codebook, x0_a, test_ds.labels(idx_a), x0_b,
      test_ds.labels(idx_b), gap);

  crsn::RVec ts(res.combined_series.size());
  for (Eigen::Index j = 0; j < ts.size(); ++j) ts(j) = res.compare_start + j;
  const std::string path = rc.out.empty() ? "sequential.csv" : rc.out;
  const std::vector<std::pair<std::string, crsn::RVec>> columns = {
      {"t", ts},
      {"combined", res.combined_series},
      {"superposed", res.superposed_series},
      {"predicted", res.predicted_series}};
  crsn::write_series_csv(path, columns);
  if (!rc.json_out.empty()) crsn::write_series_json(rc.json_out, columns);
  json out = {{"csv", path},
              {"label_a", res.label_first},
              {"label_b", res.label_second},
              {"decoded_first", res.decoded.label_first},
              {"decoded_second", res.decoded.label_second},
              {"gap", res.gap_true},
              {"gap_estimate", res.gap_estimate},
              {"deviation", res.deviation},
              {"target_deviation", res.target_deviation},
              {"residual_at_injection", res.residual_at_injection}};
  std::cout << out.dump() << "\n";
  return 0;
}

int cmd_gradcheck(int n_slots, bool corrupt) {
  crsn::GradCheckOptions opt;
  opt.n_slots = n_slots;
  opt.corrupt_adjoint = corrupt;
  const crsn::GradCheckResult res =
      crsn::run_gradcheck(crsn::toy_gradcheck_config(), opt);
  json out = {{"max_rel_err", res.max_rel_err},
              {"max_abs_err_small", res.max_abs_err_small},
              {"slots_checked", res.slots_checked},
              {"pass", res.pass}};
  if (!res.worst_slot.empty()) out["worst_slot"] = res.worst_slot;
  std::cout << out.dump() << "\n";
  return res.pass ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Complex Recurrent Spectral Network"};
  app.require_subcommand(1);

  std::string config_path;
  RunConfig rc;
  app.add_option("--config", config_path, "JSON config of flat dotted keys");

  // Flag overrides; applied after the config file.
  std::optional<std::string> data_dir, checkpoint, report, out;
  std::optional<int> epochs, batch_size, workers, eval_every;
  std::optional<Eigen::Index> train_subset, eval_subset;
  std::optional<double> lr, lr_decay;
  std::optional<std::uint64_t> seed;
  bool download = false;
  app.add_option("--data-dir", data_dir, "directory with the MNIST IDX files");
  app.add_option("--checkpoint", checkpoint, "checkpoint path");
  app.add_option("--report", report, "line-delimited JSON training report");
  app.add_option("--out", out, "output CSV path");
  std::optional<std::string> json_out;
  app.add_option("--json-out", json_out, "also export the series as JSON");
  app.add_option("--epochs", epochs);
  app.add_option("--batch-size", batch_size);
  app.add_option("--workers", workers, "0 = machine parallelism");
  app.add_option("--eval-every", eval_every);
  app.add_option("--train-subset", train_subset);
  app.add_option("--eval-subset", eval_subset);
  app.add_option("--lr", lr);
  app.add_option("--lr-decay", lr_decay, "per-epoch learning-rate decay");
  app.add_option("--seed", seed, "spectral + train seed");
  app.add_flag("--download", download, "fetch MNIST if missing");

  auto* train_cmd = app.add_subcommand("train", "train on MNIST");
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
  auto* export_cmd =
      app.add_subcommand("export-series", "readout/target/mode CSV for one sample");
  Eigen::Index sample_index = 0;
  std::optional<int> steps;
  export_cmd->add_option("--sample-index", sample_index);
  export_cmd->add_option("--steps", steps, "rows to export (default t'+2T)");
  auto* seq_cmd = app.add_subcommand("demo-sequential",
                                     "two-input superposition experiment");
  Eigen::Index idx_a = 0, idx_b = 1;
  int gap = 100;
  seq_cmd->add_option("--idx-a", idx_a);
  seq_cmd->add_option("--idx-b", idx_b);
  seq_cmd->add_option("--gap", gap);
  auto* grad_cmd = app.add_subcommand("gradcheck", "finite-difference gradient check");
  int n_slots = 200;
  bool corrupt = false;
  grad_cmd->add_option("--slots", n_slots);
  grad_cmd->add_flag("--corrupt-adjoint", corrupt,
                     "negative control: perturb one adjoint rule");
  for (auto* sub : {train_cmd, eval_cmd, export_cmd, seq_cmd, grad_cmd})
    sub->fallthrough(true);

  CLI11_PARSE(app, argc, argv);

  try {
    if (!config_path.empty()) apply_config_file(rc, config_path);
    if (data_dir) rc.data_dir = *data_dir;
    if (checkpoint) rc.checkpoint = *checkpoint;
    if (report) rc.report = *report;
    if (out) rc.out = *out;
    if (json_out) rc.json_out = *json_out;
    if (epochs) rc.train.epochs = *epochs;
    if (batch_size) rc.train.batch_size = *batch_size;
    if (workers) rc.train.workers = *workers;
    if (eval_every) rc.train.eval_every = *eval_every;
    if (train_subset) rc.train.train_subset = *train_subset;
    if (eval_subset) rc.train.eval_subset = *eval_subset;
    if (lr) rc.train.learning_rate = *lr;
    if (lr_decay) rc.train.lr_decay = *lr_decay;
    if (seed) {
      rc.spectral.seed = *seed;
      rc.train.seed = *seed;
    }
    if (download) rc.download = true;

    if (train_cmd->parsed()) return cmd_train(std::move(rc));
    if (eval_cmd->parsed()) return cmd_eval(std::move(rc));
    if (export_cmd->parsed()) {
      const int n_steps =
          steps ? *steps : rc.spectral.warmup + 2 * rc.spectral.window;
      if (n_steps < 0) throw crsn::ConfigInvalid("steps must be >= 0");
      return cmd_export_series(std::move(rc), sample_index, n_steps);
    }
    if (seq_cmd->parsed())
      return cmd_demo_sequential(std::move(rc), idx_a, idx_b, gap);
    if (grad_cmd->parsed()) return cmd_gradcheck(n_slots, corrupt);
  } catch (const crsn::Error& e) {
    std::cerr << crsn::category_token(e.category) << ": " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "INTERNAL: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
