#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "hiercls/model.hpp"

namespace hiercls {

/// Everything that determines one training run besides the data.
struct RunConfig {
  Head head = Head::class_probs;
  LossConfig loss;
  int hidden_units = 0;
  AdamOptions adam{1e-3};
  Schedule schedule;
  int discard_before = 5000;
  std::vector<int> ks{1, 5, 20};

  /// Canonical key=value rendering used in output headers.
  std::string describe() const;
};

/// Drops k values larger than the number of classes.
std::vector<int> usable_ks(const std::vector<int>& ks, std::size_t class_count);

/// Mean and 95% half-width (1.96 * sample std / sqrt(n)) per metric.
struct MetricSummary {
  std::vector<std::string> names;
  Eigen::VectorXd mean;
  Eigen::VectorXd half_width;

  double value(const std::string& name) const;
  double interval(const std::string& name) const;
};

double half_width_95(const Eigen::VectorXd& samples);

MetricSummary summarize(const std::vector<MetricReport>& reports);

/// Sum of the severity histograms.
std::map<int, std::int64_t> merge_histograms(const std::vector<MetricReport>& reports);

struct RunResult {
  TrainingTrace trace;
  std::vector<int> selected;  // indices into trace.checkpoints
  MetricSummary summary;      // over the selected checkpoints
  std::map<int, std::int64_t> histogram;
};

/// Trains with `loss_taxonomy` and scores against `eval_taxonomy` (they
/// differ in the random-hierarchy ablation), then applies the quartic
/// checkpoint selection.
RunResult run_training(const Taxonomy& loss_taxonomy, const Taxonomy& eval_taxonomy, const Dataset& train_data,
                       const Dataset& val, const RunConfig& cfg);

/// Writes trace.csv, summary.csv, histogram.csv and the selected
/// checkpoints under `dir`.
void write_run_outputs(const std::filesystem::path& dir, const RunResult& run, const RunConfig& cfg,
                       const Taxonomy& eval_taxonomy, const std::string& loss_taxonomy_hash);

/// `metric,mean,half_width`.
std::string summary_csv(const MetricSummary& s, const std::string& header_comment);

struct TradeoffRow {
  std::string method;
  std::string taxonomy;  // "true" or "random"
  double parameter = 0.0;
  MetricSummary summary;
};

std::string tradeoff_csv(const std::vector<TradeoffRow>& rows, const std::string& header_comment);

struct SweepConfig {
  LossConfig::Kind family = LossConfig::Kind::hxe;
  std::vector<double> grid;
  RunConfig base;
  std::filesystem::path taxonomy_path;
  std::optional<std::filesystem::path> classes_path;
  std::filesystem::path train_path;
  std::filesystem::path val_path;
  std::optional<std::uint64_t> randomize_seed;
  std::filesystem::path out_dir;
  int workers = 0;  // 0: one per hardware thread

  std::string describe() const;
};

/// 0.1, 0.2, ..., 0.9.
std::vector<double> default_alpha_grid();
/// 4, 5, 10, 15, 20, 25, 30.
std::vector<double> default_beta_grid();

/// `key=value` lines; relative paths resolve against `base_dir`.
SweepConfig parse_sweep_config(std::string_view text, const std::filesystem::path& base_dir);

struct SweepOutcome {
  std::vector<TradeoffRow> rows;
  std::vector<std::string> failures;
};

/// One run per grid point (and per point again on a randomized taxonomy
/// when requested), executed on a worker pool. Failed points are reported
/// in `failures` and skipped. Writes table.csv and per-point directories.
SweepOutcome run_sweep(const SweepConfig& cfg, const Taxonomy& taxonomy, const Dataset& train_data,
                       const Dataset& val);

/// Merges tradeoff tables into `source,method,taxonomy,parameter,metric,mean,half_width`
/// rows. Inputs are (source label, csv text); all tables must share one header.
std::string tradeoff_long_format(const std::vector<std::pair<std::string, std::string>>& tables);

/// Histogram CSVs to `source,height,count,frequency`.
std::string histogram_frequencies(const std::vector<std::pair<std::string, std::string>>& histograms);

/// Runs `jobs` on `workers` threads; each job runs exactly once.
void run_parallel(std::size_t jobs, int workers, const std::function<void(std::size_t)>& job);

}  // namespace hiercls
