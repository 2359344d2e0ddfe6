#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "hiercls/data.hpp"
#include "hiercls/losses.hpp"
#include "hiercls/metrics.hpp"

namespace hiercls {

enum class Head { class_probs, conditional_probs };

std::string to_string(Head head);
Head parse_head(const std::string& name);

struct LossConfig {
  enum class Kind { ce, hxe, soft };
  Kind kind = Kind::ce;
  double alpha = 0.0;
  double beta = 0.0;

  static LossConfig cross_entropy() { return {}; }
  static LossConfig hxe(double alpha) { return {Kind::hxe, alpha, 0.0}; }
  static LossConfig soft(double beta) { return {Kind::soft, 0.0, beta}; }

  /// "ce", "hxe", "soft".
  std::string family() const;
  /// The swept parameter (alpha or beta); 0 for ce.
  double parameter() const;
};

LossConfig::Kind parse_loss_kind(const std::string& name);

/// A loss bound to a taxonomy and an output head. Precomputes the HXE
/// weights or the soft-label matrix once.
///
/// On the conditional head, cross-entropy is HXE with unit weights (the
/// per-sibling-softmax baseline); soft labels need the class head.
class Objective {
 public:
  Objective(Taxonomy taxonomy, Head head, LossConfig loss);

  const Taxonomy& taxonomy() const { return taxonomy_; }
  Head head() const { return head_; }
  const LossConfig& loss_config() const { return loss_; }
  int output_dim() const;

  LossGrad<double> loss_and_grad(const Eigen::Ref<const Eigen::VectorXd>& logits, int truth) const;
  double loss(const Eigen::Ref<const Eigen::VectorXd>& logits, int truth) const;
  /// Class probabilities; the conditional head multiplies along lineages.
  ProbVector class_probs(const Eigen::Ref<const Eigen::VectorXd>& logits) const;

 private:
  Taxonomy taxonomy_;
  Head head_;
  LossConfig loss_;
  HxeWeights weights_;
  SoftLabelMatrix soft_;
};

struct Layer {
  Eigen::MatrixXd weight;  // out x in
  Eigen::VectorXd bias;
};

/// Affine map, or one tanh hidden layer followed by an affine map.
class ClassifierModel {
 public:
  ClassifierModel() = default;
  /// Parameters drawn uniformly from [-0.01, 0.01]. `hidden_units` = 0
  /// gives the affine model.
  ClassifierModel(Head head, int input_dim, int output_dim, int hidden_units, std::uint64_t seed);

  Head head = Head::class_probs;
  std::vector<Layer> layers;

  int input_dim() const { return static_cast<int>(layers.front().weight.cols()); }
  int output_dim() const { return static_cast<int>(layers.back().weight.rows()); }

  /// Rows of `x` are examples; returns one row of logits per example.
  Eigen::MatrixXd forward(const Eigen::MatrixXd& x) const;
  /// Logits for a single example.
  Eigen::VectorXd forward_one(const Eigen::VectorXd& x) const;

  /// Gradient of sum_i <dlogits.row(i), logits.row(i)> with respect to each
  /// layer, shaped like `layers`.
  std::vector<Layer> backward(const Eigen::MatrixXd& x, const Eigen::MatrixXd& dlogits) const;

  /// Throws Error unless shapes chain and every parameter is finite.
  void validate() const;
};

struct AdamOptions {
  double learning_rate = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct OptimizerState {
  AdamOptions options;
  std::int64_t step = 0;
  std::vector<Layer> first_moment;
  std::vector<Layer> second_moment;

  static OptimizerState for_model(const ClassifierModel& m, AdamOptions options = {});
};

/// One bias-corrected Adam step.
void adam_update(ClassifierModel& m, const std::vector<Layer>& grads, OptimizerState& s);

struct Schedule {
  int steps = 20000;
  int batch_size = 64;
  int checkpoint_every = 500;
  std::uint64_t seed = 0;
};

struct Checkpoint {
  int step = 0;
  double train_loss = 0.0;  // mean minibatch loss since the previous checkpoint
  double val_loss = 0.0;
  MetricReport val_report;
  ClassifierModel model;
};

struct TrainingTrace {
  std::vector<Checkpoint> checkpoints;
  /// Minibatch loss at every step, before that step's update.
  std::vector<double> step_losses;
};

/// Raised when a minibatch loss is not finite.
class TrainingDiverged : public Error {
 public:
  TrainingDiverged(int step, int batch, double loss);
  int step;
  int batch;
  double loss;
};

double mean_loss(const ClassifierModel& m, const Dataset& data, const Objective& objective);

/// Ranks classes by class probability (lower index wins ties) and scores the
/// rankings against `eval_taxonomy`.
MetricReport evaluate(const ClassifierModel& m, const Dataset& data, const Taxonomy& eval_taxonomy,
                      const Objective& objective, const std::vector<int>& ks);

PredictionBatch predict(const ClassifierModel& m, const Dataset& data, const Objective& objective, std::size_t k);

/// Minibatch Adam. Batches come from a seeded reshuffle at every epoch.
/// Metrics at each checkpoint are computed on `val` against `eval_taxonomy`.
TrainingTrace train(ClassifierModel& m, const Dataset& train_data, const Dataset& val, const Objective& objective,
                    const Taxonomy& eval_taxonomy, OptimizerState& opt, const Schedule& schedule,
                    const std::vector<int>& ks);

/// Least-squares polynomial coefficients, lowest power first.
Eigen::VectorXd fit_polynomial(const Eigen::VectorXd& x, const Eigen::VectorXd& y, int degree);

/// Fits a quartic to loss(step), finds the fitted minimum over the observed
/// range, and returns the five checkpoint positions centred on the one
/// nearest to it, clipped at either end.
std::vector<int> select_window(const std::vector<double>& steps, const std::vector<double>& losses);

/// select_window over checkpoints with step >= discard_before; indices refer
/// to `trace.checkpoints`.
std::vector<int> select_checkpoints(const TrainingTrace& trace, int discard_before);

/// Text checkpoint: '#' header with the taxonomy hash, then `head,<name>`,
/// and per layer `layer,<out>,<in>`, one `w,...` line per output row and a
/// `b,...` line.
std::string checkpoint_text(const ClassifierModel& m, const std::string& taxonomy_hash, int step);

struct LoadedCheckpoint {
  ClassifierModel model;
  std::string taxonomy_hash;
};
LoadedCheckpoint parse_checkpoint(std::string_view text);

/// `step,train_loss,val_loss,<flattened metrics>` with a '#' header line.
std::string trace_csv(const TrainingTrace& trace, const std::string& header_comment);

}  // namespace hiercls
