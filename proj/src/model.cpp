#include "hiercls/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <Eigen/Dense>

#include "hiercls/csv.hpp"

namespace hiercls {

std::string to_string(Head head) { return head == Head::class_probs ? "class" : "conditional"; }

Head parse_head(const std::string& name) {
  if (name == "class") return Head::class_probs;
  if (name == "conditional") return Head::conditional_probs;
  throw Error("unknown head '" + name + "' (expected class or conditional)");
}

std::string LossConfig::family() const {
  switch (kind) {
    case Kind::ce: return "ce";
    case Kind::hxe: return "hxe";
    case Kind::soft: return "soft";
  }
  return "?";
}

double LossConfig::parameter() const {
  return kind == Kind::hxe ? alpha : (kind == Kind::soft ? beta : 0.0);
}

LossConfig::Kind parse_loss_kind(const std::string& name) {
  if (name == "ce") return LossConfig::Kind::ce;
  if (name == "hxe") return LossConfig::Kind::hxe;
  if (name == "soft") return LossConfig::Kind::soft;
  throw Error("unknown loss '" + name + "' (expected ce, hxe or soft)");
}

// ---------------------------------------------------------------------------

Objective::Objective(Taxonomy taxonomy, Head head, LossConfig loss)
    : taxonomy_(std::move(taxonomy)), head_(head), loss_(loss) {
  switch (loss_.kind) {
    case LossConfig::Kind::ce:
      weights_ = HxeWeights::uniform(taxonomy_);
      break;
    case LossConfig::Kind::hxe:
      weights_ = HxeWeights::exponential(taxonomy_, loss_.alpha);
      break;
    case LossConfig::Kind::soft:
      if (head_ != Head::class_probs) throw Error("soft labels require the class head");
      soft_ = soft_label_matrix(taxonomy_, loss_.beta);
      break;
  }
}

int Objective::output_dim() const {
  return static_cast<int>(head_ == Head::class_probs ? taxonomy_.class_count() : taxonomy_.node_count() - 1);
}

LossGrad<double> Objective::loss_and_grad(const Eigen::Ref<const Eigen::VectorXd>& z, int truth) const {
  if (head_ == Head::conditional_probs) return conditional_head_loss_and_grad(taxonomy_, weights_, z, truth);
  switch (loss_.kind) {
    case LossConfig::Kind::ce: return cross_entropy_loss_and_grad(z, truth);
    case LossConfig::Kind::hxe: return hxe_loss_and_grad(taxonomy_, weights_, z, truth);
    case LossConfig::Kind::soft: return soft_loss_and_grad(soft_, z, truth);
  }
  throw Error("unreachable loss kind");
}

double Objective::loss(const Eigen::Ref<const Eigen::VectorXd>& z, int truth) const {
  if (head_ == Head::conditional_probs) return conditional_head_loss(taxonomy_, weights_, z, truth);
  const ProbVector p = softmax(z);
  switch (loss_.kind) {
    case LossConfig::Kind::ce: return cross_entropy(p, truth);
    case LossConfig::Kind::hxe: return hxe_loss(taxonomy_, weights_, p, truth);
    case LossConfig::Kind::soft: return soft_label_loss(soft_, p, truth);
  }
  throw Error("unreachable loss kind");
}

ProbVector Objective::class_probs(const Eigen::Ref<const Eigen::VectorXd>& z) const {
  if (head_ == Head::class_probs) return softmax(z);
  return class_probs_from_conditionals(taxonomy_, conditional_head_probs(taxonomy_, z));
}

// ---------------------------------------------------------------------------

ClassifierModel::ClassifierModel(Head head_type, int input_dim, int output_dim, int hidden_units,
                                 std::uint64_t seed)
    : head(head_type) {
  if (input_dim < 1 || output_dim < 1 || hidden_units < 0) throw Error("invalid model dimensions");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> init(-0.01, 0.01);
  auto make = [&](int out, int in) {
    Layer l{Eigen::MatrixXd(out, in), Eigen::VectorXd(out)};
    for (Eigen::Index r = 0; r < out; ++r)
      for (Eigen::Index c = 0; c < in; ++c) l.weight(r, c) = init(rng);
    for (Eigen::Index r = 0; r < out; ++r) l.bias[r] = init(rng);
    return l;
  };
  if (hidden_units > 0) {
    layers.push_back(make(hidden_units, input_dim));
    layers.push_back(make(output_dim, hidden_units));
  } else {
    layers.push_back(make(output_dim, input_dim));
  }
}

Eigen::MatrixXd ClassifierModel::forward(const Eigen::MatrixXd& x) const {
  if (x.cols() != input_dim())
    throw Error("feature dimension " + std::to_string(x.cols()) + " does not match model input " +
                std::to_string(input_dim()));
  Eigen::MatrixXd a = x;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    a = (a * layers[i].weight.transpose()).rowwise() + layers[i].bias.transpose();
    if (i + 1 < layers.size()) a = a.array().tanh().matrix();
  }
  return a;
}

Eigen::VectorXd ClassifierModel::forward_one(const Eigen::VectorXd& x) const {
  return forward(Eigen::MatrixXd(x.transpose())).row(0).transpose();
}

std::vector<Layer> ClassifierModel::backward(const Eigen::MatrixXd& x, const Eigen::MatrixXd& dlogits) const {
  std::vector<Eigen::MatrixXd> inputs{x};
  for (std::size_t i = 0; i + 1 < layers.size(); ++i)
    inputs.push_back(((inputs.back() * layers[i].weight.transpose()).rowwise() + layers[i].bias.transpose())
                         .array()
                         .tanh()
                         .matrix());
  std::vector<Layer> grads(layers.size());
  Eigen::MatrixXd delta = dlogits;
  for (std::size_t i = layers.size(); i-- > 0;) {
    grads[i].weight = delta.transpose() * inputs[i];
    grads[i].bias = delta.colwise().sum().transpose();
    if (i > 0) {
      // tanh'(a) = 1 - tanh(a)^2
      delta = ((delta * layers[i].weight).array() * (1.0 - inputs[i].array().square())).matrix();
    }
  }
  return grads;
}

void ClassifierModel::validate() const {
  if (layers.empty()) throw Error("model has no layers");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (layers[i].bias.size() != layers[i].weight.rows()) throw Error("bias shape mismatch in layer " + std::to_string(i));
    if (i > 0 && layers[i].weight.cols() != layers[i - 1].weight.rows())
      throw Error("layer " + std::to_string(i) + " does not chain with the previous layer");
    if (!layers[i].weight.allFinite() || !layers[i].bias.allFinite())
      throw Error("non-finite parameter in layer " + std::to_string(i));
  }
}

OptimizerState OptimizerState::for_model(const ClassifierModel& m, AdamOptions options) {
  OptimizerState s;
  s.options = options;
  for (const auto& l : m.layers) {
    s.first_moment.push_back({Eigen::MatrixXd::Zero(l.weight.rows(), l.weight.cols()), Eigen::VectorXd::Zero(l.bias.size())});
    s.second_moment.push_back(s.first_moment.back());
  }
  return s;
}

namespace {

template <typename Param, typename Grad, typename Moment>
void adam_apply(Param& param, const Grad& grad, Moment& m, Moment& v, const AdamOptions& o, double c1, double c2) {
  m = o.beta1 * m + (1.0 - o.beta1) * grad;
  v = o.beta2 * v + (1.0 - o.beta2) * grad.cwiseProduct(grad);
  param.array() -= o.learning_rate * (m.array() / c1) / ((v.array() / c2).sqrt() + o.epsilon);
}

}  // namespace

void adam_update(ClassifierModel& m, const std::vector<Layer>& grads, OptimizerState& s) {
  if (grads.size() != m.layers.size() || s.first_moment.size() != m.layers.size())
    throw Error("optimizer state does not match the model");
  ++s.step;
  const double c1 = 1.0 - std::pow(s.options.beta1, static_cast<double>(s.step));
  const double c2 = 1.0 - std::pow(s.options.beta2, static_cast<double>(s.step));
  for (std::size_t i = 0; i < m.layers.size(); ++i) {
    adam_apply(m.layers[i].weight, grads[i].weight, s.first_moment[i].weight, s.second_moment[i].weight, s.options, c1, c2);
    adam_apply(m.layers[i].bias, grads[i].bias, s.first_moment[i].bias, s.second_moment[i].bias, s.options, c1, c2);
  }
}

// ---------------------------------------------------------------------------

TrainingDiverged::TrainingDiverged(int step_, int batch_, double loss_)
    : Error("non-finite loss " + format_double(loss_) + " at step " + std::to_string(step_) + " (batch " +
            std::to_string(batch_) + ")"),
      step(step_),
      batch(batch_),
      loss(loss_) {}

namespace {

void check_dims(const ClassifierModel& m, const Dataset& data, const Objective& objective) {
  if (m.output_dim() != objective.output_dim())
    throw Error("model output (" + std::to_string(m.output_dim()) + ") does not match the " + to_string(objective.head()) +
                " head size (" + std::to_string(objective.output_dim()) + ")");
  if (data.feature_dim() != m.input_dim()) throw Error("dataset feature dimension does not match the model");
}

}  // namespace

double mean_loss(const ClassifierModel& m, const Dataset& data, const Objective& objective) {
  check_dims(m, data, objective);
  const Eigen::MatrixXd logits = m.forward(data.features);
  double total = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i)
    total += objective.loss(logits.row(static_cast<Eigen::Index>(i)).transpose(), data.labels[i]);
  return total / static_cast<double>(data.size());
}

PredictionBatch predict(const ClassifierModel& m, const Dataset& data, const Objective& objective, std::size_t k) {
  check_dims(m, data, objective);
  const Eigen::MatrixXd logits = m.forward(data.features);
  PredictionBatch b;
  b.truths = data.labels;
  b.rankings.reserve(data.size());
  for (std::size_t i = 0; i < data.size(); ++i)
    b.rankings.push_back(rank_classes(objective.class_probs(logits.row(static_cast<Eigen::Index>(i)).transpose()), k));
  return b;
}

MetricReport evaluate(const ClassifierModel& m, const Dataset& data, const Taxonomy& eval_taxonomy,
                      const Objective& objective, const std::vector<int>& ks) {
  if (eval_taxonomy.class_ids() != objective.taxonomy().class_ids())
    throw Error("evaluation taxonomy and model disagree on the class order");
  const int max_k = ks.empty() ? 1 : *std::max_element(ks.begin(), ks.end());
  if (max_k > static_cast<int>(eval_taxonomy.class_count()))
    throw Error("k = " + std::to_string(max_k) + " exceeds the number of classes");
  return compute_report(eval_taxonomy, predict(m, data, objective, static_cast<std::size_t>(max_k)), ks);
}

TrainingTrace train(ClassifierModel& m, const Dataset& train_data, const Dataset& val, const Objective& objective,
                    const Taxonomy& eval_taxonomy, OptimizerState& opt, const Schedule& schedule,
                    const std::vector<int>& ks) {
  if (train_data.size() == 0 || val.size() == 0) throw Error("training and validation sets must be non-empty");
  if (schedule.steps < 1 || schedule.batch_size < 1 || schedule.checkpoint_every < 1)
    throw Error("steps, batch size and checkpoint interval must be positive");
  check_dims(m, train_data, objective);

  std::mt19937_64 rng(schedule.seed);
  std::vector<int> order(train_data.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::size_t cursor = 0;
  int batch_in_epoch = 0;

  TrainingTrace trace;
  trace.step_losses.reserve(static_cast<std::size_t>(schedule.steps));
  const auto batch = static_cast<Eigen::Index>(schedule.batch_size);
  Eigen::MatrixXd x(batch, train_data.feature_dim());
  Eigen::MatrixXd dlogits(batch, m.output_dim());
  std::vector<int> truths(static_cast<std::size_t>(batch));
  double window_loss = 0.0;
  int window_steps = 0;

  for (int step = 1; step <= schedule.steps; ++step) {
    for (Eigen::Index i = 0; i < batch; ++i) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
        batch_in_epoch = 0;
      }
      const int row = order[cursor++];
      x.row(i) = train_data.features.row(row);
      truths[static_cast<std::size_t>(i)] = train_data.labels[row];
    }

    const Eigen::MatrixXd logits = m.forward(x);
    double loss = 0.0;
    for (Eigen::Index i = 0; i < batch; ++i) {
      auto lg = objective.loss_and_grad(logits.row(i).transpose(), truths[static_cast<std::size_t>(i)]);
      loss += lg.loss;
      dlogits.row(i) = lg.grad.transpose() / static_cast<double>(batch);
    }
    loss /= static_cast<double>(batch);
    if (!std::isfinite(loss)) throw TrainingDiverged(step, batch_in_epoch, loss);
    trace.step_losses.push_back(loss);
    window_loss += loss;
    ++window_steps;
    ++batch_in_epoch;

    adam_update(m, m.backward(x, dlogits), opt);

    if (step % schedule.checkpoint_every == 0 || step == schedule.steps) {
      Checkpoint c;
      c.step = step;
      c.train_loss = window_loss / window_steps;
      c.val_loss = mean_loss(m, val, objective);
      c.val_report = evaluate(m, val, eval_taxonomy, objective, ks);
      c.model = m;
      trace.checkpoints.push_back(std::move(c));
      window_loss = 0.0;
      window_steps = 0;
    }
  }
  return trace;
}

// ---------------------------------------------------------------------------

Eigen::VectorXd fit_polynomial(const Eigen::VectorXd& x, const Eigen::VectorXd& y, int degree) {
  if (x.size() != y.size()) throw Error("x and y differ in length");
  std::vector<double> distinct(x.data(), x.data() + x.size());
  std::sort(distinct.begin(), distinct.end());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  if (static_cast<int>(distinct.size()) < degree + 1)
    throw Error("degenerate fit: need " + std::to_string(degree + 1) + " distinct abscissae, have " +
                std::to_string(distinct.size()));
  Eigen::MatrixXd vandermonde(x.size(), degree + 1);
  vandermonde.col(0).setOnes();
  for (int d = 1; d <= degree; ++d) vandermonde.col(d) = vandermonde.col(d - 1).cwiseProduct(x);
  return vandermonde.colPivHouseholderQr().solve(y);
}

namespace {

double eval_poly(const Eigen::VectorXd& c, double t) {
  double acc = 0.0;
  for (Eigen::Index i = c.size(); i-- > 0;) acc = acc * t + c[i];
  return acc;
}

// Real roots of the polynomial with coefficients `c` (lowest power first).
std::vector<double> real_roots(Eigen::VectorXd c) {
  const double scale = c.cwiseAbs().maxCoeff();
  Eigen::Index deg = c.size() - 1;
  while (deg > 0 && std::abs(c[deg]) <= 1e-12 * scale) --deg;
  std::vector<double> roots;
  if (deg < 1) return roots;
  Eigen::MatrixXd companion = Eigen::MatrixXd::Zero(deg, deg);
  for (Eigen::Index i = 1; i < deg; ++i) companion(i, i - 1) = 1.0;
  for (Eigen::Index i = 0; i < deg; ++i) companion(i, deg - 1) = -c[i] / c[deg];
  const Eigen::VectorXcd eig = companion.eigenvalues();
  for (Eigen::Index i = 0; i < eig.size(); ++i)
    if (std::abs(eig[i].imag()) <= 1e-9 * (1.0 + std::abs(eig[i].real()))) roots.push_back(eig[i].real());
  return roots;
}

}  // namespace

std::vector<int> select_window(const std::vector<double>& steps, const std::vector<double>& losses) {
  const int n = static_cast<int>(steps.size());
  if (n < 5 || losses.size() != steps.size())
    throw Error("checkpoint selection needs at least 5 checkpoints, have " + std::to_string(n));
  const double lo = *std::min_element(steps.begin(), steps.end());
  const double hi = *std::max_element(steps.begin(), steps.end());
  if (!(hi > lo)) throw Error("degenerate fit: all checkpoints share one step");
  const double mid = 0.5 * (lo + hi);
  const double half = 0.5 * (hi - lo);

  Eigen::VectorXd t(n), y(n);
  for (int i = 0; i < n; ++i) {
    t[i] = (steps[i] - mid) / half;
    y[i] = losses[i];
  }
  const Eigen::VectorXd c = fit_polynomial(t, y, 4);

  Eigen::VectorXd dc(c.size() - 1);
  for (Eigen::Index i = 1; i < c.size(); ++i) dc[i - 1] = static_cast<double>(i) * c[i];
  std::vector<double> candidates{-1.0, 1.0};
  for (double r : real_roots(dc))
    if (r > -1.0 && r < 1.0) candidates.push_back(r);
  double best_t = candidates.front();
  for (double cand : candidates)
    if (eval_poly(c, cand) < eval_poly(c, best_t)) best_t = cand;

  int nearest = 0;
  for (int i = 1; i < n; ++i)
    if (std::abs(t[i] - best_t) < std::abs(t[nearest] - best_t)) nearest = i;
  const int start = std::clamp(nearest - 2, 0, n - 5);
  return {start, start + 1, start + 2, start + 3, start + 4};
}

std::vector<int> select_checkpoints(const TrainingTrace& trace, int discard_before) {
  std::vector<int> kept;
  std::vector<double> steps, losses;
  for (std::size_t i = 0; i < trace.checkpoints.size(); ++i) {
    const auto& c = trace.checkpoints[i];
    if (c.step < discard_before) continue;
    kept.push_back(static_cast<int>(i));
    steps.push_back(c.step);
    losses.push_back(c.val_loss);
  }
  if (kept.size() < 5)
    throw Error("only " + std::to_string(kept.size()) + " checkpoints at or after step " +
                std::to_string(discard_before) + "; need 5");
  std::vector<int> out;
  for (int i : select_window(steps, losses)) out.push_back(kept[i]);
  return out;
}

// ---------------------------------------------------------------------------

std::string checkpoint_text(const ClassifierModel& m, const std::string& taxonomy_hash, int step) {
  std::string out = "# hiercls checkpoint v1\n# taxonomy_hash=" + taxonomy_hash + ",step=" + std::to_string(step) +
                    "\nhead," + to_string(m.head) + "\n";
  for (const auto& l : m.layers) {
    out += "layer," + std::to_string(l.weight.rows()) + "," + std::to_string(l.weight.cols()) + "\n";
    for (Eigen::Index r = 0; r < l.weight.rows(); ++r) {
      out += "w";
      for (Eigen::Index c = 0; c < l.weight.cols(); ++c) out += "," + format_double(l.weight(r, c));
      out += "\n";
    }
    out += "b";
    for (Eigen::Index r = 0; r < l.bias.size(); ++r) out += "," + format_double(l.bias[r]);
    out += "\n";
  }
  return out;
}

LoadedCheckpoint parse_checkpoint(std::string_view text) {
  LoadedCheckpoint out;
  bool head_seen = false;
  Layer* current = nullptr;
  Eigen::Index row = 0;
  const auto lines = text_lines(text);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const auto line = lines[i];
    if (line.empty()) continue;
    if (line.front() == '#') {
      const auto pos = line.find("taxonomy_hash=");
      if (pos != std::string_view::npos) {
        auto rest = line.substr(pos + 14);
        out.taxonomy_hash = std::string(rest.substr(0, rest.find(',')));
      }
      continue;
    }
    const auto fields = split_csv(line);
    auto number = [&](std::string_view f) {
      double v = 0.0;
      if (!parse_double(f, v)) throw ParseError("bad number '" + std::string(f) + "'", i + 1);
      return v;
    };
    if (fields[0] == "head" && fields.size() == 2) {
      out.model.head = parse_head(std::string(fields[1]));
      head_seen = true;
    } else if (fields[0] == "layer" && fields.size() == 3) {
      const auto rows = static_cast<Eigen::Index>(number(fields[1]));
      const auto cols = static_cast<Eigen::Index>(number(fields[2]));
      if (rows < 1 || cols < 1) throw ParseError("bad layer shape", i + 1);
      out.model.layers.push_back({Eigen::MatrixXd::Zero(rows, cols), Eigen::VectorXd::Zero(rows)});
      current = &out.model.layers.back();
      row = 0;
    } else if (fields[0] == "w" && current) {
      if (row >= current->weight.rows() || static_cast<Eigen::Index>(fields.size()) != current->weight.cols() + 1)
        throw ParseError("weight row does not match the layer shape", i + 1);
      for (Eigen::Index c = 0; c < current->weight.cols(); ++c) current->weight(row, c) = number(fields[c + 1]);
      ++row;
    } else if (fields[0] == "b" && current) {
      if (static_cast<Eigen::Index>(fields.size()) != current->bias.size() + 1 || row != current->weight.rows())
        throw ParseError("bias does not match the layer shape", i + 1);
      for (Eigen::Index r = 0; r < current->bias.size(); ++r) current->bias[r] = number(fields[r + 1]);
    } else {
      throw ParseError("unrecognised checkpoint line", i + 1);
    }
  }
  if (!head_seen || out.model.layers.empty()) throw ParseError("incomplete checkpoint", 0);
  out.model.validate();
  return out;
}

std::string trace_csv(const TrainingTrace& trace, const std::string& header_comment) {
  std::string out = header_comment.empty() ? std::string() : "# " + header_comment + "\n";
  out += "step,train_loss,val_loss";
  if (!trace.checkpoints.empty())
    for (const auto& [name, value] : flatten(trace.checkpoints.front().val_report)) out += "," + name;
  out += "\n";
  for (const auto& c : trace.checkpoints) {
    out += std::to_string(c.step) + "," + format_double(c.train_loss) + "," + format_double(c.val_loss);
    for (const auto& [name, value] : flatten(c.val_report)) out += "," + format_double(value);
    out += "\n";
  }
  return out;
}

}  // namespace hiercls
