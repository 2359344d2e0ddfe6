#include "hiercls/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <thread>

#include "hiercls/csv.hpp"

namespace hiercls {

std::string RunConfig::describe() const {
  std::string ks_text;
  for (std::size_t i = 0; i < ks.size(); ++i) ks_text += (i ? "/" : "") + std::to_string(ks[i]);
  std::string out = "loss=" + loss.family();
  if (loss.kind == LossConfig::Kind::hxe) out += ",alpha=" + format_double(loss.alpha);
  if (loss.kind == LossConfig::Kind::soft) out += ",beta=" + format_double(loss.beta);
  out += ",head=" + to_string(head) + ",hidden=" + std::to_string(hidden_units) +
         ",lr=" + format_double(adam.learning_rate) + ",steps=" + std::to_string(schedule.steps) +
         ",batch_size=" + std::to_string(schedule.batch_size) +
         ",checkpoint_every=" + std::to_string(schedule.checkpoint_every) +
         ",discard_before=" + std::to_string(discard_before) + ",seed=" + std::to_string(schedule.seed) +
         ",ks=" + ks_text;
  return out;
}

std::vector<int> usable_ks(const std::vector<int>& ks, std::size_t class_count) {
  std::vector<int> out;
  for (int k : ks)
    if (k >= 1 && static_cast<std::size_t>(k) <= class_count) out.push_back(k);
  if (out.empty()) out.push_back(1);
  return out;
}

double MetricSummary::value(const std::string& name) const {
  for (std::size_t i = 0; i < names.size(); ++i)
    if (names[i] == name) return mean[static_cast<Eigen::Index>(i)];
  throw Error("no metric named '" + name + "'");
}

double MetricSummary::interval(const std::string& name) const {
  for (std::size_t i = 0; i < names.size(); ++i)
    if (names[i] == name) return half_width[static_cast<Eigen::Index>(i)];
  throw Error("no metric named '" + name + "'");
}

double half_width_95(const Eigen::VectorXd& samples) {
  const auto n = samples.size();
  if (n < 2) return 0.0;
  const double mean = samples.mean();
  const double var = (samples.array() - mean).square().sum() / static_cast<double>(n - 1);
  return 1.96 * std::sqrt(var) / std::sqrt(static_cast<double>(n));
}

MetricSummary summarize(const std::vector<MetricReport>& reports) {
  if (reports.empty()) throw Error("nothing to summarize");
  MetricSummary s;
  const auto first = flatten(reports.front());
  for (const auto& [name, value] : first) s.names.push_back(name);
  const auto m = static_cast<Eigen::Index>(s.names.size());
  Eigen::MatrixXd values(static_cast<Eigen::Index>(reports.size()), m);
  for (std::size_t r = 0; r < reports.size(); ++r) {
    const auto flat = flatten(reports[r]);
    if (flat.size() != s.names.size()) throw Error("reports disagree on their metrics");
    for (Eigen::Index j = 0; j < m; ++j) values(static_cast<Eigen::Index>(r), j) = flat[j].second;
  }
  s.mean = values.colwise().mean().transpose();
  s.half_width.resize(m);
  for (Eigen::Index j = 0; j < m; ++j) s.half_width[j] = half_width_95(values.col(j));
  return s;
}

std::map<int, std::int64_t> merge_histograms(const std::vector<MetricReport>& reports) {
  std::map<int, std::int64_t> out;
  for (const auto& r : reports)
    for (const auto& [h, count] : r.severity_histogram) out[h] += count;
  return out;
}

RunResult run_training(const Taxonomy& loss_taxonomy, const Taxonomy& eval_taxonomy, const Dataset& train_data,
                       const Dataset& val, const RunConfig& cfg) {
  const auto ks = usable_ks(cfg.ks, eval_taxonomy.class_count());
  const Objective objective(loss_taxonomy, cfg.head, cfg.loss);
  ClassifierModel model(cfg.head, static_cast<int>(train_data.feature_dim()), objective.output_dim(),
                        cfg.hidden_units, cfg.schedule.seed ^ 0x5851f42d4c957f2dULL);
  auto opt = OptimizerState::for_model(model, cfg.adam);

  RunResult out;
  out.trace = train(model, train_data, val, objective, eval_taxonomy, opt, cfg.schedule, ks);
  out.selected = select_checkpoints(out.trace, cfg.discard_before);
  std::vector<MetricReport> reports;
  for (int i : out.selected) reports.push_back(out.trace.checkpoints[i].val_report);
  out.summary = summarize(reports);
  out.histogram = merge_histograms(reports);
  return out;
}

std::string summary_csv(const MetricSummary& s, const std::string& header_comment) {
  std::string out = header_comment.empty() ? std::string() : "# " + header_comment + "\n";
  out += "metric,mean,half_width\n";
  for (std::size_t i = 0; i < s.names.size(); ++i) {
    const auto j = static_cast<Eigen::Index>(i);
    out += s.names[i] + "," + format_double(s.mean[j]) + "," + format_double(s.half_width[j]) + "\n";
  }
  return out;
}

void write_run_outputs(const std::filesystem::path& dir, const RunResult& run, const RunConfig& cfg,
                       const Taxonomy& eval_taxonomy, const std::string& loss_taxonomy_hash) {
  const std::string header =
      cfg.describe() + ",taxonomy_hash=" + taxonomy_hash(eval_taxonomy) + ",loss_taxonomy_hash=" + loss_taxonomy_hash;
  write_file(dir / "trace.csv", trace_csv(run.trace, header));
  write_file(dir / "summary.csv", summary_csv(run.summary, header));
  write_file(dir / "histogram.csv", histogram_csv(run.histogram, header));
  std::string selected = "# " + header + "\nindex,step\n";
  for (int i : run.selected) {
    const auto& c = run.trace.checkpoints[i];
    selected += std::to_string(i) + "," + std::to_string(c.step) + "\n";
    write_file(dir / "checkpoints" / ("step_" + std::to_string(c.step) + ".txt"),
               checkpoint_text(c.model, loss_taxonomy_hash, c.step));
  }
  write_file(dir / "selected.csv", selected);
}

std::string tradeoff_csv(const std::vector<TradeoffRow>& rows, const std::string& header_comment) {
  std::string out = header_comment.empty() ? std::string() : "# " + header_comment + "\n";
  out += "method,taxonomy,parameter";
  if (!rows.empty())
    for (const auto& name : rows.front().summary.names) out += "," + name + "," + name + "_hw";
  out += "\n";
  for (const auto& r : rows) {
    if (!rows.empty() && r.summary.names != rows.front().summary.names) throw Error("tradeoff rows disagree on metrics");
    out += r.method + "," + r.taxonomy + "," + format_double(r.parameter);
    for (Eigen::Index j = 0; j < r.summary.mean.size(); ++j)
      out += "," + format_double(r.summary.mean[j]) + "," + format_double(r.summary.half_width[j]);
    out += "\n";
  }
  return out;
}

// ---------------------------------------------------------------------------

std::vector<double> default_alpha_grid() { return {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9}; }
std::vector<double> default_beta_grid() { return {4, 5, 10, 15, 20, 25, 30}; }

std::string SweepConfig::describe() const {
  std::string grid_text;
  for (std::size_t i = 0; i < grid.size(); ++i) grid_text += (i ? "/" : "") + format_double(grid[i]);
  RunConfig shown = base;
  shown.loss.kind = family;
  std::string out = shown.describe() + ",grid=" + grid_text;
  if (randomize_seed) out += ",randomize_seed=" + std::to_string(*randomize_seed);
  return out;
}

namespace {

std::vector<double> parse_number_list(const std::string& key, std::string_view text) {
  std::vector<double> out;
  for (auto field : split_csv(text)) {
    double v = 0.0;
    if (!parse_double(field, v)) throw Error("sweep config: bad number '" + std::string(field) + "' in " + key);
    out.push_back(v);
  }
  return out;
}

template <typename Int>
Int parse_integer(const std::string& key, const std::string& value) {
  double v = 0.0;
  if (!parse_double(value, v) || v != std::floor(v)) throw Error("sweep config: " + key + " must be an integer");
  return static_cast<Int>(v);
}

}  // namespace

SweepConfig parse_sweep_config(std::string_view text, const std::filesystem::path& base_dir) {
  SweepConfig cfg;
  bool grid_given = false;
  auto resolve = [&](const std::string& p) {
    std::filesystem::path path(p);
    return path.is_absolute() ? path : base_dir / path;
  };
  const auto lines = text_lines(text);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    auto line = lines[i];
    if (line.find_first_not_of(" \t") == std::string_view::npos || line.front() == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ParseError("expected key=value", i + 1);
    const std::string key(line.substr(0, eq));
    const std::string value(line.substr(eq + 1));
    if (key == "loss") cfg.family = parse_loss_kind(value);
    else if (key == "grid") { cfg.grid = parse_number_list(key, value); grid_given = true; }
    else if (key == "head") cfg.base.head = parse_head(value);
    else if (key == "hidden") cfg.base.hidden_units = parse_integer<int>(key, value);
    else if (key == "lr") cfg.base.adam.learning_rate = parse_number_list(key, value).at(0);
    else if (key == "steps") cfg.base.schedule.steps = parse_integer<int>(key, value);
    else if (key == "batch_size") cfg.base.schedule.batch_size = parse_integer<int>(key, value);
    else if (key == "checkpoint_every") cfg.base.schedule.checkpoint_every = parse_integer<int>(key, value);
    else if (key == "discard_before") cfg.base.discard_before = parse_integer<int>(key, value);
    else if (key == "seed") cfg.base.schedule.seed = parse_integer<std::uint64_t>(key, value);
    else if (key == "ks") {
      cfg.base.ks.clear();
      for (double k : parse_number_list(key, value)) cfg.base.ks.push_back(static_cast<int>(k));
    }
    else if (key == "taxonomy") cfg.taxonomy_path = resolve(value);
    else if (key == "classes") cfg.classes_path = resolve(value);
    else if (key == "train") cfg.train_path = resolve(value);
    else if (key == "val") cfg.val_path = resolve(value);
    else if (key == "out") cfg.out_dir = resolve(value);
    else if (key == "randomize_seed") cfg.randomize_seed = parse_integer<std::uint64_t>(key, value);
    else if (key == "workers") cfg.workers = parse_integer<int>(key, value);
    else throw ParseError("unknown key '" + key + "'", i + 1);
  }
  for (const auto& [name, path] : {std::pair{"taxonomy", &cfg.taxonomy_path}, std::pair{"train", &cfg.train_path},
                                   std::pair{"val", &cfg.val_path}, std::pair{"out", &cfg.out_dir}})
    if (path->empty()) throw Error(std::string("sweep config: missing required key '") + name + "'");
  if (!grid_given) {
    if (cfg.family == LossConfig::Kind::hxe) cfg.grid = default_alpha_grid();
    else if (cfg.family == LossConfig::Kind::soft) cfg.grid = default_beta_grid();
    else cfg.grid = {0.0};
  }
  if (cfg.grid.empty()) throw Error("sweep config: empty grid");
  return cfg;
}

void run_parallel(std::size_t jobs, int workers, const std::function<void(std::size_t)>& job) {
  std::size_t threads = workers > 0 ? static_cast<std::size_t>(workers) : std::max(1u, std::thread::hardware_concurrency());
  threads = std::min(threads, jobs);
  if (threads <= 1) {
    for (std::size_t i = 0; i < jobs; ++i) job(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < threads; ++t)
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < jobs; i = next++) job(i);
    });
  for (auto& th : pool) th.join();
}

SweepOutcome run_sweep(const SweepConfig& cfg, const Taxonomy& taxonomy, const Dataset& train_data,
                       const Dataset& val) {
  struct Job {
    double parameter;
    bool randomized;
  };
  std::vector<Job> jobs;
  for (double p : cfg.grid) jobs.push_back({p, false});
  if (cfg.randomize_seed)
    for (double p : cfg.grid) jobs.push_back({p, true});

  const std::optional<Taxonomy> random_taxonomy =
      cfg.randomize_seed ? std::optional<Taxonomy>(randomize(taxonomy, *cfg.randomize_seed)) : std::nullopt;

  std::vector<std::optional<TradeoffRow>> rows(jobs.size());
  std::vector<std::string> errors(jobs.size());
  run_parallel(jobs.size(), cfg.workers, [&](std::size_t i) {
    const Job& job = jobs[i];
    RunConfig run = cfg.base;
    run.loss.kind = cfg.family;
    if (cfg.family == LossConfig::Kind::hxe) run.loss.alpha = job.parameter;
    if (cfg.family == LossConfig::Kind::soft) run.loss.beta = job.parameter;
    const Taxonomy& loss_taxonomy = job.randomized ? *random_taxonomy : taxonomy;
    const std::string which = job.randomized ? "random" : "true";
    try {
      const RunResult result = run_training(loss_taxonomy, taxonomy, train_data, val, run);
      write_run_outputs(cfg.out_dir / which / (run.loss.family() + "_" + format_double(job.parameter)), result, run,
                        taxonomy, taxonomy_hash(loss_taxonomy));
      std::string method = run.loss.family();
      if (run.head == Head::conditional_probs) method += "-conditional";
      rows[i] = TradeoffRow{method, which, job.parameter, result.summary};
    } catch (const std::exception& e) {
      errors[i] = which + " " + run.loss.family() + "=" + format_double(job.parameter) + ": " + e.what();
    }
  });

  SweepOutcome out;
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    if (rows[i]) out.rows.push_back(*rows[i]);
    if (!errors[i].empty()) out.failures.push_back(errors[i]);
  }
  write_file(cfg.out_dir / "table.csv",
             tradeoff_csv(out.rows, cfg.describe() + ",taxonomy_hash=" + taxonomy_hash(taxonomy)));
  if (!out.failures.empty()) {
    std::string text;
    for (const auto& f : out.failures) text += f + "\n";
    write_file(cfg.out_dir / "failures.txt", text);
  } else {
    std::filesystem::remove(cfg.out_dir / "failures.txt");
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

std::vector<std::string_view> data_lines(std::string_view text) {
  std::vector<std::string_view> out;
  for (auto line : text_lines(text))
    if (!line.empty() && line.front() != '#') out.push_back(line);
  return out;
}

}  // namespace

std::string tradeoff_long_format(const std::vector<std::pair<std::string, std::string>>& tables) {
  std::string out = "source,method,taxonomy,parameter,metric,mean,half_width\n";
  std::optional<std::string> header;
  for (const auto& [source, text] : tables) {
    const auto lines = data_lines(text);
    if (lines.empty()) throw ParseError(source + ": empty table", 0);
    if (header && *header != lines.front())
      throw Error(source + ": columns differ from the first table");
    header = std::string(lines.front());
    const auto columns = split_csv(lines.front());
    if (columns.size() < 3 || columns[0] != "method" || columns[1] != "taxonomy" || columns[2] != "parameter" ||
        (columns.size() - 3) % 2 != 0)
      throw ParseError(source + ": not a tradeoff table", 1);
    for (std::size_t i = 1; i < lines.size(); ++i) {
      const auto fields = split_csv(lines[i]);
      if (fields.size() != columns.size()) throw ParseError(source + ": wrong field count", i + 1);
      for (std::size_t c = 3; c < columns.size(); c += 2)
        out += source + "," + std::string(fields[0]) + "," + std::string(fields[1]) + "," + std::string(fields[2]) +
               "," + std::string(columns[c]) + "," + std::string(fields[c]) + "," + std::string(fields[c + 1]) + "\n";
    }
  }
  return out;
}

std::string histogram_frequencies(const std::vector<std::pair<std::string, std::string>>& histograms) {
  std::string out = "source,height,count,frequency\n";
  for (const auto& [source, text] : histograms) {
    const auto lines = data_lines(text);
    if (lines.empty() || lines.front() != "height,count") throw ParseError(source + ": not a histogram", 0);
    std::vector<std::pair<std::string, double>> rows;
    double total = 0.0;
    for (std::size_t i = 1; i < lines.size(); ++i) {
      const auto fields = split_csv(lines[i]);
      double count = 0.0;
      if (fields.size() != 2 || !parse_double(fields[1], count) || count < 0)
        throw ParseError(source + ": bad histogram row", i + 1);
      rows.emplace_back(std::string(fields[0]), count);
      total += count;
    }
    for (const auto& [height, count] : rows)
      out += source + "," + height + "," + format_double(count) + "," + format_double(total > 0 ? count / total : 0.0) +
             "\n";
  }
  return out;
}

}  // namespace hiercls
