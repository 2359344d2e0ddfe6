#include "hiercls/cli.hpp"

#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <json.hpp>

#include "hiercls/csv.hpp"
#include "hiercls/experiment.hpp"

namespace hiercls {
namespace {

namespace fs = std::filesystem;

Taxonomy read_taxonomy(const std::string& path, const std::string& classes_path) {
  const std::string text = read_file(path);
  try {
    if (classes_path.empty()) return load_taxonomy(text);
    return load_taxonomy(text, load_class_list(read_file(classes_path)));
  } catch (const Error& e) {
    throw Error(path + ": " + e.what());
  }
}

/// Export with a hash line in front; the hash covers the lines after it.
std::string taxonomy_file(const Taxonomy& t) {
  return "# taxonomy_hash=" + taxonomy_hash(t) + "\n" + export_edges(t);
}

void emit(const std::string& path, const std::string& text, std::ostream& out) {
  if (path.empty() || path == "-")
    out << text;
  else
    write_file(path, text);
}

Dataset read_dataset(const std::string& path, const Taxonomy& t) {
  Dataset d = load_csv(path, t);
  const std::string bound = metadata_value(d, "taxonomy_hash");
  if (!bound.empty() && bound != taxonomy_hash(t))
    throw Error(path + ": dataset was generated for taxonomy " + bound + ", not " + taxonomy_hash(t));
  return d;
}

std::vector<double> parse_probs(const std::string& text) {
  std::vector<double> out;
  for (auto f : split_csv(text)) {
    double v = 0.0;
    if (!parse_double(f, v)) throw Error("bad probability '" + std::string(f) + "'");
    out.push_back(v);
  }
  if (out.size() != 3) throw Error("--probs needs three comma-separated values");
  return out;
}

struct TaxonomyArgs {
  std::string taxonomy;
  std::string classes;

  void add(CLI::App* cmd, bool required = true) {
    auto* opt = cmd->add_option("--taxonomy", taxonomy, "Taxonomy edge list (parent<TAB>child)")->check(CLI::ExistingFile);
    if (required) opt->required();
    cmd->add_option("--classes", classes, "Class list, one id per line (overrides the file's class order)")
        ->check(CLI::ExistingFile);
  }
  Taxonomy load() const { return read_taxonomy(taxonomy, classes); }
};

struct RunArgs {
  std::string loss = "ce";
  double alpha = 0.0;
  double beta = 0.0;
  std::string head = "class";
  int hidden = 0;
  int steps = 20000;
  int batch_size = 64;
  int checkpoint_every = 500;
  int discard_before = 5000;
  double lr = 1e-3;
  std::uint64_t seed = 0;
  std::vector<int> ks{1, 5, 20};

  void add(CLI::App* cmd) {
    cmd->add_option("--loss", loss, "ce | hxe | soft")->check(CLI::IsMember({"ce", "hxe", "soft"}))->capture_default_str();
    cmd->add_option("--alpha", alpha, "HXE depth discount")->check(CLI::NonNegativeNumber);
    cmd->add_option("--beta", beta, "Soft-label sharpness")->check(CLI::NonNegativeNumber);
    cmd->add_option("--head", head, "class | conditional")->check(CLI::IsMember({"class", "conditional"}))->capture_default_str();
    cmd->add_option("--hidden", hidden, "Hidden tanh units (0: affine model)")->capture_default_str();
    cmd->add_option("--steps", steps)->check(CLI::PositiveNumber)->capture_default_str();
    cmd->add_option("--batch-size", batch_size)->check(CLI::PositiveNumber)->capture_default_str();
    cmd->add_option("--checkpoint-every", checkpoint_every)->check(CLI::PositiveNumber)->capture_default_str();
    cmd->add_option("--discard-before", discard_before, "Checkpoints before this step are ignored by selection")
        ->capture_default_str();
    cmd->add_option("--lr", lr, "Adam learning rate")->check(CLI::PositiveNumber)->capture_default_str();
    cmd->add_option("--seed", seed)->capture_default_str();
    cmd->add_option("--ks", ks, "k values for top-k metrics")->delimiter(',')->capture_default_str();
  }

  RunConfig config() const {
    RunConfig cfg;
    cfg.head = parse_head(head);
    cfg.loss.kind = parse_loss_kind(loss);
    cfg.loss.alpha = alpha;
    cfg.loss.beta = beta;
    cfg.hidden_units = hidden;
    cfg.adam.learning_rate = lr;
    cfg.schedule = {steps, batch_size, checkpoint_every, seed};
    cfg.discard_before = discard_before;
    cfg.ks = ks;
    return cfg;
  }
};

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Hierarchy-aware classification: taxonomies, losses, metrics and sweeps", "hiercls"};
  app.require_subcommand(1);
  std::function<int()> action;

  // hierarchy ---------------------------------------------------------------
  auto* hierarchy = app.add_subcommand("hierarchy", "Build, randomize, export and inspect taxonomies");
  hierarchy->require_subcommand(1);

  std::string edges_path, classes_path, edits_path, out_path;
  auto* build = hierarchy->add_subcommand("build", "Prune a DAG edge list into a class tree");
  build->add_option("--edges", edges_path, "DAG edge list (parent<TAB>child)")->required()->check(CLI::ExistingFile);
  build->add_option("--classes", classes_path, "Class list, one id per line")->required()->check(CLI::ExistingFile);
  build->add_option("--edits", edits_path, "Reparent edits (node<TAB>new_parent)")->check(CLI::ExistingFile);
  build->add_option("--out", out_path, "Output taxonomy ('-' for stdout)");
  build->callback([&] {
    action = [&] {
      const auto graph = load_edges(read_file(edges_path));
      Taxonomy t = prune_to_tree(graph, load_class_list(read_file(classes_path)));
      if (!edits_path.empty()) t = apply_edits(t, load_edits(read_file(edits_path)));
      emit(out_path, taxonomy_file(t), out);
      return kOk;
    };
  });

  TaxonomyArgs tax_args;
  std::uint64_t seed = 0;
  auto* rand_cmd = hierarchy->add_subcommand("randomize", "Shuffle class labels over the leaf positions");
  tax_args.add(rand_cmd);
  rand_cmd->add_option("--seed", seed)->required();
  rand_cmd->add_option("--out", out_path)->required();
  rand_cmd->callback([&] {
    action = [&] {
      const Taxonomy t = tax_args.load();
      const auto perm = random_permutation(t.class_count(), seed);
      const Taxonomy shuffled = relabel_leaves(t, perm);
      write_file(out_path, taxonomy_file(shuffled));
      std::string sidecar = "# seed=" + std::to_string(seed) + ",taxonomy_hash=" + taxonomy_hash(t) +
                            ",randomized_hash=" + taxonomy_hash(shuffled) + "\nposition_class,assigned_class\n";
      const auto ids = t.class_ids();
      for (std::size_t k = 0; k < ids.size(); ++k) sidecar += ids[k] + "," + ids[perm[k]] + "\n";
      write_file(out_path + ".perm.csv", sidecar);
      return kOk;
    };
  });

  auto* export_cmd = hierarchy->add_subcommand("export", "Write the canonical edge list");
  tax_args.add(export_cmd);
  export_cmd->add_option("--out", out_path, "Output file ('-' or absent for stdout)");
  export_cmd->callback([&] {
    action = [&] {
      emit(out_path, taxonomy_file(tax_args.load()), out);
      return kOk;
    };
  });

  int branching = 3, depth = 3;
  auto* balanced = hierarchy->add_subcommand("balanced", "Generate a complete tree");
  balanced->add_option("--branching", branching)->capture_default_str();
  balanced->add_option("--depth", depth)->capture_default_str();
  balanced->add_option("--out", out_path, "Output file ('-' or absent for stdout)");
  balanced->callback([&] {
    action = [&] {
      emit(out_path, taxonomy_file(make_balanced_tree(branching, depth)), out);
      return kOk;
    };
  });

  double beta = 0.0;
  auto* soft_cmd = hierarchy->add_subcommand("soft-labels", "Export the soft-label matrix as CSV");
  tax_args.add(soft_cmd);
  soft_cmd->add_option("--beta", beta)->required()->check(CLI::NonNegativeNumber);
  soft_cmd->add_option("--out", out_path, "Output file ('-' or absent for stdout)");
  soft_cmd->callback([&] {
    action = [&] {
      const Taxonomy t = tax_args.load();
      emit(out_path, soft_label_csv(t, soft_label_matrix(t, beta)), out);
      return kOk;
    };
  });

  std::string node_a, node_b;
  auto* dist_cmd = hierarchy->add_subcommand("distance", "Print LCA, LCA height and normalized distance");
  tax_args.add(dist_cmd);
  dist_cmd->add_option("a", node_a)->required();
  dist_cmd->add_option("b", node_b)->required();
  dist_cmd->callback([&] {
    action = [&] {
      const Taxonomy t = tax_args.load();
      out << "lca=" << lca(t, node_a, node_b) << " lca_height=" << lca_height(t, node_a, node_b)
          << " distance=" << format_double(normalized_distance(t, node_a, node_b)) << "\n";
      return kOk;
    };
  });

  // gen-data / split ---------------------------------------------------------
  SynthConfig synth;
  std::string split_dir, probs_text = "0.7,0.15,0.15";
  std::optional<std::uint64_t> split_seed;
  auto* gen = app.add_subcommand("gen-data", "Generate a hierarchy-correlated Gaussian dataset");
  tax_args.add(gen);
  gen->add_option("--per-class", synth.per_class)->check(CLI::PositiveNumber)->capture_default_str();
  gen->add_option("--dim", synth.dim)->check(CLI::PositiveNumber)->capture_default_str();
  gen->add_option("--step-scale", synth.step_scale, "Scale of each parent-to-child mean step")->capture_default_str();
  gen->add_option("--noise-scale", synth.noise_scale, "Per-example noise around the class mean")->capture_default_str();
  gen->add_option("--decay", synth.decay, "Per-level multiplier on the step scale")->capture_default_str();
  gen->add_option("--seed", synth.seed)->capture_default_str();
  gen->add_option("--out", out_path, "Dataset CSV")->required();
  gen->add_option("--split-dir", split_dir, "Also write train/val/test.csv here");
  gen->add_option("--split-seed", split_seed, "Split seed (defaults to --seed)");
  gen->add_option("--probs", probs_text, "Train,val,test probabilities")->capture_default_str();
  gen->callback([&] {
    action = [&] {
      const Taxonomy t = tax_args.load();
      const Dataset d = synth_hierarchical(t, synth);
      write_file(out_path, dataset_csv(d, t));
      nlohmann::json manifest = {{"generator", "synth_hierarchical"}, {"seed", synth.seed},
                                 {"per_class", synth.per_class},      {"dim", synth.dim},
                                 {"step_scale", synth.step_scale},    {"noise_scale", synth.noise_scale},
                                 {"decay", synth.decay},              {"examples", d.size()},
                                 {"taxonomy_hash", taxonomy_hash(t)}};
      write_file(out_path + ".manifest.json", manifest.dump(2) + "\n");
      if (!split_dir.empty()) {
        const auto probs = parse_probs(probs_text);
        const auto parts = split(d, {{probs[0], probs[1], probs[2]}, split_seed.value_or(synth.seed)});
        write_file(fs::path(split_dir) / "train.csv", dataset_csv(parts.train, t));
        write_file(fs::path(split_dir) / "val.csv", dataset_csv(parts.val, t));
        write_file(fs::path(split_dir) / "test.csv", dataset_csv(parts.test, t));
      }
      return kOk;
    };
  });

  std::string data_path;
  auto* split_cmd = app.add_subcommand("split", "Resample train/val/test splits of a dataset");
  tax_args.add(split_cmd);
  split_cmd->add_option("--data", data_path)->required()->check(CLI::ExistingFile);
  split_cmd->add_option("--seed", seed)->required();
  split_cmd->add_option("--probs", probs_text)->capture_default_str();
  split_cmd->add_option("--out-dir", split_dir)->required();
  split_cmd->callback([&] {
    action = [&] {
      const Taxonomy t = tax_args.load();
      const auto probs = parse_probs(probs_text);
      const auto parts = split(read_dataset(data_path, t), {{probs[0], probs[1], probs[2]}, seed});
      write_file(fs::path(split_dir) / "train.csv", dataset_csv(parts.train, t));
      write_file(fs::path(split_dir) / "val.csv", dataset_csv(parts.val, t));
      write_file(fs::path(split_dir) / "test.csv", dataset_csv(parts.test, t));
      return kOk;
    };
  });

  // train ----------------------------------------------------------------------
  RunArgs run_args;
  std::string train_path, val_path, eval_taxonomy_path, out_dir;
  auto* train_cmd = app.add_subcommand("train", "Train a classifier and select checkpoints");
  tax_args.add(train_cmd);
  run_args.add(train_cmd);
  train_cmd->add_option("--train", train_path)->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--val", val_path)->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--eval-taxonomy", eval_taxonomy_path,
                        "Taxonomy for metrics when training on a different one (e.g. randomized)")
      ->check(CLI::ExistingFile);
  train_cmd->add_option("--out", out_dir)->required();
  train_cmd->callback([&] {
    action = [&] {
      const Taxonomy loss_taxonomy = tax_args.load();
      const Taxonomy eval_taxonomy =
          eval_taxonomy_path.empty() ? loss_taxonomy : read_taxonomy(eval_taxonomy_path, tax_args.classes);
      const Dataset train_data = read_dataset(train_path, eval_taxonomy);
      const Dataset val = read_dataset(val_path, eval_taxonomy);
      const RunConfig cfg = run_args.config();
      const RunResult result = run_training(loss_taxonomy, eval_taxonomy, train_data, val, cfg);
      write_run_outputs(out_dir, result, cfg, eval_taxonomy, taxonomy_hash(loss_taxonomy));
      out << summary_csv(result.summary, {});
      return kOk;
    };
  });

  // evaluate -------------------------------------------------------------------
  std::vector<std::string> checkpoint_paths;
  std::string predictions_path, loss_taxonomy_path;
  std::vector<int> eval_ks{1, 5, 20};
  auto* eval_cmd = app.add_subcommand("evaluate", "Score checkpoints or a prediction file");
  tax_args.add(eval_cmd);
  eval_cmd->add_option("--data", data_path, "Dataset to score the checkpoints on")->check(CLI::ExistingFile);
  eval_cmd->add_option("--checkpoint", checkpoint_paths, "Checkpoint file(s); results are averaged")
      ->check(CLI::ExistingFile);
  eval_cmd->add_option("--loss-taxonomy", loss_taxonomy_path, "Taxonomy the checkpoints were trained with")
      ->check(CLI::ExistingFile);
  eval_cmd->add_option("--predictions", predictions_path, "Prediction CSV to score instead of checkpoints")
      ->check(CLI::ExistingFile);
  eval_cmd->add_option("--ks", eval_ks)->delimiter(',')->capture_default_str();
  eval_cmd->add_option("--out", out_dir)->required();
  eval_cmd->callback([&] {
    action = [&] {
      const Taxonomy t = tax_args.load();
      const auto ks = usable_ks(eval_ks, t.class_count());
      const std::string header = "taxonomy_hash=" + taxonomy_hash(t);
      std::vector<MetricReport> reports;
      if (!predictions_path.empty()) {
        const auto batch = parse_predictions_csv(t, read_file(predictions_path));
        reports.push_back(compute_report(t, batch, ks));
      } else {
        if (data_path.empty() || checkpoint_paths.empty())
          throw CLI::ValidationError("evaluate", "needs --predictions, or --data with --checkpoint");
        const Taxonomy loss_taxonomy = loss_taxonomy_path.empty() ? t : read_taxonomy(loss_taxonomy_path, tax_args.classes);
        const Dataset data = read_dataset(data_path, t);
        for (const auto& path : checkpoint_paths) {
          const auto loaded = parse_checkpoint(read_file(path));
          if (!loaded.taxonomy_hash.empty() && loaded.taxonomy_hash != taxonomy_hash(loss_taxonomy))
            throw Error(path + ": checkpoint taxonomy hash " + loaded.taxonomy_hash + " does not match " +
                        taxonomy_hash(loss_taxonomy));
          const Objective objective(loss_taxonomy, loaded.model.head, LossConfig::cross_entropy());
          reports.push_back(evaluate(loaded.model, data, t, objective, ks));
          if (checkpoint_paths.size() == 1) {
            const int max_k = *std::max_element(ks.begin(), ks.end());
            write_file(fs::path(out_dir) / "predictions.csv",
                       predictions_csv(t, predict(loaded.model, data, objective, static_cast<std::size_t>(max_k)), header));
          }
        }
      }
      if (reports.size() == 1) write_file(fs::path(out_dir) / "report.csv", report_csv(reports.front(), header));
      const auto summary = summarize(reports);
      write_file(fs::path(out_dir) / "summary.csv", summary_csv(summary, header));
      write_file(fs::path(out_dir) / "histogram.csv", histogram_csv(merge_histograms(reports), header));
      out << summary_csv(summary, {});
      return kOk;
    };
  });

  // sweep ----------------------------------------------------------------------
  std::string config_path;
  std::optional<int> workers;
  auto* sweep_cmd = app.add_subcommand("sweep", "Train one model per alpha/beta grid point");
  sweep_cmd->add_option("--config", config_path, "key=value sweep configuration")->required()->check(CLI::ExistingFile);
  sweep_cmd->add_option("--workers", workers, "Parallel runs (default: hardware threads)");
  sweep_cmd->callback([&] {
    action = [&] {
      SweepConfig cfg = parse_sweep_config(read_file(config_path), fs::path(config_path).parent_path());
      if (workers) cfg.workers = *workers;
      const Taxonomy t = read_taxonomy(cfg.taxonomy_path.string(), cfg.classes_path ? cfg.classes_path->string() : "");
      const Dataset train_data = read_dataset(cfg.train_path.string(), t);
      const Dataset val = read_dataset(cfg.val_path.string(), t);
      const SweepOutcome outcome = run_sweep(cfg, t, train_data, val);
      out << tradeoff_csv(outcome.rows, {});
      for (const auto& f : outcome.failures) err << "failed: " << f << "\n";
      return outcome.failures.empty() ? kOk : kPartialSweep;
    };
  });

  // report ---------------------------------------------------------------------
  std::vector<std::string> table_paths, histogram_paths;
  std::string histogram_out;
  auto* report_cmd = app.add_subcommand("report", "Merge tradeoff tables and histograms into plot-ready CSV");
  report_cmd->add_option("--tables", table_paths, "Tradeoff tables")->check(CLI::ExistingFile);
  report_cmd->add_option("--histograms", histogram_paths, "Severity histograms")->check(CLI::ExistingFile);
  report_cmd->add_option("--out", out_path, "Long-format table output ('-' or absent for stdout)");
  report_cmd->add_option("--histogram-out", histogram_out, "Histogram frequency output");
  report_cmd->callback([&] {
    action = [&] {
      if (table_paths.empty() && histogram_paths.empty())
        throw CLI::ValidationError("report", "needs --tables and/or --histograms");
      if (!table_paths.empty()) {
        std::vector<std::pair<std::string, std::string>> tables;
        for (const auto& p : table_paths) tables.emplace_back(p, read_file(p));
        emit(out_path, "# report tables=" + std::to_string(tables.size()) + "\n" + tradeoff_long_format(tables), out);
      }
      if (!histogram_paths.empty()) {
        std::vector<std::pair<std::string, std::string>> hists;
        for (const auto& p : histogram_paths) hists.emplace_back(p, read_file(p));
        emit(histogram_out, "# report histograms=" + std::to_string(hists.size()) + "\n" + histogram_frequencies(hists),
             out);
      }
      return kOk;
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? kOk : kUsageError;
  }
  try {
    return action();
  } catch (const CLI::ValidationError& e) {
    err << "error: " << e.what() << "\n";
    return kUsageError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kDataError;
  }
}

}  // namespace hiercls
