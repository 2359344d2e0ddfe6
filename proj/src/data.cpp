#include "hiercls/data.hpp"

#include <cmath>
#include <random>

#include "hiercls/csv.hpp"

namespace hiercls {

Dataset Dataset::subset(const std::vector<int>& rows) const {
  Dataset out;
  out.metadata = metadata;
  out.features.resize(static_cast<Eigen::Index>(rows.size()), features.cols());
  out.labels.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.features.row(static_cast<Eigen::Index>(i)) = features.row(rows[i]);
    out.labels.push_back(labels[rows[i]]);
  }
  return out;
}

std::string metadata_value(const Dataset& d, const std::string& key) {
  const std::string needle = key + "=";
  for (const auto& line : d.metadata) {
    for (auto field : split_csv(line)) {
      while (!field.empty() && field.front() == ' ') field.remove_prefix(1);
      if (field.substr(0, needle.size()) == needle) return std::string(field.substr(needle.size()));
    }
  }
  return {};
}

Dataset parse_dataset_csv(std::string_view text, const Taxonomy& t) {
  Dataset d;
  const auto lines = text_lines(text);
  std::size_t i = 0;
  for (; i < lines.size() && !lines[i].empty() && lines[i].front() == '#'; ++i) {
    auto body = lines[i].substr(1);
    if (!body.empty() && body.front() == ' ') body.remove_prefix(1);
    d.metadata.emplace_back(body);
  }
  if (i == lines.size()) throw ParseError("missing header", 0);

  const auto header = split_csv(lines[i]);
  if (header.size() < 2 || header.back() != "label") throw ParseError("header must end with 'label'", i + 1);
  const auto dim = static_cast<Eigen::Index>(header.size() - 1);
  for (Eigen::Index j = 0; j < dim; ++j)
    if (header[j] != "f" + std::to_string(j)) throw ParseError("expected column 'f" + std::to_string(j) + "'", i + 1);

  std::vector<double> values;
  for (++i; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    const auto fields = split_csv(lines[i]);
    if (static_cast<Eigen::Index>(fields.size()) != dim + 1)
      throw ParseError("expected " + std::to_string(dim + 1) + " fields", i + 1);
    for (Eigen::Index j = 0; j < dim; ++j) {
      double x = 0.0;
      if (!parse_double(fields[j], x) || !std::isfinite(x))
        throw ParseError("bad number '" + std::string(fields[j]) + "'", i + 1);
      values.push_back(x);
    }
    const std::string label(fields.back());
    if (!t.contains(label) || t.class_index(t.index(label)) < 0)
      throw ParseError("unknown label '" + label + "'", i + 1);
    d.labels.push_back(t.class_index(label));
  }
  if (d.labels.empty()) throw Error("dataset has no examples");
  d.features = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      values.data(), static_cast<Eigen::Index>(d.labels.size()), dim);
  return d;
}

Dataset load_csv(const std::filesystem::path& path, const Taxonomy& t) {
  try {
    return parse_dataset_csv(read_file(path), t);
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what(), 0);
  }
}

std::string dataset_csv(const Dataset& d, const Taxonomy& t) {
  std::string out;
  for (const auto& m : d.metadata) out += "# " + m + "\n";
  for (Eigen::Index j = 0; j < d.feature_dim(); ++j) out += "f" + std::to_string(j) + ",";
  out += "label\n";
  for (std::size_t i = 0; i < d.size(); ++i) {
    for (Eigen::Index j = 0; j < d.feature_dim(); ++j)
      out += format_double(d.features(static_cast<Eigen::Index>(i), j)) + ",";
    out += t.id(t.leaf_node(d.labels[i])) + "\n";
  }
  return out;
}

void SplitSpec::validate() const {
  double total = 0.0;
  for (double p : probabilities) {
    if (!(p > 0.0 && p < 1.0)) throw Error("split probabilities must lie in (0, 1)");
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-12) throw Error("split probabilities must sum to 1");
}

DatasetSplits split(const Dataset& d, const SplitSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::array<std::vector<int>, 3> parts;
  const double first = spec.probabilities[0];
  const double second = first + spec.probabilities[1];
  for (std::size_t i = 0; i < d.size(); ++i) {
    const double u = unit(rng);
    parts[u < first ? 0 : (u < second ? 1 : 2)].push_back(static_cast<int>(i));
  }
  static const char* names[] = {"train", "val", "test"};
  for (int s = 0; s < 3; ++s)
    if (parts[s].empty())
      throw Error(std::string("split '") + names[s] + "' is empty; use a different seed or more data");
  return {d.subset(parts[0]), d.subset(parts[1]), d.subset(parts[2])};
}

Eigen::MatrixXd synth_node_means(const Taxonomy& t, const SynthConfig& cfg) {
  if (cfg.dim < 1) throw Error("dim must be positive");
  if (!(cfg.step_scale >= 0.0) || !(cfg.decay > 0.0)) throw Error("step scale must be >= 0 and decay > 0");
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd means = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(t.node_count()), cfg.dim);
  // Node indices are breadth-first, so each parent's mean is ready first.
  for (int v : t.non_root_order()) {
    const double scale = cfg.step_scale * std::pow(cfg.decay, t.depth(v) - 1);
    for (int j = 0; j < cfg.dim; ++j) means(v, j) = means(t.parent(v), j) + scale * normal(rng);
  }
  return means;
}

Dataset synth_hierarchical(const Taxonomy& t, const SynthConfig& cfg) {
  if (cfg.per_class < 1) throw Error("per_class must be positive");
  if (!(cfg.noise_scale >= 0.0)) throw Error("noise scale must be non-negative");
  const Eigen::MatrixXd means = synth_node_means(t, cfg);
  // Separate stream for the noise so the means do not depend on per_class.
  std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  std::normal_distribution<double> normal(0.0, 1.0);

  Dataset d;
  const auto n = static_cast<Eigen::Index>(t.class_count()) * cfg.per_class;
  d.features.resize(n, cfg.dim);
  d.labels.reserve(static_cast<std::size_t>(n));
  Eigen::Index row = 0;
  for (std::size_t k = 0; k < t.class_count(); ++k) {
    const int leaf = t.leaf_node(static_cast<int>(k));
    for (int i = 0; i < cfg.per_class; ++i, ++row) {
      for (int j = 0; j < cfg.dim; ++j) d.features(row, j) = means(leaf, j) + cfg.noise_scale * normal(rng);
      d.labels.push_back(static_cast<int>(k));
    }
  }
  d.metadata.push_back("generator=synth_hierarchical,seed=" + std::to_string(cfg.seed) +
                       ",per_class=" + std::to_string(cfg.per_class) + ",dim=" + std::to_string(cfg.dim) +
                       ",step_scale=" + format_double(cfg.step_scale) +
                       ",noise_scale=" + format_double(cfg.noise_scale) + ",decay=" + format_double(cfg.decay) +
                       ",taxonomy_hash=" + taxonomy_hash(t));
  return d;
}

}  // namespace hiercls
