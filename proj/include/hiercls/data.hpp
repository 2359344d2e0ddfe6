#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "hiercls/hierarchy.hpp"

namespace hiercls {

/// Labelled features. Labels are class indices of the taxonomy the dataset
/// was loaded or generated against.
struct Dataset {
  Eigen::MatrixXd features;  // N x D, one example per row
  std::vector<int> labels;
  /// '#' lines carried through load/save unchanged (without the '#').
  std::vector<std::string> metadata;

  std::size_t size() const { return labels.size(); }
  Eigen::Index feature_dim() const { return features.cols(); }

  /// Rows `rows` of this dataset; metadata is copied.
  Dataset subset(const std::vector<int>& rows) const;
};

/// Value of "key=" inside the metadata lines, or empty.
std::string metadata_value(const Dataset& d, const std::string& key);

/// Header `f0,...,f{D-1},label`; '#' lines before the header are kept as metadata.
Dataset parse_dataset_csv(std::string_view text, const Taxonomy& t);
Dataset load_csv(const std::filesystem::path& path, const Taxonomy& t);

/// Numbers use the shortest round-trip form, so load/save is byte-stable.
std::string dataset_csv(const Dataset& d, const Taxonomy& t);

struct SplitSpec {
  std::array<double, 3> probabilities{0.7, 0.15, 0.15};
  std::uint64_t seed = 0;

  void validate() const;
};

struct DatasetSplits {
  Dataset train, val, test;
};

/// Independent seeded categorical draw per example. Throws when any part
/// comes out empty.
DatasetSplits split(const Dataset& d, const SplitSpec& spec);

struct SynthConfig {
  int per_class = 500;
  int dim = 16;
  /// Scale of the Gaussian step from a node's mean to each child's mean.
  double step_scale = 1.0;
  /// Scale of per-example noise around the class mean.
  double noise_scale = 0.75;
  /// Step scale is multiplied by decay^(depth - 1) at each level.
  double decay = 1.0;
  std::uint64_t seed = 7;
};

/// Per-node means as rows, indexed by node.
Eigen::MatrixXd synth_node_means(const Taxonomy& t, const SynthConfig& cfg);

/// Class-major examples drawn around the means of synth_node_means.
Dataset synth_hierarchical(const Taxonomy& t, const SynthConfig& cfg);

}  // namespace hiercls
