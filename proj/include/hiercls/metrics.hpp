#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "hiercls/hierarchy.hpp"

namespace hiercls {

/// Ranked predictions, as class indices. rankings[i] lists classes by
/// descending score for example i.
struct PredictionBatch {
  std::vector<std::vector<int>> rankings;
  std::vector<int> truths;

  std::size_t size() const { return truths.size(); }
  /// Throws Error on length mismatch, empty batch, duplicates within a
  /// ranking, or a ranking shorter than `min_length`.
  void validate(std::size_t min_length = 1) const;
};

struct MetricReport {
  std::size_t examples = 0;
  std::size_t mistakes = 0;
  std::map<int, double> top_k_error;
  /// 0 with `no_mistakes` set when every top-1 prediction is correct.
  double hier_dist_mistake = 0.0;
  bool no_mistakes = true;
  std::map<int, double> avg_hier_dist_topk;
  /// Top-1 mistakes keyed by LCA height.
  std::map<int, std::int64_t> severity_histogram;
};

/// Class indices by descending score; ties go to the lower index. Only the
/// first `k` entries are returned.
std::vector<int> rank_classes(const Eigen::Ref<const Eigen::VectorXd>& scores, std::size_t k);

double top_k_error(const PredictionBatch& b, int k);
double hier_dist_mistake(const Taxonomy& t, const PredictionBatch& b);
double avg_hier_dist_topk(const Taxonomy& t, const PredictionBatch& b, int k);
std::map<int, std::int64_t> severity_histogram(const Taxonomy& t, const PredictionBatch& b);

MetricReport compute_report(const Taxonomy& t, const PredictionBatch& b, const std::vector<int>& ks);

/// Ordered (name, value) pairs: top{k}_error, hier_dist_mistake,
/// avg_hier_dist@{k}. This is the column order of every metric table.
std::vector<std::pair<std::string, double>> flatten(const MetricReport& r);

// CSV surfaces ---------------------------------------------------------------

/// `example_id,truth,pred_1,...,pred_K` with class ids.
std::string predictions_csv(const Taxonomy& t, const PredictionBatch& b, const std::string& header_comment = {});
PredictionBatch parse_predictions_csv(const Taxonomy& t, std::string_view text);

/// `metric,k,value`; k is empty for metrics without one.
std::string report_csv(const MetricReport& r, const std::string& header_comment = {});
/// `height,count`.
std::string histogram_csv(const std::map<int, std::int64_t>& h, const std::string& header_comment = {});

}  // namespace hiercls
