#include "hiercls/metrics.hpp"

#include <algorithm>
#include <numeric>
#include <unordered_set>

#include "hiercls/csv.hpp"

namespace hiercls {

void PredictionBatch::validate(std::size_t min_length) const {
  if (truths.empty()) throw Error("empty prediction batch");
  if (rankings.size() != truths.size()) throw Error("rankings and truths differ in length");
  for (std::size_t i = 0; i < rankings.size(); ++i) {
    const auto& r = rankings[i];
    if (r.size() < min_length)
      throw Error("example " + std::to_string(i) + ": ranking has " + std::to_string(r.size()) +
                  " entries, need " + std::to_string(min_length));
    std::unordered_set<int> seen(r.begin(), r.end());
    if (seen.size() != r.size()) throw Error("example " + std::to_string(i) + ": duplicate class in ranking");
  }
}

std::vector<int> rank_classes(const Eigen::Ref<const Eigen::VectorXd>& scores, std::size_t k) {
  std::vector<int> order(static_cast<std::size_t>(scores.size()));
  std::iota(order.begin(), order.end(), 0);
  k = std::min(k, order.size());
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                    [&](int a, int b) { return scores[a] > scores[b] || (scores[a] == scores[b] && a < b); });
  order.resize(k);
  return order;
}

namespace {

void check_k(const PredictionBatch& b, int k) {
  if (k < 1) throw Error("k must be positive");
  b.validate(static_cast<std::size_t>(k));
}

}  // namespace

double top_k_error(const PredictionBatch& b, int k) {
  check_k(b, k);
  std::size_t misses = 0;
  for (std::size_t i = 0; i < b.size(); ++i) {
    const auto& r = b.rankings[i];
    if (std::find(r.begin(), r.begin() + k, b.truths[i]) == r.begin() + k) ++misses;
  }
  return static_cast<double>(misses) / static_cast<double>(b.size());
}

double hier_dist_mistake(const Taxonomy& t, const PredictionBatch& b) {
  b.validate();
  double total = 0.0;
  std::size_t mistakes = 0;
  for (std::size_t i = 0; i < b.size(); ++i) {
    if (b.rankings[i].front() == b.truths[i]) continue;
    total += t.class_lca_height(b.truths[i], b.rankings[i].front());
    ++mistakes;
  }
  return mistakes ? total / static_cast<double>(mistakes) : 0.0;
}

double avg_hier_dist_topk(const Taxonomy& t, const PredictionBatch& b, int k) {
  check_k(b, k);
  double total = 0.0;
  for (std::size_t i = 0; i < b.size(); ++i)
    for (int j = 0; j < k; ++j) total += t.class_lca_height(b.truths[i], b.rankings[i][j]);
  return total / (static_cast<double>(b.size()) * k);
}

std::map<int, std::int64_t> severity_histogram(const Taxonomy& t, const PredictionBatch& b) {
  b.validate();
  std::map<int, std::int64_t> h;
  for (std::size_t i = 0; i < b.size(); ++i)
    if (b.rankings[i].front() != b.truths[i]) ++h[t.class_lca_height(b.truths[i], b.rankings[i].front())];
  return h;
}

MetricReport compute_report(const Taxonomy& t, const PredictionBatch& b, const std::vector<int>& ks) {
  MetricReport r;
  r.examples = b.size();
  for (int k : ks) {
    r.top_k_error[k] = top_k_error(b, k);
    r.avg_hier_dist_topk[k] = avg_hier_dist_topk(t, b, k);
  }
  r.severity_histogram = severity_histogram(t, b);
  for (const auto& [h, count] : r.severity_histogram) r.mistakes += static_cast<std::size_t>(count);
  r.no_mistakes = r.mistakes == 0;
  r.hier_dist_mistake = hier_dist_mistake(t, b);
  return r;
}

std::vector<std::pair<std::string, double>> flatten(const MetricReport& r) {
  std::vector<std::pair<std::string, double>> out;
  for (const auto& [k, v] : r.top_k_error) out.emplace_back("top" + std::to_string(k) + "_error", v);
  out.emplace_back("hier_dist_mistake", r.hier_dist_mistake);
  for (const auto& [k, v] : r.avg_hier_dist_topk) out.emplace_back("avg_hier_dist@" + std::to_string(k), v);
  return out;
}

// ---------------------------------------------------------------------------

namespace {

std::string comment_block(const std::string& header_comment) {
  return header_comment.empty() ? std::string() : "# " + header_comment + "\n";
}

}  // namespace

std::string predictions_csv(const Taxonomy& t, const PredictionBatch& b, const std::string& header_comment) {
  b.validate();
  std::size_t width = b.rankings.front().size();
  for (const auto& r : b.rankings) width = std::min(width, r.size());
  std::string out = comment_block(header_comment) + "example_id,truth";
  for (std::size_t j = 1; j <= width; ++j) out += ",pred_" + std::to_string(j);
  out += '\n';
  for (std::size_t i = 0; i < b.size(); ++i) {
    out += std::to_string(i) + ',' + t.id(t.leaf_node(b.truths[i]));
    for (std::size_t j = 0; j < width; ++j) out += ',' + t.id(t.leaf_node(b.rankings[i][j]));
    out += '\n';
  }
  return out;
}

PredictionBatch parse_predictions_csv(const Taxonomy& t, std::string_view text) {
  PredictionBatch b;
  bool header_seen = false;
  std::size_t width = 0;
  const auto lines = text_lines(text);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const auto line = lines[i];
    if (line.empty() || line.front() == '#') continue;
    const auto fields = split_csv(line);
    if (!header_seen) {
      if (fields.size() < 3 || fields[0] != "example_id" || fields[1] != "truth")
        throw ParseError("expected header 'example_id,truth,pred_1,...'", i + 1);
      width = fields.size() - 2;
      header_seen = true;
      continue;
    }
    if (fields.size() != width + 2) throw ParseError("expected " + std::to_string(width + 2) + " fields", i + 1);
    auto lookup = [&](std::string_view id) {
      try {
        return t.class_index(std::string(id));
      } catch (const UnknownNodeError&) {
        throw ParseError("unknown class '" + std::string(id) + "'", i + 1);
      }
    };
    b.truths.push_back(lookup(fields[1]));
    std::vector<int> ranking;
    for (std::size_t j = 2; j < fields.size(); ++j) ranking.push_back(lookup(fields[j]));
    b.rankings.push_back(std::move(ranking));
  }
  b.validate();
  return b;
}

std::string report_csv(const MetricReport& r, const std::string& header_comment) {
  std::string out = comment_block(header_comment) + "metric,k,value\n";
  for (const auto& [k, v] : r.top_k_error) out += "top_k_error," + std::to_string(k) + "," + format_double(v) + "\n";
  out += "hier_dist_mistake,," + format_double(r.hier_dist_mistake) + "\n";
  for (const auto& [k, v] : r.avg_hier_dist_topk)
    out += "avg_hier_dist_topk," + std::to_string(k) + "," + format_double(v) + "\n";
  out += "mistakes,," + std::to_string(r.mistakes) + "\n";
  out += "examples,," + std::to_string(r.examples) + "\n";
  return out;
}

std::string histogram_csv(const std::map<int, std::int64_t>& h, const std::string& header_comment) {
  std::string out = comment_block(header_comment) + "height,count\n";
  for (const auto& [height, count] : h) out += std::to_string(height) + "," + std::to_string(count) + "\n";
  return out;
}

}  // namespace hiercls
