#include "hiercls/losses.hpp"

#include "hiercls/csv.hpp"

namespace hiercls {

SoftLabelMatrix soft_label_matrix(const Taxonomy& t, double beta) {
  if (!(beta >= 0.0)) throw Error("beta must be non-negative");
  const auto c = static_cast<Eigen::Index>(t.class_count());
  const double scale = t.tree_height() == 0 ? 0.0 : beta / t.tree_height();
  SoftLabelMatrix m;
  m.beta = beta;
  // d(C, C) = 0, so each row's largest weight is exactly 1 and nothing overflows.
  m.rows = (-scale * t.class_lca_heights().cast<double>().array()).exp().matrix();
  if (std::isinf(beta)) m.rows = Eigen::MatrixXd::Identity(c, c);
  m.rows.array().colwise() /= m.rows.rowwise().sum().array();
  return m;
}

std::string soft_label_csv(const Taxonomy& t, const SoftLabelMatrix& m) {
  std::string out = "# beta=" + format_double(m.beta) + ",taxonomy_hash=" + taxonomy_hash(t) + "\ntruth";
  const auto ids = t.class_ids();
  for (const auto& id : ids) out += "," + id;
  out += '\n';
  for (Eigen::Index r = 0; r < m.rows.rows(); ++r) {
    out += ids[r];
    for (Eigen::Index a = 0; a < m.rows.cols(); ++a) out += "," + format_double(m.rows(r, a));
    out += '\n';
  }
  return out;
}

}  // namespace hiercls
