#pragma once

#include <algorithm>
#include <cmath>
#include <utility>

#include <Eigen/Core>

#include "hiercls/hierarchy.hpp"

namespace hiercls {

/// Floor applied inside every log and every denominator.
inline constexpr double kProbFloor = 1e-12;

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// Probabilities over classes, in class order.
using ProbVector = Eigen::VectorXd;
/// Pre-softmax scores: one per class (class head) or one per non-root node
/// in `Taxonomy::non_root_order()` (conditional head).
using LogitVector = Eigen::VectorXd;

template <typename Scalar>
struct LossGrad {
  Scalar loss;
  Vector<Scalar> grad;
};

template <typename Derived>
Vector<typename Derived::Scalar> softmax(const Eigen::MatrixBase<Derived>& z) {
  using Scalar = typename Derived::Scalar;
  Vector<Scalar> e = (z.array() - z.maxCoeff()).exp().matrix();
  return e / e.sum();
}

/// Per-edge weights, indexed by node; the entry for node C weights the edge
/// parent(C) -> C. The root entry is unused.
struct HxeWeights {
  double alpha = 0.0;
  Eigen::VectorXd lambda;

  /// lambda(C) = exp(-alpha * depth(C)).
  static HxeWeights exponential(const Taxonomy& t, double alpha) {
    if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw Error("alpha must be a finite non-negative number");
    HxeWeights w;
    w.alpha = alpha;
    w.lambda.resize(static_cast<Eigen::Index>(t.node_count()));
    for (std::size_t v = 0; v < t.node_count(); ++v) w.lambda[v] = std::exp(-alpha * t.depth(static_cast<int>(v)));
    return w;
  }
  static HxeWeights uniform(const Taxonomy& t) { return exponential(t, 0.0); }
};

namespace detail {

template <typename Scalar>
Scalar floored(Scalar x) {
  return std::max(x, Scalar(kProbFloor));
}

template <typename Derived>
typename Derived::Scalar subtree_mass(const Taxonomy& t, const Eigen::MatrixBase<Derived>& p, int node) {
  typename Derived::Scalar m(0);
  for (int k : t.leaves_under(node)) m += p[k];
  return m;
}

// Adds coef * d(log mass(node))/dz to `grad`, for p = softmax(z).
template <typename Scalar>
void add_dlog_mass(const Taxonomy& t, const Vector<Scalar>& p, int node, Scalar mass, Scalar coef,
                   Vector<Scalar>& grad) {
  grad -= coef * p;
  for (int k : t.leaves_under(node)) grad[k] += coef * p[k] / mass;
}

}  // namespace detail

/// Conditional probability of each edge, indexed by child node:
/// p(C | parent(C)) = mass(C) / mass(parent(C)). The root entry is 1.
template <typename Derived>
Vector<typename Derived::Scalar> conditionals_from_class_probs(const Taxonomy& t,
                                                               const Eigen::MatrixBase<Derived>& p) {
  using Scalar = typename Derived::Scalar;
  const auto n = static_cast<Eigen::Index>(t.node_count());
  Vector<Scalar> mass = Vector<Scalar>::Zero(n);
  for (std::size_t k = 0; k < t.class_count(); ++k) mass[t.leaf_node(static_cast<int>(k))] = p[k];
  // Breadth-first indices: children always follow their parent.
  for (Eigen::Index v = n - 1; v > 0; --v) mass[t.parent(static_cast<int>(v))] += mass[v];
  Vector<Scalar> cond(n);
  cond[t.root()] = Scalar(1);
  for (Eigen::Index v = 1; v < n; ++v) cond[v] = mass[v] / detail::floored(mass[t.parent(static_cast<int>(v))]);
  return cond;
}

/// Product of the conditionals along the class's lineage.
template <typename Derived>
typename Derived::Scalar factorized_prob(const Taxonomy& t, const Eigen::MatrixBase<Derived>& conditionals,
                                         int class_index) {
  typename Derived::Scalar prob(1);
  for (int v : t.lineage(t.leaf_node(class_index))) prob *= conditionals[v];
  return prob;
}

template <typename Derived>
Vector<typename Derived::Scalar> class_probs_from_conditionals(const Taxonomy& t,
                                                               const Eigen::MatrixBase<Derived>& conditionals) {
  Vector<typename Derived::Scalar> p(static_cast<Eigen::Index>(t.class_count()));
  for (Eigen::Index k = 0; k < p.size(); ++k) p[k] = factorized_prob(t, conditionals, static_cast<int>(k));
  return p;
}

template <typename Derived>
typename Derived::Scalar cross_entropy(const Eigen::MatrixBase<Derived>& p, int truth) {
  return -std::log(detail::floored(p[truth]));
}

/// -sum over the truth's lineage of lambda(C) log p(C | parent(C)).
template <typename Derived>
typename Derived::Scalar hxe_loss(const Taxonomy& t, const HxeWeights& w, const Eigen::MatrixBase<Derived>& p,
                                  int truth) {
  using Scalar = typename Derived::Scalar;
  Scalar loss(0);
  for (int c : t.lineage(t.leaf_node(truth))) {
    const Scalar m = detail::subtree_mass(t, p, c);
    const Scalar parent_mass = detail::subtree_mass(t, p, t.parent(c));
    loss -= Scalar(w.lambda[c]) * std::log(detail::floored(m / detail::floored(parent_mass)));
  }
  return loss;
}

/// Loss and exact gradient of hxe_loss(softmax(z)) with respect to class logits z.
template <typename Derived>
LossGrad<typename Derived::Scalar> hxe_loss_and_grad(const Taxonomy& t, const HxeWeights& w,
                                                     const Eigen::MatrixBase<Derived>& z, int truth) {
  using Scalar = typename Derived::Scalar;
  const Vector<Scalar> p = softmax(z);
  const Scalar eps(kProbFloor);
  LossGrad<Scalar> out{Scalar(0), Vector<Scalar>::Zero(z.size())};
  for (int c : t.lineage(t.leaf_node(truth))) {
    const int parent = t.parent(c);
    const Scalar lambda(w.lambda[c]);
    const Scalar m = detail::subtree_mass(t, p, c);
    const Scalar parent_mass = detail::subtree_mass(t, p, parent);
    const Scalar cond = m / std::max(parent_mass, eps);
    out.loss -= lambda * std::log(std::max(cond, eps));
    if (cond < eps) continue;
    detail::add_dlog_mass(t, p, c, m, -lambda, out.grad);
    if (parent_mass >= eps) detail::add_dlog_mass(t, p, parent, parent_mass, lambda, out.grad);
  }
  return out;
}

template <typename Derived>
Vector<typename Derived::Scalar> hxe_grad(const Taxonomy& t, const HxeWeights& w,
                                          const Eigen::MatrixBase<Derived>& z, int truth) {
  return hxe_loss_and_grad(t, w, z, truth).grad;
}

template <typename Derived>
LossGrad<typename Derived::Scalar> cross_entropy_loss_and_grad(const Eigen::MatrixBase<Derived>& z, int truth) {
  using Scalar = typename Derived::Scalar;
  Vector<Scalar> p = softmax(z);
  LossGrad<Scalar> out{cross_entropy(p, truth), std::move(p)};
  if (out.grad[truth] >= Scalar(kProbFloor))
    out.grad[truth] -= Scalar(1);
  else
    out.grad.setZero();
  return out;
}

// ---------------------------------------------------------------------------
// Conditional-probability head

/// Per-sibling-group softmax of node logits. Input is in non-root order;
/// output is indexed by node (root entry 1), like conditionals_from_class_probs.
template <typename Derived>
Vector<typename Derived::Scalar> conditional_head_probs(const Taxonomy& t, const Eigen::MatrixBase<Derived>& z) {
  using Scalar = typename Derived::Scalar;
  const auto n = static_cast<Eigen::Index>(t.node_count());
  if (z.size() != n - 1) throw Error("conditional head expects one logit per non-root node");
  Vector<Scalar> cond(n);
  cond[t.root()] = Scalar(1);
  for (Eigen::Index v = 0; v < n; ++v) {
    const auto& kids = t.children(static_cast<int>(v));
    if (kids.empty()) continue;
    Scalar top = z[t.non_root_position(kids.front())];
    for (int c : kids) top = std::max(top, Scalar(z[t.non_root_position(c)]));
    Scalar total(0);
    for (int c : kids) total += (cond[c] = std::exp(z[t.non_root_position(c)] - top));
    for (int c : kids) cond[c] /= total;
  }
  return cond;
}

template <typename Derived>
LossGrad<typename Derived::Scalar> conditional_head_loss_and_grad(const Taxonomy& t, const HxeWeights& w,
                                                                  const Eigen::MatrixBase<Derived>& z,
                                                                  int truth) {
  using Scalar = typename Derived::Scalar;
  const Vector<Scalar> cond = conditional_head_probs(t, z);
  LossGrad<Scalar> out{Scalar(0), Vector<Scalar>::Zero(z.size())};
  for (int c : t.lineage(t.leaf_node(truth))) {
    const Scalar lambda(w.lambda[c]);
    out.loss -= lambda * std::log(detail::floored(cond[c]));
    if (cond[c] < Scalar(kProbFloor)) continue;
    for (int s : t.children(t.parent(c))) out.grad[t.non_root_position(s)] += lambda * cond[s];
    out.grad[t.non_root_position(c)] -= lambda;
  }
  return out;
}

template <typename Derived>
typename Derived::Scalar conditional_head_loss(const Taxonomy& t, const HxeWeights& w,
                                               const Eigen::MatrixBase<Derived>& z, int truth) {
  return conditional_head_loss_and_grad(t, w, z, truth).loss;
}

// ---------------------------------------------------------------------------
// Soft labels

/// Row C holds the soft target for ground truth C:
/// y_A(C) proportional to exp(-beta * d(A, C)), d = LCA height / tree height.
struct SoftLabelMatrix {
  double beta = 0.0;
  Eigen::MatrixXd rows;
};

SoftLabelMatrix soft_label_matrix(const Taxonomy& t, double beta);

/// CSV, one row per ground-truth class in class order, with a header of class ids.
std::string soft_label_csv(const Taxonomy& t, const SoftLabelMatrix& m);

template <typename Derived>
typename Derived::Scalar soft_label_loss(const SoftLabelMatrix& m, const Eigen::MatrixBase<Derived>& p, int truth) {
  using Scalar = typename Derived::Scalar;
  Scalar loss(0);
  for (Eigen::Index a = 0; a < p.size(); ++a) loss -= Scalar(m.rows(truth, a)) * std::log(detail::floored(p[a]));
  return loss;
}

template <typename Derived>
LossGrad<typename Derived::Scalar> soft_loss_and_grad(const SoftLabelMatrix& m, const Eigen::MatrixBase<Derived>& z,
                                                      int truth) {
  using Scalar = typename Derived::Scalar;
  const Vector<Scalar> p = softmax(z);
  LossGrad<Scalar> out{soft_label_loss(m, p, truth), Vector<Scalar>::Zero(z.size())};
  Scalar active_mass(0);
  for (Eigen::Index a = 0; a < p.size(); ++a) {
    if (p[a] < Scalar(kProbFloor)) continue;
    const Scalar y(m.rows(truth, a));
    active_mass += y;
    out.grad[a] -= y;
  }
  out.grad += active_mass * p;
  return out;
}

template <typename Derived>
Vector<typename Derived::Scalar> soft_grad(const SoftLabelMatrix& m, const Eigen::MatrixBase<Derived>& z, int truth) {
  return soft_loss_and_grad(m, z, truth).grad;
}

}  // namespace hiercls
