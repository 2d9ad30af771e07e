#pragma once

// Perturbation algebra for single-node topology attacks. Free functions over
// Eigen expressions; every routine is templated on the scalar.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <vector>

#include "mibtack/types.hpp"

namespace mibt {

/// Per-coordinate feasibility of a flip; false entries are never perturbed.
using FeasibleMask = Eigen::Array<bool, Eigen::Dynamic, 1>;

/// a' = a + (1 - 2a) * delta. With binary a and delta this flips the selected
/// memberships; fractional delta interpolates towards the flipped state.
template <typename DerivedA, typename DerivedD>
auto apply_perturbation(const Eigen::MatrixBase<DerivedA>& a, const Eigen::MatrixBase<DerivedD>& delta) {
  using Scalar = typename DerivedA::Scalar;
  DenseVector<Scalar> out =
      (a.array() + (Scalar(1) - Scalar(2) * a.array()) * delta.array()).matrix();
  return out;
}

/// Highest-probability class other than `y`; ties go to the lower index.
template <typename Derived>
ClassId best_wrong_class(const Eigen::MatrixBase<Derived>& probs, ClassId y) {
  ClassId best = -1;
  for (Eigen::Index c = 0; c < probs.size(); ++c) {
    if (c == y) continue;
    if (best < 0 || probs[c] > probs[best]) best = static_cast<ClassId>(c);
  }
  return best;
}

/// Margin of the true class over the strongest competitor. Negative iff the
/// prediction differs from y; exact ties give 0.
template <typename Derived>
typename Derived::Scalar cw_loss(const Eigen::MatrixBase<Derived>& probs, ClassId y) {
  const ClassId c = best_wrong_class(probs, y);
  if (c < 0) return typename Derived::Scalar(0);
  return probs[y] - probs[c];
}

/// Normalized gradient step delta + alpha * g / |g|_2. Pass the descent
/// direction as `direction`; a zero direction leaves delta unchanged.
template <typename DerivedD, typename DerivedG>
auto pgd_step(const Eigen::MatrixBase<DerivedD>& delta, const Eigen::MatrixBase<DerivedG>& direction,
              typename DerivedD::Scalar alpha) {
  using Scalar = typename DerivedD::Scalar;
  DenseVector<Scalar> out = delta;
  const Scalar norm = direction.norm();
  if (norm > Scalar(0)) out += (alpha / norm) * direction;
  return out;
}

template <typename Scalar>
struct Projection {
  DenseVector<Scalar> delta;
  Scalar mu = Scalar(0);
};

/// Projection onto {|delta|_0 <= budget} intersected with the unit box.
/// mu is the (budget+1)-th largest feasible entry (0 when there are at most
/// `budget` feasible entries); the result is clip(delta_tilde - mu, 0, 1) with
/// infeasible coordinates zeroed. Rank ties go to the lower index.
template <typename Derived>
Projection<typename Derived::Scalar> project_l0_box_with_threshold(const Eigen::MatrixBase<Derived>& delta_tilde,
                                                                   Eigen::Index budget, const FeasibleMask& feasible) {
  using Scalar = typename Derived::Scalar;
  const Eigen::Index n = delta_tilde.size();
  std::vector<Eigen::Index> order;
  order.reserve(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    if (feasible[i]) order.push_back(i);
  }
  Projection<Scalar> out;
  out.delta = DenseVector<Scalar>::Zero(n);
  const auto k = static_cast<std::size_t>(std::max<Eigen::Index>(budget, 0));
  if (order.size() > k) {
    auto by_rank = [&](Eigen::Index a, Eigen::Index b) {
      return delta_tilde[a] > delta_tilde[b] || (delta_tilde[a] == delta_tilde[b] && a < b);
    };
    std::nth_element(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(), by_rank);
    out.mu = delta_tilde[order[k]];
    order.resize(k);
  }
  for (const Eigen::Index i : order) {
    out.delta[i] = std::clamp(delta_tilde[i] - out.mu, Scalar(0), Scalar(1));
  }
  return out;
}

template <typename Derived>
auto project_l0_box(const Eigen::MatrixBase<Derived>& delta_tilde, Eigen::Index budget, const FeasibleMask& feasible) {
  return project_l0_box_with_threshold(delta_tilde, budget, feasible).delta;
}

template <typename Derived>
auto project_l0_box(const Eigen::MatrixBase<Derived>& delta_tilde, Eigen::Index budget) {
  return project_l0_box(delta_tilde, budget, FeasibleMask::Constant(delta_tilde.size(), true));
}

/// Every strictly positive entry becomes 1.
template <typename Derived>
auto discretize(const Eigen::MatrixBase<Derived>& delta) {
  using Scalar = typename Derived::Scalar;
  DenseVector<Scalar> out = (delta.array() > Scalar(0)).template cast<Scalar>().matrix();
  return out;
}

template <typename Derived>
Eigen::Index nonzero_count(const Eigen::MatrixBase<Derived>& v) {
  return (v.array() != typename Derived::Scalar(0)).count();
}

/// Shrinks the budget after a success and grows it after a failure, by at
/// least one unit or a relative step of beta. Never drops below 1.
template <typename Scalar>
Scalar update_budget(Scalar budget, bool success, Scalar beta) {
  const Scalar next = success ? std::min(budget - Scalar(1), budget * (Scalar(1) - beta))
                              : std::max(budget + Scalar(1), budget * (Scalar(1) + beta));
  return std::max(next, Scalar(1));
}

/// Integer rank used by the projection for a real-valued budget.
template <typename Scalar>
Eigen::Index integer_budget(Scalar budget) {
  return std::max<Eigen::Index>(1, static_cast<Eigen::Index>(std::llround(budget)));
}

template <typename Scalar>
Scalar cosine_anneal(Scalar step0, Eigen::Index t, Eigen::Index period) {
  if (period <= 0) return Scalar(0);
  const Scalar frac = static_cast<Scalar>(std::clamp<Eigen::Index>(t, 0, period)) / static_cast<Scalar>(period);
  return step0 * Scalar(0.5) * (Scalar(1) + std::cos(std::numbers::pi_v<Scalar> * frac));
}

}  // namespace mibt
