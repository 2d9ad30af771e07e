#include <doctest.h>

#include "properties.hpp"

using namespace mibt;

namespace {

Vector vec(std::initializer_list<double> xs) {
  Vector v(static_cast<Eigen::Index>(xs.size()));
  Eigen::Index i = 0;
  for (double x : xs) v[i++] = x;
  return v;
}

}  // namespace

TEST_CASE("flip map examples") {
  CHECK(apply_perturbation(vec({0, 1, 0}), vec({1, 0, 0})) == vec({1, 1, 0}));
  CHECK(apply_perturbation(vec({0, 1, 0}), vec({0, 1, 0})) == vec({0, 0, 0}));
  CHECK(apply_perturbation(vec({0, 1, 0}), vec({0, 0, 0})) == vec({0, 1, 0}));
  CHECK(apply_perturbation(vec({0, 1}), vec({0.25, 0.25})) == vec({0.25, 0.75}));
}

TEST_CASE("cw loss examples") {
  // true class first, then six competitors
  const Vector probs = vec({0.8571, 0.0133, 0.0039, 0.0215, 0.0361, 0.0130, 0.0550});
  CHECK(cw_loss(probs, 0) == doctest::Approx(0.8021).epsilon(1e-12));
  CHECK(best_wrong_class(probs, 0) == 6);
  CHECK(cw_loss(Vector::Constant(4, 0.25), 2) == 0.0);
  CHECK(cw_loss(vec({0.2, 0.8}), 0) == doctest::Approx(-0.6));
  CHECK(cw_loss(vec({0.6, 0.4}), 0) == doctest::Approx(0.2));
  CHECK(best_wrong_class(vec({0.2, 0.4, 0.4}), 0) == 1);
}

TEST_CASE("normalized step examples") {
  CHECK(pgd_step(vec({1, 2}), vec({0, 0}), 1.0) == vec({1, 2}));
  const Vector s = pgd_step(vec({0, 0, 0}), vec({3, 4, 0}), 1.0);
  CHECK(s[0] == doctest::Approx(0.6));
  CHECK(s[1] == doctest::Approx(0.8));
  CHECK(s[2] == 0.0);
}

TEST_CASE("projection examples") {
  const Projection<double> a = project_l0_box_with_threshold(vec({0.9, 0.5, 0.3}), 1, FeasibleMask::Constant(3, true));
  CHECK(a.mu == 0.5);
  CHECK(a.delta[0] == doctest::Approx(0.4));
  CHECK(a.delta[1] == 0.0);
  CHECK(a.delta[2] == 0.0);
  CHECK(project_l0_box(vec({1.4, 0.2}), 1) == vec({1.0, 0.0}));
  CHECK(project_l0_box(vec({1.2, -0.1}), 2) == vec({1.0, 0.0}));
  // a tie at the threshold leaves nothing above it
  const Projection<double> tie = project_l0_box_with_threshold(vec({0.7, 0.7, 0.1}), 1, FeasibleMask::Constant(3, true));
  CHECK(tie.mu == 0.7);
  CHECK(tie.delta.isZero());
  FeasibleMask mask(3);
  mask << true, false, true;
  CHECK(project_l0_box(vec({0.2, 0.9, 0.1}), 1, mask) == vec({0.1, 0.0, 0.0}));
}

TEST_CASE("discretize and budget examples") {
  CHECK(discretize(vec({0.3, 0, 0.7})) == vec({1, 0, 1}));
  CHECK(discretize(vec({0, 0})) == vec({0, 0}));
  CHECK(update_budget(10.0, true, 0.1) == doctest::Approx(9.0));
  CHECK(update_budget(10.0, true, 0.5) == doctest::Approx(5.0));
  CHECK(update_budget(10.0, false, 0.1) == doctest::Approx(11.0));
  CHECK(update_budget(1.0, true, 0.1) == 1.0);
  CHECK(integer_budget(2.5) == 3);
  CHECK(integer_budget(0.2) == 1);
  CHECK(cosine_anneal(2.0, 0, 10) == 2.0);
  CHECK(cosine_anneal(2.0, 5, 10) == doctest::Approx(1.0));
  CHECK(cosine_anneal(2.0, 10, 10) == doctest::Approx(0.0));
}

TEST_CASE("single precision instantiation") {
  Eigen::VectorXf dt(3);
  dt << 0.9f, 0.5f, 0.3f;
  const Eigen::VectorXf p = project_l0_box(dt, 1);
  CHECK(p[0] == doctest::Approx(0.4f));
  CHECK(update_budget(10.0f, true, 0.5f) == doctest::Approx(5.0f));
}

TEST_CASE("randomized algebra properties, 10000 cases each") {
  constexpr int n = 10000;
  CHECK(testing::involution_violations(n, 1) == 0);
  CHECK(testing::projection_violations(n, 2) == 0);
  CHECK(testing::budget_update_violations(n, 3) == 0);
  CHECK(testing::cw_sign_violations(n, 4) == 0);
  CHECK(testing::discretize_violations(n, 5) == 0);
  CHECK(testing::anneal_violations(n, 6) == 0);
  CHECK(testing::step_norm_violations(n, 7) == 0);
}
