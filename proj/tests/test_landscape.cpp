#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "reachlab/errors.hpp"
#include "reachlab/landscape.hpp"

using namespace reachlab;

namespace {

Vector vec(std::initializer_list<double> xs) {
  Vector v(static_cast<Eigen::Index>(xs.size()));
  Eigen::Index i = 0;
  for (double x : xs) v(i++) = x;
  return v;
}

std::vector<PotentialPtr> builtins() {
  return {
      std::make_shared<ZeroPotential>(3),
      std::make_shared<Quadratic>(vec({1.0, 2.5, 0.3})),
      std::make_shared<DoubleWell1D>(),
      std::make_shared<Channel2D>(Polynomial({0.0, 0.2, 0.5, 0.0, 0.1}), Polynomial({1.0, 0.3, 0.5}), -3, 3),
      std::make_shared<ScaledPotential>(std::make_shared<DoubleWell1D>(), 2.5),
  };
}

Vector fd_grad(const Potential& p, const Vector& w, double h = 1e-6) {
  Vector g(w.size());
  for (Eigen::Index i = 0; i < w.size(); ++i) {
    Vector a = w, b = w;
    a(i) += h;
    b(i) -= h;
    g(i) = (p.value(a) - p.value(b)) / (2 * h);
  }
  return g;
}

Matrix fd_hessian(const Potential& p, const Vector& w, double h = 1e-5) {
  Matrix H(w.size(), w.size());
  for (Eigen::Index i = 0; i < w.size(); ++i) {
    Vector a = w, b = w;
    a(i) += h;
    b(i) -= h;
    H.col(i) = (p.grad(a) - p.grad(b)) / (2 * h);
  }
  return H;
}

Vector fd_laplacian_grad(const Potential& p, const Vector& w, double h = 1e-5) {
  Vector g(w.size());
  for (Eigen::Index i = 0; i < w.size(); ++i) {
    Vector a = w, b = w;
    a(i) += h;
    b(i) -= h;
    g(i) = (p.hessian(a).trace() - p.hessian(b).trace()) / (2 * h);
  }
  return g;
}

}  // namespace

TEST_CASE("drift examples") {
  Quadratic q(vec({2.0}));
  CHECK(drift(q, vec({1.0}))(0) == -2.0);
  DoubleWell1D dw;
  CHECK(drift(dw, vec({0.0}))(0) == 0.0);
  CHECK(drift(dw, vec({0.5}))(0) == doctest::Approx(0.375).epsilon(1e-15));
}

TEST_CASE("path potential examples") {
  Quadratic q(vec({2.0}));
  CHECK(path_potential(q, vec({0.0}), 0.1) == doctest::Approx(-0.2).epsilon(1e-14));
  CHECK(path_potential(q, vec({1.0}), 0.1) == doctest::Approx(1.8).epsilon(1e-14));
  DoubleWell1D dw;
  CHECK(path_potential(dw, vec({1.0}), 0.1) == doctest::Approx(-0.2).epsilon(1e-14));
}

TEST_CASE("effective potential examples") {
  Quadratic q1(vec({2.0}));
  CHECK(effective_potential(q1, vec({1.0}), 0.1) == doctest::Approx(1.0 + 0.1 * std::log(2.0)).epsilon(1e-14));
  Quadratic q2(vec({2.0, 3.0}));
  CHECK(effective_potential(q2, vec({0.0, 0.0}), 0.1) ==
        doctest::Approx(0.1 * (std::log(2.0) + std::log(3.0))).epsilon(1e-14));
  DoubleWell1D dw;
  CHECK(effective_potential(dw, vec({0.0}), 0.1) == 0.25);
  CHECK(effective_potential(q1, vec({1.0}), 0.1, kDefaultEigFloor, CurvatureSign::Minus) ==
        doctest::Approx(1.0 - 0.1 * std::log(2.0)).epsilon(1e-14));
}

TEST_CASE("analytic derivatives agree with finite differences at random points") {
  std::mt19937_64 gen(99);
  std::uniform_real_distribution<double> unif(-2.0, 2.0);
  for (const auto& p : builtins()) {
    CAPTURE(p->name());
    for (int trial = 0; trial < 100; ++trial) {
      Vector w(static_cast<Eigen::Index>(p->dim()));
      for (Eigen::Index i = 0; i < w.size(); ++i) w(i) = unif(gen);
      const Vector g = p->grad(w);
      const Matrix H = p->hessian(w);
      const double gs = 1.0 + g.norm();
      const double hs = 1.0 + H.norm();
      CHECK((g - fd_grad(*p, w)).norm() <= 1e-7 * gs);
      CHECK((H - fd_hessian(*p, w)).norm() <= 1e-7 * hs);
      CHECK((H - H.transpose()).norm() <= 1e-14 * hs);
      CHECK((p->laplacian_grad(w) - fd_laplacian_grad(*p, w)).norm() <= 1e-6 * hs);
    }
  }
}

TEST_CASE("drift is the exact negative gradient") {
  std::mt19937_64 gen(5);
  std::normal_distribution<double> nd;
  for (const auto& p : builtins()) {
    for (int trial = 0; trial < 20; ++trial) {
      Vector w(static_cast<Eigen::Index>(p->dim()));
      for (Eigen::Index i = 0; i < w.size(); ++i) w(i) = nd(gen);
      const Vector g = p->grad(w);
      const Vector f = drift(*p, w);
      for (Eigen::Index i = 0; i < w.size(); ++i) CHECK(f(i) == -g(i));
    }
  }
}

TEST_CASE("drift_batch matches per-run gradients") {
  std::mt19937_64 gen(6);
  std::normal_distribution<double> nd;
  const std::size_t runs = 13;
  for (const auto& p : builtins()) {
    CAPTURE(p->name());
    const std::size_t d = p->dim();
    std::vector<double> states(d * runs), out(d * runs);
    for (auto& x : states) x = nd(gen);
    p->drift_batch(states, runs, out);
    for (std::size_t i = 0; i < runs; ++i) {
      Vector w(static_cast<Eigen::Index>(d));
      for (std::size_t j = 0; j < d; ++j) w(static_cast<Eigen::Index>(j)) = states[j * runs + i];
      const Vector g = p->grad(w);
      for (std::size_t j = 0; j < d; ++j)
        CHECK(out[j * runs + i] == doctest::Approx(-g(static_cast<Eigen::Index>(j))).epsilon(1e-13));
    }
  }
}

TEST_CASE("path potential at a strict minimum is -D trace H") {
  Quadratic q(vec({1.0, 4.0}));
  for (double D : {0.01, 0.1, 1.0}) CHECK(path_potential(q, vec({0.0, 0.0}), D) == doctest::Approx(-5.0 * D));
  DoubleWell1D dw;
  CHECK(path_potential(dw, vec({-1.0}), 0.3) == doctest::Approx(-0.6));
}

TEST_CASE("path potential gradient matches finite differences") {
  Channel2D ch(Polynomial({0.0, 0.0, 0.5, 0.1}), Polynomial({1.0, 0.0, 0.5}), -3, 3);
  const Vector w = vec({0.4, -0.7});
  const double D = 0.2, h = 1e-6;
  Vector fd(2);
  for (int i = 0; i < 2; ++i) {
    Vector a = w, b = w;
    a(i) += h;
    b(i) -= h;
    fd(i) = (path_potential(ch, a, D) - path_potential(ch, b, D)) / (2 * h);
  }
  CHECK((path_potential_grad(ch, w, D) - fd).norm() < 1e-7);
}

TEST_CASE("effective potential monotonicity in D") {
  Quadratic stiff(vec({2.0, 5.0}));
  Quadratic soft(vec({0.5, 0.2}));
  const Vector w = vec({0.3, -0.1});
  double prev_stiff = -1e300, prev_soft = 1e300;
  for (double D : {0.0, 0.05, 0.1, 0.5, 1.0}) {
    const double s = effective_potential(stiff, w, D);
    const double t = effective_potential(soft, w, D);
    CHECK(s >= prev_stiff);
    CHECK(t <= prev_soft);
    prev_stiff = s;
    prev_soft = t;
  }
}

TEST_CASE("positive determinant floor is relative") {
  Matrix h = Matrix::Zero(3, 3);
  h.diagonal() << 4.0, 1e-9, -2.0;
  CHECK(log_positive_determinant(h, 1e-6) == doctest::Approx(std::log(4.0)));
  CHECK(log_positive_determinant(Matrix::Zero(2, 2), 1e-6) == 0.0);
}

TEST_CASE("make_potential builds and rejects") {
  auto q = make_potential({{"name", "quadratic"}, {"a", {1.0, 2.0}}});
  CHECK(q->dim() == 2);
  CHECK(q->value(vec({1.0, 1.0})) == doctest::Approx(1.5));
  auto s = make_potential({{"name", "scaled"}, {"scale", 3.0}, {"inner", {{"name", "double_well"}}}});
  CHECK(s->value(vec({0.0})) == doctest::Approx(0.75));
  CHECK_THROWS_AS(make_potential({{"name", "nope"}}), ContractViolation);
  CHECK_THROWS_AS(make_potential({{"name", "double_well"}, {"extra", 1}}), ContractViolation);
  CHECK_THROWS_AS(q->value(vec({1.0})), ContractViolation);
}
