#include <doctest.h>

#include <cmath>
#include <limits>

#include "reachlab/complexity.hpp"
#include "reachlab/errors.hpp"
#include "reachlab/rng.hpp"
#include "reachlab/stats.hpp"

using namespace reachlab;

namespace {

ModelSpec logistic(std::size_t p, int K, double gamma = 0.0) {
  ModelSpec m;
  m.input_dim = p;
  m.classes = K;
  m.weight_decay = gamma;
  return m;
}

Matrix diag(std::initializer_list<double> xs) {
  Vector v(static_cast<Eigen::Index>(xs.size()));
  Eigen::Index i = 0;
  for (double x : xs) v(i++) = x;
  return v.asDiagonal();
}

TrainerConfig trainer() {
  TrainerConfig c;
  c.step = 0.5;
  c.max_iters = 50000;
  c.grad_tol = 1e-9;
  return c;
}

// Monte-Carlo estimate of KL(N(m, S) || N(0, lambda2 I)) from log-density ratios.
double mc_kl(const Vector& m, const Matrix& S, double lambda2, std::size_t n, std::uint64_t seed) {
  const Eigen::Index k = m.size();
  Eigen::LLT<Matrix> llt(S);
  const Matrix L = llt.matrixL();
  const Matrix Sinv = llt.solve(Matrix::Identity(k, k));
  const double logdet_s = 2.0 * L.diagonal().array().log().sum();
  RandomStream rng(seed, 0);
  double acc = 0.0;
  Vector z(k);
  for (std::size_t i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < k; ++j) z(j) = rng.next_normal();
    const Vector x = m + L * z;
    const double log_q = -0.5 * (x - m).dot(Sinv * (x - m)) - 0.5 * logdet_s;
    const double log_p = -0.5 * x.squaredNorm() / lambda2 - 0.5 * static_cast<double>(k) * std::log(lambda2);
    acc += log_q - log_p;
  }
  return acc / static_cast<double>(n);
}

}  // namespace

TEST_CASE("gaussian KL closed form examples") {
  CHECK(gaussian_kl(GaussianPosterior(Vector::Zero(3), 2.5 * Matrix::Identity(3, 3)), 2.5) == 0.0);
  CHECK(gaussian_kl(GaussianPosterior(Vector::Ones(1), Matrix::Identity(1, 1)), 1.0) ==
        doctest::Approx(0.5).epsilon(1e-15));
  const double expect = 0.5 * (2.0 / 4.0 + 2.0 * std::log(4.0) - 2.0);
  CHECK(gaussian_kl(GaussianPosterior(Vector::Zero(2), Matrix::Identity(2, 2)), 4.0) ==
        doctest::Approx(expect).epsilon(1e-14));
  CHECK(expect == doctest::Approx(0.6363).epsilon(1e-4));
}

TEST_CASE("gaussian KL agrees with a Monte-Carlo oracle") {
  const std::size_t n = 1000000;
  SUBCASE("isotropic example") {
    const double mc = mc_kl(Vector::Zero(2), Matrix::Identity(2, 2), 4.0, n, 1);
    const double exact = gaussian_kl(GaussianPosterior(Vector::Zero(2), Matrix::Identity(2, 2)), 4.0);
    // Log-ratio variance is about 0.2 here; 1e-3 is several standard errors.
    CHECK(std::abs(mc - exact) < 3e-3);
  }
  SUBCASE("correlated posterior with a mean") {
    Matrix S(3, 3);
    S << 0.5, 0.1, 0.0, 0.1, 0.3, -0.05, 0.0, -0.05, 0.8;
    Vector m(3);
    m << 0.3, -0.2, 0.1;
    const double mc = mc_kl(m, S, 0.7, n, 2);
    const double exact = gaussian_kl(GaussianPosterior(m, S), 0.7);
    CHECK(std::abs(mc - exact) < 5e-3);
  }
}

TEST_CASE("gaussian KL is nonnegative and infinite when singular") {
  RandomStream rng(3, 0);
  for (int trial = 0; trial < 50; ++trial) {
    Matrix A(4, 4);
    for (Eigen::Index i = 0; i < 16; ++i) A.data()[i] = rng.next_normal();
    const Matrix S = A * A.transpose() + 0.01 * Matrix::Identity(4, 4);
    Vector m(4);
    for (Eigen::Index i = 0; i < 4; ++i) m(i) = rng.next_normal();
    CHECK(gaussian_kl(GaussianPosterior(m, S), 0.1 + rng.next_uniform()) > 0.0);
  }
  std::string why;
  const double kl = gaussian_kl(GaussianPosterior(Vector::Zero(2), diag({1.0, 0.0})), 1.0, &why);
  CHECK(kl == std::numeric_limits<double>::infinity());
  CHECK(!why.empty());
  CHECK_THROWS_AS(GaussianPosterior(Vector::Zero(2), diag({1.0, -1.0})), ContractViolation);
}

TEST_CASE("binary logistic Fisher on one sample at zero weights") {
  Dataset d;
  d.classes = 2;
  d.inputs = RowMatrix::Ones(1, 1);
  d.labels = {1};
  Task t(d, logistic(1, 2));
  const FisherMatrix F = fisher(t, WeightVector::Zero(4));
  // Every parameter sees input 1 (weight or bias), so each entry is +-p(1-p).
  for (Eigen::Index i = 0; i < 4; ++i) CHECK(F.matrix(i, i) == doctest::Approx(0.25).epsilon(1e-15));
  CHECK(F.matrix.cwiseAbs().maxCoeff() == doctest::Approx(0.25));
}

TEST_CASE("Fisher vanishes where predictions are deterministic") {
  auto d = generate_blobs(2, 40, 2, 10.0, 1);
  Task t(d, logistic(2, 2, 0.01));
  auto tr = train_minimizer(t, 0.01, trainer());
  const FisherMatrix F = fisher(t, 100.0 * tr.w);
  CHECK(F.matrix.cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("Fisher is the Hessian of the prediction KL") {
  auto d = generate_blobs(3, 30, 2, 3.0, 2);
  Task t(d, logistic(2, 3, 0.05));
  auto w0 = train_minimizer(t, 0.05, trainer()).w;
  const Matrix F = fisher(t, w0).matrix;
  const double h = 1e-3;
  const Eigen::Index k = w0.size();
  Matrix H(k, k);
  for (Eigen::Index i = 0; i < k; ++i) {
    for (Eigen::Index j = 0; j < k; ++j) {
      auto at = [&](double si, double sj) {
        WeightVector w = w0;
        w(i) += si * h;
        w(j) += sj * h;
        return mean_prediction_kl(t, w0, w);
      };
      H(i, j) = (at(1, 1) - at(1, -1) - at(-1, 1) + at(-1, -1)) / (4 * h * h);
    }
  }
  CHECK((H - F).cwiseAbs().maxCoeff() < 1e-4);
  CHECK(symmetric_eigenvalues(F).minCoeff() >= -1e-12);
}

TEST_CASE("second-order KL expansion carries the factor one half") {
  auto d = generate_blobs(3, 45, 3, 3.0, 4);
  ModelSpec m = logistic(3, 3, 0.05);
  m.family = ModelFamily::Mlp;
  m.hidden = 4;
  Task t(d, m);
  const WeightVector w = initial_weights(m, 9);
  const Matrix F = fisher(t, w).matrix;
  RandomStream rng(5, 0);
  for (int trial = 0; trial < 10; ++trial) {
    Vector delta(w.size());
    for (Eigen::Index i = 0; i < delta.size(); ++i) delta(i) = rng.next_normal();
    delta.normalize();
    for (double eps : {1e-2, 1e-3}) {
      const double kl = mean_prediction_kl(t, w, w + eps * delta);
      const double quad = 0.5 * eps * eps * delta.dot(F * delta);
      if (eps == 1e-3) CHECK(kl / quad == doctest::Approx(1.0).epsilon(0.05));
    }
  }
}

TEST_CASE("Fisher trace falls as blobs separate at a fixed trained w") {
  auto base = generate_blobs(2, 60, 2, 4.0, 7);
  auto w = train_minimizer(Task(base, logistic(2, 2, 0.05)), 0.05, trainer()).w;
  std::vector<double> seps{2.0, 4.0, 8.0}, traces;
  for (double s : seps) traces.push_back(fisher(Task(generate_blobs(2, 60, 2, s, 7), logistic(2, 2)), w).trace());
  CHECK(stats::spearman(seps, traces) == doctest::Approx(-1.0));
}

TEST_CASE("optimal posterior covariance examples") {
  const double lambda2 = 1.7;
  CHECK((optimal_sigma(Matrix::Zero(3, 3), 0.4, lambda2) - lambda2 * Matrix::Identity(3, 3)).norm() < 1e-10);
  const double h = 3.0;
  CHECK((optimal_sigma(h * Matrix::Identity(2, 2), 2.0, 1.0) - Matrix::Identity(2, 2) / (h + 1.0)).norm() < 1e-10);
  CHECK((optimal_sigma(diag({1.0, 3.0}), 1.0, 1.0) - diag({1.0 / 3.0, 1.0 / 7.0})).norm() < 1e-10);
}

TEST_CASE("complexity report examples") {
  CHECK(complexity_report(std::log(2.0), Vector::Zero(2), Matrix::Zero(2, 2), 0.3, 1.0).total ==
        doctest::Approx(std::log(2.0)).epsilon(1e-12));
  const auto r = complexity_report(0.5, Vector::Ones(1), 0.5 * Matrix::Identity(1, 1), 1.0, 1.0);
  CHECK(std::abs(r.total - (0.5 + 0.5 * (1.0 + std::log(2.0)))) < 1e-10);
  CHECK(r.total == doctest::Approx(1.3466).epsilon(1e-4));
  CHECK(r.norm_term == 1.0);
  CHECK(r.logdet_term == doctest::Approx(std::log(2.0)).epsilon(1e-15));
}

TEST_CASE("complexity grows with the weight norm and logdet stays nonnegative") {
  RandomStream rng(8, 0);
  Matrix A(3, 3);
  for (Eigen::Index i = 0; i < 9; ++i) A.data()[i] = rng.next_normal();
  const Matrix F = A * A.transpose();
  Vector dir(3);
  dir << 0.2, -0.5, 0.7;
  double prev = -1e300;
  for (double s : {0.0, 0.5, 1.0, 2.0, 4.0}) {
    const auto r = complexity_report(0.3, s * dir, F, 0.1, 0.5);
    CHECK(r.total >= prev);
    CHECK(r.logdet_term >= 0.0);
    prev = r.total;
  }
  auto d = generate_blobs(3, 30, 2, 2.0, 1);
  Task t(d, logistic(2, 3));
  for (std::uint64_t s = 0; s < 5; ++s) {
    WeightVector w(9);
    RandomStream g(s, 1);
    for (Eigen::Index i = 0; i < 9; ++i) w(i) = g.next_normal();
    CHECK(c_beta(t, w, 0.02, 1.0).logdet_term >= 0.0);
  }
}

TEST_CASE("weight decay convention") {
  CHECK(complexity_weight_decay(logistic(2, 2, 0.03), 0.5, 2.0) == 0.03);
  CHECK(complexity_weight_decay(logistic(2, 2), 0.5, 2.0) == 0.125);
}

TEST_CASE("trainer reaches a stationary point") {
  auto d = generate_blobs(3, 60, 2, 3.0, 5);
  Task t(d, logistic(2, 3, 0.01));
  auto tr = train_minimizer(t, 0.01, trainer());
  CHECK(tr.converged);
  CHECK(grad_loss(t, tr.w).norm() <= 1e-8);
}

TEST_CASE("structure curve endpoints and monotonicity") {
  SUBCASE("large beta forgets the data") {
    auto d = generate_blobs(3, 60, 2, 3.0, 2);
    Task t(d, logistic(2, 3));
    const double lambda2 = 1e-4;
    auto curve = structure_curve(t, {1e6, 1e4}, lambda2, trainer());
    const auto& p = curve.points.front();
    CHECK(p.converged);
    CHECK(p.point_loss == doctest::Approx(std::log(3.0)).epsilon(1e-6));
    CHECK(p.kl_nats < 1e-3);
    // The posterior keeps prior width lambda2, which costs lambda2 tr F(0) / 2.
    const double spread = 0.5 * lambda2 * fisher(t, WeightVector::Zero(9)).trace();
    CHECK(p.expected_loss == doctest::Approx(std::log(3.0) + spread).epsilon(1e-6));
    CHECK(std::abs(p.expected_loss - std::log(3.0)) < 1e-3);
  }
  SUBCASE("separable data at small beta") {
    auto d = generate_blobs(2, 60, 2, 10.0, 3);
    Task t(d, logistic(2, 2));
    auto curve = structure_curve(t, {1.0, 0.1, 0.01, 0.001}, 1.0, trainer());
    CHECK(curve.is_monotone());
    CHECK(curve.points.back().expected_loss < 0.05);
  }
}

TEST_CASE("label noise lifts the structure curve") {
  auto clean = generate_blobs(3, 90, 2, 3.0, 2);
  auto noisy = corrupt_labels(clean, 0.5, 4);
  const std::vector<double> grid{1e4, 100.0, 1.0, 0.1, 0.01, 0.001};
  auto c0 = structure_curve(Task(clean, logistic(2, 3)), grid, 0.01, trainer());
  auto c1 = structure_curve(Task(noisy, logistic(2, 3)), grid, 0.01, trainer());
  CHECK(c0.is_monotone());
  CHECK(c1.is_monotone());
  int compared = 0;
  for (const auto& p : c1.points) {
    if (!p.converged) continue;
    const auto l0 = c0.loss_at(p.kl_nats);
    if (!l0 || p.kl_nats < 1e-3) continue;
    CHECK(p.expected_loss > *l0);
    ++compared;
  }
  CHECK(compared >= 3);
}

TEST_CASE("task distance properties") {
  const ModelSpec m = logistic(4, 4, 0.01);
  const double beta = 2.0 * 1.0 * 0.01;
  auto full = generate_blobs(4, 128, 4, 4.0, 3);

  SUBCASE("self distance vanishes") {
    auto dd = task_distance_detail(full, full, m, beta, 1.0, trainer());
    CHECK(dd.converged);
    CHECK(std::abs(dd.value) <= 1e-6 * (1.0 + std::abs(dd.source.total)));
  }
  SUBCASE("subset is closer from the superset") {
    auto sub = subset_classes(full, {0, 1});
    CHECK(task_distance(full, sub, m, beta, 1.0, trainer()) < task_distance(sub, full, m, beta, 1.0, trainer()));
  }
  SUBCASE("distance to a corrupted copy grows with the corruption") {
    std::vector<double> rho{0.0, 0.25, 0.5}, dist;
    for (double r : rho) dist.push_back(task_distance(full, corrupt_labels(full, r, 5), m, beta, 1.0, trainer()));
    CHECK(dist[0] < dist[1]);
    CHECK(dist[1] < dist[2]);
  }
}

TEST_CASE("distance matrix of a duplicated task") {
  auto d = generate_blobs(2, 40, 2, 4.0, 1);
  auto dm = distance_matrix({{"a", d}, {"b", d}}, logistic(2, 2, 0.01), 0.02, 1.0, trainer(), 2);
  REQUIRE(dm.size() == 2);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) {
      REQUIRE(dm.cells[i][j].has_value());
      CHECK(std::abs(*dm.cells[i][j]) < 1e-6);
    }
  CHECK(dm.to_csv().rfind("task,a,b\n", 0) == 0);
}
