#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "reachlab/errors.hpp"
#include "reachlab/rng.hpp"
#include "reachlab/tasks.hpp"

using namespace reachlab;

namespace {

ModelSpec logistic(std::size_t p, int K, double gamma = 0.0) {
  ModelSpec m;
  m.input_dim = p;
  m.classes = K;
  m.weight_decay = gamma;
  return m;
}

ModelSpec mlp(std::size_t p, int K, std::size_t h, Activation a, double gamma = 0.0) {
  ModelSpec m = logistic(p, K, gamma);
  m.family = ModelFamily::Mlp;
  m.hidden = h;
  m.activation = a;
  return m;
}

WeightVector random_w(std::size_t n, std::uint64_t seed, double scale = 0.7) {
  RandomStream s(seed, 0);
  WeightVector w(static_cast<Eigen::Index>(n));
  for (Eigen::Index i = 0; i < w.size(); ++i) w(i) = scale * s.next_normal();
  return w;
}

bool identical(const Dataset& a, const Dataset& b) {
  return a.labels == b.labels && a.inputs.rows() == b.inputs.rows() && a.inputs.cols() == b.inputs.cols() &&
         (a.inputs.array() == b.inputs.array()).all() && a.classes == b.classes;
}

}  // namespace

TEST_CASE("blob construction") {
  auto d = generate_blobs(2, 4, 1, 10.0, 0);
  CHECK(d.size() == 4);
  CHECK(d.labels == std::vector<int>{0, 0, 1, 1});
  const Matrix c = blob_centers(2, 1, 10.0);
  CHECK(std::abs(c(0, 0) - c(1, 0)) >= 10.0 - 1e-12);

  auto e = generate_blobs(3, 9, 2, 6.0, 1);
  CHECK(e.size() == 9);
  for (int k = 0; k < 3; ++k) CHECK(std::count(e.labels.begin(), e.labels.end(), k) == 3);
  CHECK(identical(e, generate_blobs(3, 9, 2, 6.0, 1)));
}

TEST_CASE("blob centers are pairwise separated") {
  for (int K : {2, 3, 4, 6}) {
    for (std::size_t p : {1u, 2u, 5u}) {
      const Matrix c = blob_centers(K, p, 4.0);
      for (int i = 0; i < K; ++i)
        for (int j = i + 1; j < K; ++j) CHECK((c.row(i) - c.row(j)).norm() >= 4.0 - 1e-9);
    }
  }
}

TEST_CASE("corrupt_labels resamples exactly floor(rho N) labels") {
  CHECK(identical(corrupt_labels(generate_blobs(3, 30, 2, 4.0, 2), 0.0, 9), generate_blobs(3, 30, 2, 4.0, 2)));

  // With a huge label space a resampled label almost surely differs from 0,
  // so the number of changed labels counts the resampled indices.
  Dataset d;
  d.classes = 1 << 30;
  d.inputs = RowMatrix::Zero(10, 1);
  d.labels.assign(10, 0);
  auto c = corrupt_labels(d, 0.5, 3);
  CHECK(std::count_if(c.labels.begin(), c.labels.end(), [](int y) { return y != 0; }) == 5);
}

TEST_CASE("full corruption disagreement is binomial") {
  auto d = generate_blobs(2, 1000, 2, 4.0, 5);
  auto c = corrupt_labels(d, 1.0, 17);
  int disagree = 0;
  for (std::size_t i = 0; i < d.size(); ++i) disagree += d.labels[i] != c.labels[i];
  // Each label is redrawn uniformly, so it disagrees with probability 1/2.
  CHECK(std::abs(disagree - 500) <= 4 * std::sqrt(1000 * 0.25));
}

TEST_CASE("concat shapes and duplication identity") {
  auto a = generate_blobs(2, 3, 2, 4.0, 1);
  auto b = generate_blobs(2, 5, 2, 4.0, 2);
  CHECK(concat(a, b).size() == 8);
  CHECK(identical(concat(a, empty_dataset(2, 2)), a));

  Task t1(a, logistic(2, 2, 0.01));
  Task t2(concat(a, a), logistic(2, 2, 0.01));
  for (std::uint64_t s = 0; s < 5; ++s) {
    auto w = random_w(t1.dim(), s);
    CHECK(loss(t2, w) == doctest::Approx(loss(t1, w)).epsilon(1e-14));
  }
}

TEST_CASE("subset_classes keeps the label space") {
  auto d = generate_blobs(4, 40, 2, 4.0, 1);
  auto s = subset_classes(d, {0, 2});
  CHECK(s.classes == 4);
  CHECK(s.size() == 20);
  for (int y : s.labels) CHECK((y == 0 || y == 2));
}

TEST_CASE("loss at zero weights is log K") {
  auto d2 = generate_blobs(2, 20, 3, 4.0, 1);
  CHECK(loss(Task(d2, logistic(3, 2)), WeightVector::Zero(8)) == doctest::Approx(std::log(2.0)).epsilon(1e-14));
  auto d5 = generate_blobs(5, 25, 2, 4.0, 1);
  CHECK(loss(Task(d5, logistic(2, 5)), WeightVector::Zero(15)) == doctest::Approx(std::log(5.0)).epsilon(1e-14));
}

TEST_CASE("loss is nonnegative and gradients match finite differences") {
  struct Case {
    ModelSpec m;
    Dataset d;
  };
  std::vector<Case> cases;
  for (int k = 0; k < 20; ++k) {
    const int K = 2 + k % 3;
    const std::size_t p = 1 + static_cast<std::size_t>(k % 4);
    auto d = generate_blobs(K, 12 + static_cast<std::size_t>(k), p, 3.0, static_cast<std::uint64_t>(k));
    const double gamma = (k % 2) ? 0.05 : 0.0;
    if (k % 3 == 0)
      cases.push_back({logistic(p, K, gamma), d});
    else
      cases.push_back({mlp(p, K, 3 + static_cast<std::size_t>(k % 2),
                           k % 2 ? Activation::Tanh : Activation::Softplus, gamma),
                       d});
  }
  int idx = 0;
  for (const auto& c : cases) {
    CAPTURE(idx);
    Task t(c.d, c.m);
    auto w = random_w(t.dim(), 100 + static_cast<std::uint64_t>(idx++));
    CHECK(loss(t, w) >= 0.0);
    const Vector g = grad_loss(t, w);
    Vector fd(g.size());
    const double h = 1e-6;
    for (Eigen::Index i = 0; i < w.size(); ++i) {
      WeightVector a = w, b = w;
      a(i) += h;
      b(i) -= h;
      fd(i) = (loss(t, a) - loss(t, b)) / (2 * h);
    }
    CHECK((g - fd).norm() <= 1e-5 * std::max(1.0, g.norm()));

    const Matrix G = per_sample_grads(t, w);
    const Vector rebuilt = G.colwise().mean().transpose() + c.m.weight_decay * w;
    CHECK((rebuilt - g).norm() <= 1e-12 * std::max(1.0, g.norm()));

    std::vector<std::size_t> all(t.data.size());
    std::iota(all.begin(), all.end(), 0);
    CHECK((minibatch_grad(t, w, all) - g).norm() <= 1e-12 * std::max(1.0, g.norm()));
  }
}

TEST_CASE("predictions are distributions and KL vanishes on the diagonal") {
  auto d = generate_blobs(3, 30, 2, 4.0, 4);
  Task t(d, mlp(2, 3, 4, Activation::Tanh));
  auto w = random_w(t.dim(), 1);
  const Matrix P = predict_proba(t, w);
  for (Eigen::Index i = 0; i < P.rows(); ++i) CHECK(P.row(i).sum() == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(mean_prediction_kl(t, w, w) == 0.0);
  CHECK(mean_prediction_kl(t, w, random_w(t.dim(), 2)) > 0.0);
}

TEST_CASE("model loss potential wraps the task") {
  auto d = generate_blobs(2, 16, 2, 4.0, 4);
  Task t(d, logistic(2, 2, 0.1));
  ModelLoss U(t);
  auto w = random_w(t.dim(), 3);
  CHECK(U.value(w) == loss(t, w));
  CHECK((U.grad(w) - grad_loss(t, w)).norm() == 0.0);
  const Matrix H = U.hessian(w);
  const Matrix expect = model_fisher(t, w) + 0.1 * Matrix::Identity(6, 6);
  CHECK((H - expect).norm() <= 1e-14 * expect.norm());
}

TEST_CASE("model spec validation") {
  CHECK(ModelSpec::from_json(logistic(3, 4, 0.1).to_json()).param_count() == 16);
  auto m = mlp(3, 4, 5, Activation::Softplus);
  auto back = ModelSpec::from_json(m.to_json());
  CHECK(back.param_count() == 5 * 4 + 4 * 6);
  CHECK(back.activation == Activation::Softplus);
  CHECK_THROWS_AS(ModelSpec::from_json({{"input_dim", 2}, {"classes", 2}, {"activation", "relu"}}),
                  ContractViolation);
  CHECK_THROWS_AS(ModelSpec::from_json({{"input_dim", 2}, {"classes", 2}, {"bogus", 1}}), ContractViolation);
  CHECK_THROWS_AS(Task(generate_blobs(2, 4, 2, 4.0, 0), logistic(3, 2)), ContractViolation);
}

TEST_CASE("provenance replays the dataset") {
  nlohmann::json cfg = {{"blobs", {{"classes", 4}, {"n", 40}, {"input_dim", 3}, {"separation", 4.0}, {"seed", 8}}},
                        {"corrupt", {{"rho", 0.3}, {"seed", 2}}},
                        {"keep_classes", {0, 1, 3}}};
  auto d = make_dataset(cfg);
  CHECK(identical(regenerate(d.provenance), d));
  auto j = concat(d, generate_blobs(4, 8, 3, 4.0, 1));
  CHECK(identical(regenerate(j.provenance), j));
}

TEST_CASE("csv round trip") {
  auto d = generate_blobs(3, 12, 2, 4.0, 6);
  std::stringstream ss;
  write_dataset_csv(d, ss);
  std::string header;
  std::getline(std::stringstream(ss.str()), header);
  CHECK(header == "x0,x1,y");
  auto back = read_dataset_csv(ss, 3);
  CHECK(back.labels == d.labels);
  CHECK((back.inputs - d.inputs).cwiseAbs().maxCoeff() == 0.0);

  const auto dir = std::filesystem::temp_directory_path() / "reachlab_tasks_test";
  std::filesystem::create_directories(dir);
  save_dataset(d, dir / "blobs");
  CHECK(std::filesystem::exists(dir / "blobs.csv"));
  CHECK(std::filesystem::exists(dir / "blobs.json"));
  std::filesystem::remove_all(dir);
}
