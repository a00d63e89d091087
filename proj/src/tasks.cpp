#include "reachlab/tasks.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>

#include "reachlab/errors.hpp"
#include "reachlab/json_util.hpp"
#include "reachlab/kernels.hpp"
#include "reachlab/rng.hpp"

namespace reachlab {

using nlohmann::json;

// ---- datasets ---------------------------------------------------------------

Matrix blob_centers(int classes, std::size_t input_dim, double separation) {
  require(classes >= 2, "blob_centers: need at least 2 classes");
  require(input_dim >= 1, "blob_centers: input_dim must be positive");
  require(separation > 0.0, "blob_centers: separation must be positive");
  const auto K = static_cast<Eigen::Index>(classes);
  const auto p = static_cast<Eigen::Index>(input_dim);
  Matrix c = Matrix::Zero(K, p);
  if (p >= K - 1) {
    // Regular simplex: coordinates of e_k - 1/K in the Helmert basis, which
    // puts every pair at distance sqrt(2) before scaling.
    const double s = separation / std::sqrt(2.0);
    for (Eigen::Index j = 1; j < K; ++j) {
      const double norm = std::sqrt(static_cast<double>(j * (j + 1)));
      for (Eigen::Index k = 0; k < K; ++k) {
        double h = 0.0;
        if (k < j) h = 1.0 / norm;
        else if (k == j) h = -static_cast<double>(j) / norm;
        c(k, j - 1) = s * h;
      }
    }
  } else if (p == 1) {
    for (Eigen::Index k = 0; k < K; ++k) c(k, 0) = separation * (static_cast<double>(k) - 0.5 * (K - 1));
  } else {
    // Regular K-gon in the first two coordinates with side = separation.
    const double r = separation / (2.0 * std::sin(M_PI / static_cast<double>(K)));
    for (Eigen::Index k = 0; k < K; ++k) {
      const double phi = 2.0 * M_PI * static_cast<double>(k) / static_cast<double>(K);
      c(k, 0) = r * std::cos(phi);
      c(k, 1) = r * std::sin(phi);
    }
  }
  return c;
}

Dataset generate_blobs(int classes, std::size_t n, std::size_t input_dim, double separation,
                       std::uint64_t seed) {
  require(classes >= 2, "generate_blobs: K >= 2 required");
  require(n >= static_cast<std::size_t>(classes), "generate_blobs: N >= K required");
  require(input_dim >= 1, "generate_blobs: p >= 1 required");
  require(separation > 0.0, "generate_blobs: separation must be positive");
  const Matrix centers = blob_centers(classes, input_dim, separation);
  Dataset d;
  d.classes = classes;
  d.inputs.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(input_dim));
  d.labels.resize(n);
  const std::size_t per = n / static_cast<std::size_t>(classes);
  RandomStream rng(seed, 0);
  for (std::size_t i = 0; i < n; ++i) {
    const int k = std::min(static_cast<int>(i / per), classes - 1);
    d.labels[i] = k;
    for (std::size_t j = 0; j < input_dim; ++j)
      d.inputs(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          centers(k, static_cast<Eigen::Index>(j)) + rng.next_normal();
  }
  d.provenance = {{"kind", "blobs"},          {"classes", classes},
                  {"n", n},                   {"input_dim", input_dim},
                  {"separation", separation}, {"seed", seed},
                  {"ops", json::array()}};
  return d;
}

Dataset corrupt_labels(const Dataset& d, double rho, std::uint64_t seed) {
  require(rho >= 0.0 && rho <= 1.0, "corrupt_labels: rho must lie in [0, 1]");
  Dataset out = d;
  const std::size_t n = d.size();
  const auto m = std::min(n, static_cast<std::size_t>(std::floor(rho * static_cast<double>(n) + 1e-9)));
  RandomStream rng(seed, 1);
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  // Partial Fisher-Yates: the first m entries are a uniform draw without replacement.
  for (std::size_t i = 0; i < m; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.next_index(n - i));
    std::swap(idx[i], idx[j]);
    out.labels[idx[i]] = static_cast<int>(rng.next_index(static_cast<std::uint64_t>(d.classes)));
  }
  out.provenance["ops"].push_back({{"op", "corrupt"}, {"rho", rho}, {"seed", seed}});
  return out;
}

Dataset concat(const Dataset& d1, const Dataset& d2) {
  if (d1.input_dim() != d2.input_dim())
    throw ContractViolation("concat: input dimension mismatch (" + std::to_string(d1.input_dim()) +
                            " vs " + std::to_string(d2.input_dim()) + ")");
  Dataset out;
  out.classes = std::max(d1.classes, d2.classes);
  out.inputs.resize(static_cast<Eigen::Index>(d1.size() + d2.size()), d1.inputs.cols());
  if (d1.size()) out.inputs.topRows(static_cast<Eigen::Index>(d1.size())) = d1.inputs;
  if (d2.size()) out.inputs.bottomRows(static_cast<Eigen::Index>(d2.size())) = d2.inputs;
  out.labels = d1.labels;
  out.labels.insert(out.labels.end(), d2.labels.begin(), d2.labels.end());
  out.provenance = {{"kind", "concat"},
                    {"classes", out.classes},
                    {"parts", {d1.provenance, d2.provenance}},
                    {"ops", json::array()}};
  return out;
}

Dataset subset_classes(const Dataset& d, const std::vector<int>& keep) {
  Dataset out;
  out.classes = d.classes;
  std::vector<Eigen::Index> rows;
  for (std::size_t i = 0; i < d.size(); ++i)
    if (std::find(keep.begin(), keep.end(), d.labels[i]) != keep.end())
      rows.push_back(static_cast<Eigen::Index>(i));
  out.inputs.resize(static_cast<Eigen::Index>(rows.size()), d.inputs.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    out.inputs.row(static_cast<Eigen::Index>(r)) = d.inputs.row(rows[r]);
    out.labels.push_back(d.labels[static_cast<std::size_t>(rows[r])]);
  }
  out.provenance = d.provenance;
  out.provenance["ops"].push_back({{"op", "keep_classes"}, {"classes", keep}});
  return out;
}

Dataset empty_dataset(std::size_t input_dim, int classes) {
  Dataset d;
  d.classes = classes;
  d.inputs.resize(0, static_cast<Eigen::Index>(input_dim));
  d.provenance = {{"kind", "empty"}, {"input_dim", input_dim}, {"classes", classes}, {"ops", json::array()}};
  return d;
}

Dataset regenerate(const json& prov) {
  const auto kind = json_util::get_required<std::string>(prov, "kind", "provenance");
  Dataset d;
  if (kind == "blobs") {
    d = generate_blobs(prov.at("classes").get<int>(), prov.at("n").get<std::size_t>(),
                       prov.at("input_dim").get<std::size_t>(), prov.at("separation").get<double>(),
                       prov.at("seed").get<std::uint64_t>());
  } else if (kind == "concat") {
    d = concat(regenerate(prov.at("parts").at(0)), regenerate(prov.at("parts").at(1)));
  } else if (kind == "empty") {
    d = empty_dataset(prov.at("input_dim").get<std::size_t>(), prov.at("classes").get<int>());
  } else {
    throw ContractViolation("regenerate: provenance kind '" + kind + "' is not replayable");
  }
  for (const auto& op : prov.value("ops", json::array())) {
    const auto name = op.at("op").get<std::string>();
    if (name == "corrupt")
      d = corrupt_labels(d, op.at("rho").get<double>(), op.at("seed").get<std::uint64_t>());
    else if (name == "keep_classes")
      d = subset_classes(d, op.at("classes").get<std::vector<int>>());
    else
      throw ContractViolation("regenerate: unknown op '" + name + "'");
  }
  return d;
}

void write_dataset_csv(const Dataset& d, std::ostream& out) {
  for (std::size_t j = 0; j < d.input_dim(); ++j) out << 'x' << j << ',';
  out << "y\n";
  out << std::setprecision(17);
  for (std::size_t i = 0; i < d.size(); ++i) {
    for (std::size_t j = 0; j < d.input_dim(); ++j)
      out << d.inputs(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) << ',';
    out << d.labels[i] << '\n';
  }
}

Dataset read_dataset_csv(std::istream& in, int classes) {
  std::string line;
  if (!std::getline(in, line)) throw ContractViolation("read_dataset_csv: missing header");
  std::size_t cols = static_cast<std::size_t>(std::count(line.begin(), line.end(), ',')) + 1;
  require(cols >= 2, "read_dataset_csv: need at least one input column and y");
  std::vector<std::vector<double>> rows;
  std::vector<int> labels;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<double> row;
    while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
    require(row.size() == cols, "read_dataset_csv: ragged row");
    labels.push_back(static_cast<int>(row.back()));
    row.pop_back();
    rows.push_back(std::move(row));
  }
  Dataset d;
  d.classes = classes;
  d.inputs.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols - 1));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j + 1 < cols; ++j)
      d.inputs(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
  for (int y : labels) require(y >= 0 && y < classes, "read_dataset_csv: label out of range");
  d.labels = std::move(labels);
  d.provenance = {{"kind", "csv"}, {"classes", classes}, {"ops", json::array()}};
  return d;
}

void save_dataset(const Dataset& d, const std::filesystem::path& stem) {
  std::ofstream csv(stem.string() + ".csv");
  write_dataset_csv(d, csv);
  std::ofstream side(stem.string() + ".json");
  side << d.provenance.dump(2) << '\n';
}

Dataset make_dataset(const json& cfg) {
  using namespace json_util;
  expect_keys(cfg, {"blobs", "corrupt", "keep_classes"}, "dataset");
  const json b = get_required<json>(cfg, "blobs", "dataset");
  expect_keys(b, {"classes", "n", "input_dim", "separation", "seed"}, "dataset.blobs");
  Dataset d = generate_blobs(get_required<int>(b, "classes", "dataset.blobs"),
                             get_required<std::size_t>(b, "n", "dataset.blobs"),
                             get_or<std::size_t>(b, "input_dim", 2),
                             get_required<double>(b, "separation", "dataset.blobs"),
                             get_or<std::uint64_t>(b, "seed", 0));
  if (cfg.contains("keep_classes")) d = subset_classes(d, cfg.at("keep_classes").get<std::vector<int>>());
  if (cfg.contains("corrupt")) {
    const json& c = cfg.at("corrupt");
    expect_keys(c, {"rho", "seed"}, "dataset.corrupt");
    d = corrupt_labels(d, get_required<double>(c, "rho", "dataset.corrupt"), get_or<std::uint64_t>(c, "seed", 0));
  }
  return d;
}

// ---- models -----------------------------------------------------------------

std::size_t ModelSpec::param_count() const {
  const auto K = static_cast<std::size_t>(classes);
  if (family == ModelFamily::Logistic) return K * (input_dim + 1);
  return hidden * (input_dim + 1) + K * (hidden + 1);
}

json ModelSpec::to_json() const {
  json j = {{"family", family == ModelFamily::Logistic ? "logistic" : "mlp"},
            {"input_dim", input_dim},
            {"classes", classes},
            {"weight_decay", weight_decay}};
  if (family == ModelFamily::Mlp) {
    j["hidden"] = hidden;
    j["activation"] = activation == Activation::Tanh ? "tanh" : "softplus";
  }
  return j;
}

ModelSpec ModelSpec::from_json(const json& j) {
  using namespace json_util;
  expect_keys(j, {"family", "input_dim", "classes", "weight_decay", "hidden", "activation"}, "model");
  ModelSpec m;
  const auto fam = get_or<std::string>(j, "family", "logistic");
  if (fam == "logistic") m.family = ModelFamily::Logistic;
  else if (fam == "mlp") m.family = ModelFamily::Mlp;
  else throw ContractViolation("model: unknown family '" + fam + "'");
  m.input_dim = get_required<std::size_t>(j, "input_dim", "model");
  m.classes = get_required<int>(j, "classes", "model");
  m.weight_decay = get_or<double>(j, "weight_decay", 0.0);
  m.hidden = get_or<std::size_t>(j, "hidden", 0);
  const auto act = get_or<std::string>(j, "activation", "tanh");
  if (act == "tanh") m.activation = Activation::Tanh;
  else if (act == "softplus") m.activation = Activation::Softplus;
  else throw ContractViolation("model: activation must be tanh or softplus (C2 nonlinearity), got '" + act + "'");
  require(m.classes >= 2, "model: classes >= 2 required");
  require(m.weight_decay >= 0.0, "model: weight_decay must be non-negative");
  require(m.family == ModelFamily::Logistic || m.hidden >= 1, "model: mlp needs hidden >= 1");
  return m;
}

Task::Task(Dataset d, ModelSpec m) : data(std::move(d)), model(m) {
  require(model.input_dim == data.input_dim(),
          "Task: model input_dim " + std::to_string(model.input_dim) + " != data columns " +
              std::to_string(data.input_dim()));
  const int max_label = data.labels.empty() ? -1 : *std::max_element(data.labels.begin(), data.labels.end());
  require(model.classes >= max_label + 1, "Task: model has fewer classes than the data labels");
  require(model.classes >= 2, "Task: classes >= 2 required");
}

namespace {

struct Forward {
  Vector pre;     // hidden pre-activations (mlp)
  Vector hidden;  // hidden activations (mlp)
  Vector logits;
  Vector prob;
  double log_norm = 0.0;  // max + log sum exp(z - max)
};

inline double act_value(Activation a, double x) {
  if (a == Activation::Tanh) return std::tanh(x);
  return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

inline double act_slope(Activation a, double x, double y) {
  if (a == Activation::Tanh) return 1.0 - y * y;
  return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

void check_weights(const Task& t, const WeightVector& w) {
  if (static_cast<std::size_t>(w.size()) != t.dim())
    throw ContractViolation("task: expected " + std::to_string(t.dim()) + " weights, got " +
                            std::to_string(w.size()));
}

void forward(const ModelSpec& m, const double* w, const double* x, Forward& f) {
  const std::size_t p = m.input_dim;
  const auto K = static_cast<std::size_t>(m.classes);
  const auto& kt = kernels::active();
  f.logits.resize(static_cast<Eigen::Index>(K));
  if (m.family == ModelFamily::Logistic) {
    const double* bias = w + K * p;
    for (std::size_t c = 0; c < K; ++c) f.logits[static_cast<Eigen::Index>(c)] = kt.dot(w + c * p, x, p) + bias[c];
  } else {
    const std::size_t h = m.hidden;
    const double* b1 = w + h * p;
    const double* w2 = b1 + h;
    const double* b2 = w2 + K * h;
    f.pre.resize(static_cast<Eigen::Index>(h));
    f.hidden.resize(static_cast<Eigen::Index>(h));
    for (std::size_t j = 0; j < h; ++j) {
      const double a = kt.dot(w + j * p, x, p) + b1[j];
      f.pre[static_cast<Eigen::Index>(j)] = a;
      f.hidden[static_cast<Eigen::Index>(j)] = act_value(m.activation, a);
    }
    for (std::size_t c = 0; c < K; ++c)
      f.logits[static_cast<Eigen::Index>(c)] = kt.dot(w2 + c * h, f.hidden.data(), h) + b2[c];
  }
  const double mx = f.logits.maxCoeff();
  f.prob = (f.logits.array() - mx).exp();
  const double s = f.prob.sum();
  f.prob /= s;
  f.log_norm = mx + std::log(s);
}

// grad += scale * J^T dz, where J = d logits / d w at the cached forward pass.
void backward(const ModelSpec& m, const double* w, const double* x, const Forward& f, const Vector& dz,
              double scale, double* grad) {
  const std::size_t p = m.input_dim;
  const auto K = static_cast<std::size_t>(m.classes);
  const auto& kt = kernels::active();
  if (m.family == ModelFamily::Logistic) {
    double* gb = grad + K * p;
    for (std::size_t c = 0; c < K; ++c) {
      const double s = scale * dz[static_cast<Eigen::Index>(c)];
      kt.axpy(s, x, grad + c * p, p);
      gb[c] += s;
    }
    return;
  }
  const std::size_t h = m.hidden;
  const double* w2 = w + h * p + h;
  double* gb1 = grad + h * p;
  double* gw2 = gb1 + h;
  double* gb2 = gw2 + K * h;
  Vector dh = Vector::Zero(static_cast<Eigen::Index>(h));
  for (std::size_t c = 0; c < K; ++c) {
    const double dzc = dz[static_cast<Eigen::Index>(c)];
    kt.axpy(scale * dzc, f.hidden.data(), gw2 + c * h, h);
    gb2[c] += scale * dzc;
    kt.axpy(dzc, w2 + c * h, dh.data(), h);
  }
  for (std::size_t j = 0; j < h; ++j) {
    const auto jj = static_cast<Eigen::Index>(j);
    const double da = dh[jj] * act_slope(m.activation, f.pre[jj], f.hidden[jj]);
    kt.axpy(scale * da, x, grad + j * p, p);
    gb1[j] += scale * da;
  }
}

const double* row_ptr(const Dataset& d, std::size_t i) { return d.inputs.data() + i * d.input_dim(); }

void require_nonempty(const Task& t) {
  require(t.data.size() >= 1, "task: dataset is empty");
}

}  // namespace

double data_loss(const Task& t, const WeightVector& w) {
  check_weights(t, w);
  require_nonempty(t);
  Forward f;
  double s = 0.0;
  for (std::size_t i = 0; i < t.data.size(); ++i) {
    forward(t.model, w.data(), row_ptr(t.data, i), f);
    s += f.log_norm - f.logits[t.data.labels[i]];
  }
  return s / static_cast<double>(t.data.size());
}

double loss(const Task& t, const WeightVector& w) {
  return data_loss(t, w) + 0.5 * t.model.weight_decay * kernels::sum_sq({w.data(), static_cast<std::size_t>(w.size())});
}

Vector minibatch_grad(const Task& t, const WeightVector& w, std::span<const std::size_t> idx) {
  check_weights(t, w);
  require(!idx.empty(), "minibatch_grad: empty batch");
  Vector g = Vector::Zero(w.size());
  Forward f;
  const double scale = 1.0 / static_cast<double>(idx.size());
  for (std::size_t i : idx) {
    require(i < t.data.size(), "minibatch_grad: index out of range");
    forward(t.model, w.data(), row_ptr(t.data, i), f);
    Vector dz = f.prob;
    dz[t.data.labels[i]] -= 1.0;
    backward(t.model, w.data(), row_ptr(t.data, i), f, dz, scale, g.data());
  }
  if (t.model.weight_decay != 0.0) g += t.model.weight_decay * w;
  return g;
}

Vector grad_loss(const Task& t, const WeightVector& w) {
  require_nonempty(t);
  std::vector<std::size_t> all(t.data.size());
  std::iota(all.begin(), all.end(), 0);
  return minibatch_grad(t, w, all);
}

Matrix per_sample_grads(const Task& t, const WeightVector& w) {
  check_weights(t, w);
  Matrix out = Matrix::Zero(static_cast<Eigen::Index>(t.data.size()), w.size());
  Forward f;
  Vector g(w.size());
  for (std::size_t i = 0; i < t.data.size(); ++i) {
    forward(t.model, w.data(), row_ptr(t.data, i), f);
    Vector dz = f.prob;
    dz[t.data.labels[i]] -= 1.0;
    g.setZero();
    backward(t.model, w.data(), row_ptr(t.data, i), f, dz, 1.0, g.data());
    out.row(static_cast<Eigen::Index>(i)) = g.transpose();
  }
  return out;
}

Matrix predict_proba(const Task& t, const WeightVector& w) {
  check_weights(t, w);
  Matrix out(static_cast<Eigen::Index>(t.data.size()), t.model.classes);
  Forward f;
  for (std::size_t i = 0; i < t.data.size(); ++i) {
    forward(t.model, w.data(), row_ptr(t.data, i), f);
    out.row(static_cast<Eigen::Index>(i)) = f.prob.transpose();
  }
  return out;
}

double mean_prediction_kl(const Task& t, const WeightVector& w0, const WeightVector& w) {
  check_weights(t, w0);
  check_weights(t, w);
  require_nonempty(t);
  Forward f0, f1;
  double s = 0.0;
  for (std::size_t i = 0; i < t.data.size(); ++i) {
    forward(t.model, w0.data(), row_ptr(t.data, i), f0);
    forward(t.model, w.data(), row_ptr(t.data, i), f1);
    // log p0 - log p1 = (z0 - n0) - (z1 - n1)
    for (Eigen::Index c = 0; c < f0.prob.size(); ++c)
      s += f0.prob[c] * ((f0.logits[c] - f0.log_norm) - (f1.logits[c] - f1.log_norm));
  }
  return s / static_cast<double>(t.data.size());
}

Matrix model_fisher(const Task& t, const WeightVector& w) {
  check_weights(t, w);
  require_nonempty(t);
  const auto d = w.size();
  const auto K = t.model.classes;
  Matrix F = Matrix::Zero(d, d);
  Forward f;
  Vector score(d);
  for (std::size_t i = 0; i < t.data.size(); ++i) {
    forward(t.model, w.data(), row_ptr(t.data, i), f);
    for (int y = 0; y < K; ++y) {
      const double py = f.prob[y];
      if (py == 0.0) continue;
      // grad log p(y|x) = -J^T (p - e_y); the sign drops out of the outer product.
      Vector dz = f.prob;
      dz[y] -= 1.0;
      score.setZero();
      backward(t.model, w.data(), row_ptr(t.data, i), f, dz, 1.0, score.data());
      F.selfadjointView<Eigen::Lower>().rankUpdate(score, py);
    }
  }
  F = F.selfadjointView<Eigen::Lower>();
  return F / static_cast<double>(t.data.size());
}

WeightVector initial_weights(const ModelSpec& m, std::uint64_t seed, double scale) {
  WeightVector w = WeightVector::Zero(static_cast<Eigen::Index>(m.param_count()));
  if (m.family == ModelFamily::Logistic) return w;
  RandomStream rng(seed, 0x1417);
  const std::size_t p = m.input_dim, h = m.hidden;
  const auto K = static_cast<std::size_t>(m.classes);
  const double s1 = scale / std::sqrt(static_cast<double>(p));
  const double s2 = scale / std::sqrt(static_cast<double>(h));
  for (std::size_t i = 0; i < h * p; ++i) w[static_cast<Eigen::Index>(i)] = s1 * rng.next_normal();
  const std::size_t w2 = h * p + h;
  for (std::size_t i = 0; i < K * h; ++i) w[static_cast<Eigen::Index>(w2 + i)] = s2 * rng.next_normal();
  return w;
}

// ---- ModelLoss --------------------------------------------------------------

ModelLoss::ModelLoss(Task task) : task_(std::move(task)) {}
double ModelLoss::value(const WeightVector& w) const { return loss(task_, w); }
Vector ModelLoss::grad(const WeightVector& w) const { return grad_loss(task_, w); }
Matrix ModelLoss::hessian(const WeightVector& w) const {
  Matrix h = model_fisher(task_, w);
  h.diagonal().array() += task_.model.weight_decay;
  return h;
}
json ModelLoss::to_json() const {
  return {{"name", "model_loss"}, {"model", task_.model.to_json()}, {"data", task_.data.provenance}};
}

}  // namespace reachlab
