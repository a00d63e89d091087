#pragma once
// Synthetic classification tasks and the loss landscapes they define.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "reachlab/landscape.hpp"
#include "reachlab/linalg.hpp"

namespace reachlab {

struct Dataset {
  RowMatrix inputs;         // N x p
  std::vector<int> labels;  // N entries in [0, classes)
  int classes = 2;
  // Replayable description: {"kind": ..., parameters..., "ops": [...]}.
  nlohmann::json provenance;

  std::size_t size() const { return labels.size(); }
  std::size_t input_dim() const { return static_cast<std::size_t>(inputs.cols()); }
};

// K unit-covariance Gaussian clusters with centers at pairwise distance
// >= separation. Classes are contiguous; the last class takes the remainder.
Dataset generate_blobs(int classes, std::size_t n, std::size_t input_dim, double separation,
                       std::uint64_t seed);

// Blob centers used by generate_blobs (row k = center of class k).
Matrix blob_centers(int classes, std::size_t input_dim, double separation);

// Resample floor(rho * N) labels, chosen without replacement, uniformly over
// [0, classes).
Dataset corrupt_labels(const Dataset& d, double rho, std::uint64_t seed);

// Rows of d1 then d2. Both must share input_dim; the result uses the larger
// label space.
Dataset concat(const Dataset& d1, const Dataset& d2);

// Rows whose label is in `keep`; the label space is unchanged.
Dataset subset_classes(const Dataset& d, const std::vector<int>& keep);

// Empty dataset (N = 0) with the given shape; the identity for concat.
Dataset empty_dataset(std::size_t input_dim, int classes);

// Rebuild a dataset from its provenance record.
Dataset regenerate(const nlohmann::json& provenance);

void write_dataset_csv(const Dataset& d, std::ostream& out);
Dataset read_dataset_csv(std::istream& in, int classes);
// Writes <stem>.csv and <stem>.json (provenance sidecar).
void save_dataset(const Dataset& d, const std::filesystem::path& stem);

enum class ModelFamily { Logistic, Mlp };
enum class Activation { Tanh, Softplus };

struct ModelSpec {
  ModelFamily family = ModelFamily::Logistic;
  std::size_t input_dim = 1;
  int classes = 2;
  double weight_decay = 0.0;
  std::size_t hidden = 0;  // Mlp only
  Activation activation = Activation::Tanh;

  std::size_t param_count() const;
  nlohmann::json to_json() const;
  static ModelSpec from_json(const nlohmann::json& j);
};

struct Task {
  Dataset data;
  ModelSpec model;

  Task(Dataset d, ModelSpec m);
  std::size_t dim() const { return model.param_count(); }
};

// Mean cross-entropy without the weight-decay term.
double data_loss(const Task& t, const WeightVector& w);
// Mean cross-entropy + (gamma / 2) |w|^2.
double loss(const Task& t, const WeightVector& w);
Vector grad_loss(const Task& t, const WeightVector& w);
// Row i is grad of -log p_w(y_i | x_i); no regularizer.
Matrix per_sample_grads(const Task& t, const WeightVector& w);
// Mean data-term gradient over the given sample indices (repeats allowed)
// plus gamma * w.
Vector minibatch_grad(const Task& t, const WeightVector& w, std::span<const std::size_t> idx);
// N x K class probabilities.
Matrix predict_proba(const Task& t, const WeightVector& w);
// Mean over samples of KL(p_w0(.|x) || p_w(.|x)).
double mean_prediction_kl(const Task& t, const WeightVector& w0, const WeightVector& w);

// (1/N) sum_i sum_y p_w(y|x_i) s_iy s_iy^T with s_iy = grad log p_w(y|x_i).
Matrix model_fisher(const Task& t, const WeightVector& w);

// Deterministic small random initialization (zero for logistic models).
WeightVector initial_weights(const ModelSpec& m, std::uint64_t seed, double scale = 0.5);

// U(w) = loss(t, w). Hessian is the Fisher/Gauss-Newton surrogate F + gamma I.
class ModelLoss final : public Potential {
 public:
  explicit ModelLoss(Task task);
  std::size_t dim() const override { return task_.dim(); }
  double value(const WeightVector& w) const override;
  Vector grad(const WeightVector& w) const override;
  Matrix hessian(const WeightVector& w) const override;
  std::string name() const override { return "model_loss"; }
  nlohmann::json to_json() const override;
  const Task& task() const { return task_; }

 private:
  Task task_;
};

// Build a dataset from a config object:
// {"blobs": {classes, n, input_dim, separation, seed},
//  "corrupt": {rho, seed}?, "keep_classes": [...]?}
Dataset make_dataset(const nlohmann::json& cfg);

}  // namespace reachlab
