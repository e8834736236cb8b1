#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "spanflow/featurize.hpp"
#include "spanflow/gnn.hpp"
#include "spanflow/pagegraph.hpp"

namespace spanflow::train {

// Anchor span ids on page 1, positive span ids on page 2.
struct LabeledPair {
  std::string graph1_id, graph2_id;
  std::vector<std::pair<int, int>> pairs;
  nlohmann::json extra = nlohmann::json::object();  // generator metadata, passed through

  nlohmann::json to_json() const;
  static LabeledPair from_json(const nlohmann::json& j);
};

LabeledPair load_labels(const std::filesystem::path& path);

// Throws unless every index is in range and anchors are unique.
void validate_pairs(const LabeledPair& lp, int n1, int n2);

struct TrainConfig {
  double margin = 1.0;
  int epochs = 400;
  double learning_rate = 1e-4;
  double beta1 = 0.9, beta2 = 0.999, epsilon = 1e-8;
  int folds = 5;
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
};

// ||a - p|| + max(0, m - ||a - n||)
double contrastive_loss(const Eigen::Ref<const Eigen::VectorXd>& a, const Eigen::Ref<const Eigen::VectorXd>& p,
                        const Eigen::Ref<const Eigen::VectorXd>& n, double margin);

struct LossGrad {
  double loss = 0;
  Eigen::VectorXd da, dp, dn;
};
// Subgradient 0 where a norm vanishes and at the hinge kink.
LossGrad contrastive_loss_grad(const Eigen::Ref<const Eigen::VectorXd>& a, const Eigen::Ref<const Eigen::VectorXd>& p,
                               const Eigen::Ref<const Eigen::VectorXd>& n, double margin);

// Nearest candidate row other than pos_index; ties to the lowest index.
int mine_negative(const Eigen::Ref<const Eigen::VectorXd>& anchor, const Eigen::MatrixXd& candidates, int pos_index);

// One bound pair ready for the encoder.
struct Batch {
  std::string id;
  graph::PageGraph graph;            // bound g1 (+) g2
  int n1 = 0;                        // |V1|
  std::vector<std::vector<int>> rows;  // embedding rows per vertex
  std::vector<std::pair<int, int>> pairs;  // local indices (anchor in V1, positive in V2)
  int table_columns = 0;             // from label metadata, 0 when unknown
};

Batch make_batch(std::string id, const graph::PageGraph& g1, const graph::PageGraph& g2, const LabeledPair& labels,
                 const features::Vocab& vocab);

// Trainable state: encoder and embedding table.
struct Model {
  gnn::ModelConfig config;
  gnn::EncoderStack stack;
  features::Vocab vocab;
  Eigen::MatrixXd table;
};

Model init_model(const gnn::ModelConfig& config, features::Vocab vocab, std::uint64_t seed);

class Adam {
 public:
  Adam() = default;
  Adam(const Model& m, const TrainConfig& c);
  // Applies one update; grads has the same layout as the model.
  void step(Model& m, const gnn::EncoderStack& grad_stack, const Eigen::MatrixXd& grad_table);
  long steps() const { return t_; }

 private:
  std::vector<Eigen::VectorXd> m1_, m2_;
  double lr_ = 0, b1_ = 0, b2_ = 0, eps_ = 0;
  long t_ = 0;
};

Eigen::MatrixXd batch_features(const Batch& b, const Model& m);

struct BatchEval {
  Eigen::MatrixXd embeddings;  // bound order
  double loss = 0;
};

// Forward and mean loss over the labeled pairs; no update.
BatchEval evaluate_batch(const Batch& b, const gnn::GraphMasks& masks, const Model& m, double margin);

// Forward, mine, backward, one optimizer step. Returns the batch loss
// measured before the update.
double train_step(const Batch& b, const gnn::GraphMasks& masks, Model& m, Adam& opt, double margin);

struct Trainer {
  const TrainConfig& config;
  Model& model;
  Adam optimizer;
  std::vector<const Batch*> batches;
  std::vector<gnn::GraphMasks> masks;  // parallel to batches

  Trainer(const TrainConfig& config, Model& model, std::vector<const Batch*> batches);
  // Visits batches in a seed-driven order for this epoch; mean batch loss.
  double run_epoch(int epoch);
};

struct Fold {
  std::vector<int> train, validation;
};

// Seeded shuffle then contiguous split; the first (n mod k) folds get one
// extra item.
std::vector<Fold> kfold_split(const std::vector<int>& ids, int k, std::uint64_t seed);

struct EpochLog {
  int epoch = 0;
  int fold = 0;  // -1 for the final fit on all batches
  double train_loss = 0;
  std::optional<double> val_loss, val_top1;  // absent for the final fit
  nlohmann::json to_json() const;
};

using EpochCallback = std::function<void(const EpochLog&)>;

// k-fold cross validation followed by a fit on every batch. Returns the
// final model.
Model cross_validate(const std::vector<Batch>& batches, const gnn::ModelConfig& model_config,
                     const features::Vocab& vocab, const TrainConfig& config, const EpochCallback& on_epoch);

// Validation loss and top-1 over a set of batches.
std::pair<double, double> validate(const std::vector<const Batch*>& batches, const Model& m, double margin);

}  // namespace spanflow::train
