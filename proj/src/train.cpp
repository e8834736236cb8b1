#include "spanflow/train.hpp"

#include <cmath>
#include <limits>
#include <set>
#include <unordered_map>

#include "spanflow/common.hpp"
#include "spanflow/eval.hpp"

namespace spanflow::train {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using nlohmann::json;

namespace {
constexpr std::uint64_t kStackStream = 1;
constexpr std::uint64_t kTableStream = 2;
constexpr std::uint64_t kEpochStream = 3;
constexpr std::uint64_t kFoldStream = 4;
constexpr std::uint64_t kFoldModelStream = 5;
}  // namespace

json LabeledPair::to_json() const {
  json p = json::array();
  for (auto [a, b] : pairs) p.push_back({a, b});
  json j = extra.is_object() ? extra : json::object();
  j["graph1"] = graph1_id;
  j["graph2"] = graph2_id;
  j["pairs"] = std::move(p);
  return j;
}

LabeledPair LabeledPair::from_json(const json& j) {
  LabeledPair lp;
  try {
    lp.graph1_id = j.at("graph1").get<std::string>();
    lp.graph2_id = j.at("graph2").get<std::string>();
    for (const auto& p : j.at("pairs")) {
      if (!p.is_array() || p.size() != 2) throw ValidationError("label pairs must be [anchor, positive]");
      lp.pairs.emplace_back(p[0].get<int>(), p[1].get<int>());
    }
    for (auto it = j.begin(); it != j.end(); ++it)
      if (it.key() != "graph1" && it.key() != "graph2" && it.key() != "pairs") lp.extra[it.key()] = it.value();
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed label file: ") + e.what());
  }
  return lp;
}

LabeledPair load_labels(const std::filesystem::path& path) {
  try {
    return LabeledPair::from_json(json::parse(read_file(path)));
  } catch (const json::parse_error& e) {
    throw ValidationError(path.string() + ": " + e.what());
  } catch (const ValidationError& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

void validate_pairs(const LabeledPair& lp, int n1, int n2) {
  std::set<int> anchors;
  for (std::size_t i = 0; i < lp.pairs.size(); ++i) {
    auto [a, p] = lp.pairs[i];
    if (a < 0 || a >= n1 || p < 0 || p >= n2)
      throw ValidationError("label pair " + std::to_string(i) + " (" + std::to_string(a) + ", " + std::to_string(p) +
                            ") is out of range for graphs of size " + std::to_string(n1) + " and " +
                            std::to_string(n2));
    if (!anchors.insert(a).second) throw ValidationError("anchor " + std::to_string(a) + " is labeled twice");
  }
}

void TrainConfig::validate() const {
  if (!(margin > 0)) throw ValidationError("margin must be positive");
  if (epochs < 1) throw ValidationError("epochs must be >= 1");
  if (!(learning_rate >= 0) || !std::isfinite(learning_rate)) throw ValidationError("learning rate must be >= 0");
  if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1)) throw ValidationError("betas must lie in [0, 1)");
  if (!(epsilon > 0)) throw ValidationError("epsilon must be positive");
  if (folds < 2) throw ValidationError("folds must be >= 2");
}

json TrainConfig::to_json() const {
  return {{"margin", margin}, {"epochs", epochs}, {"learning_rate", learning_rate}, {"beta1", beta1},
          {"beta2", beta2},   {"epsilon", epsilon}, {"folds", folds},               {"seed", seed}};
}

LossGrad contrastive_loss_grad(const Eigen::Ref<const VectorXd>& a, const Eigen::Ref<const VectorXd>& p,
                               const Eigen::Ref<const VectorXd>& n, double margin) {
  if (a.size() != p.size() || a.size() != n.size()) throw ValidationError("contrastive loss: dimension mismatch");
  LossGrad g;
  const VectorXd ap = a - p, an = a - n;
  const double dap = ap.norm(), dan = an.norm();
  g.loss = dap + std::max(0.0, margin - dan);
  g.da = VectorXd::Zero(a.size());
  g.dp = VectorXd::Zero(a.size());
  g.dn = VectorXd::Zero(a.size());
  if (dap > 0) {
    g.da += ap / dap;
    g.dp -= ap / dap;
  }
  if (margin - dan > 0 && dan > 0) {
    g.da -= an / dan;
    g.dn += an / dan;
  }
  return g;
}

double contrastive_loss(const Eigen::Ref<const VectorXd>& a, const Eigen::Ref<const VectorXd>& p,
                        const Eigen::Ref<const VectorXd>& n, double margin) {
  if (a.size() != p.size() || a.size() != n.size()) throw ValidationError("contrastive loss: dimension mismatch");
  return (a - p).norm() + std::max(0.0, margin - (a - n).norm());
}

int mine_negative(const Eigen::Ref<const VectorXd>& anchor, const MatrixXd& candidates, int pos_index) {
  if (candidates.rows() < 2) throw ValidationError("mining needs at least two candidates");
  if (pos_index < 0 || pos_index >= candidates.rows()) throw ValidationError("positive index out of range");
  const VectorXd d = (candidates.rowwise() - anchor.transpose()).rowwise().squaredNorm();
  int best = -1;
  for (Eigen::Index j = 0; j < d.size(); ++j) {
    if (j == pos_index) continue;
    if (best < 0 || d(j) < d(best)) best = static_cast<int>(j);
  }
  return best;
}

Batch make_batch(std::string id, const graph::PageGraph& g1, const graph::PageGraph& g2, const LabeledPair& labels,
                 const features::Vocab& vocab) {
  Batch b;
  b.id = std::move(id);
  b.graph = graph::bind_pair(g1, g2);
  b.n1 = g1.size();
  auto index_of = [](const graph::PageGraph& g) {
    std::unordered_map<int, int> m;
    for (int i = 0; i < g.size(); ++i) m[g.vertices[i].span_id] = i;
    return m;
  };
  const auto idx1 = index_of(g1), idx2 = index_of(g2);
  LabeledPair local = labels;
  for (auto& [a, p] : local.pairs) {
    auto ia = idx1.find(a), ip = idx2.find(p);
    if (ia == idx1.end() || ip == idx2.end())
      throw ValidationError(b.id + ": label (" + std::to_string(a) + ", " + std::to_string(p) +
                            ") names a span id that is not in the graphs");
    a = ia->second;
    p = ip->second;
  }
  validate_pairs(local, g1.size(), g2.size());
  if (g2.size() < 2) throw ValidationError(b.id + ": page 2 needs at least two spans for negative mining");
  b.pairs = std::move(local.pairs);
  b.rows.reserve(b.graph.size());
  for (const auto& v : b.graph.vertices) b.rows.push_back(features::span_rows(v, vocab));
  b.table_columns = labels.extra.value("table_columns", 0);
  return b;
}

Model init_model(const gnn::ModelConfig& config, features::Vocab vocab, std::uint64_t seed) {
  config.validate();
  if (vocab.dim() != config.dim)
    throw ValidationError("vocab dimension " + std::to_string(vocab.dim()) + " does not match model dim " +
                          std::to_string(config.dim));
  Model m;
  m.config = config;
  m.stack = gnn::init_stack(config, derive_seed(seed, kStackStream));
  m.table = features::init_embedding_table(vocab, derive_seed(seed, kTableStream)).weights;
  m.vocab = std::move(vocab);
  return m;
}

namespace {

template <class F>
void for_each_buffer(gnn::EncoderStack& stack, MatrixXd& table, F&& f) {
  gnn::for_each_param(stack, [&](const std::string&, std::span<double> buf, auto, auto) { f(buf); });
  f(std::span<double>(table.data(), static_cast<std::size_t>(table.size())));
}

}  // namespace

Adam::Adam(const Model& m, const TrainConfig& c)
    : lr_(c.learning_rate), b1_(c.beta1), b2_(c.beta2), eps_(c.epsilon) {
  gnn::EncoderStack s = m.stack;
  MatrixXd t = m.table;
  for_each_buffer(s, t, [&](std::span<double> buf) {
    m1_.push_back(VectorXd::Zero(static_cast<Eigen::Index>(buf.size())));
    m2_.push_back(VectorXd::Zero(static_cast<Eigen::Index>(buf.size())));
  });
}

void Adam::step(Model& m, const gnn::EncoderStack& grad_stack, const MatrixXd& grad_table) {
  ++t_;
  const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
  std::vector<std::span<const double>> grads;
  gnn::for_each_param(grad_stack, [&](const std::string&, auto buf, auto, auto) { grads.push_back(buf); });
  grads.emplace_back(grad_table.data(), static_cast<std::size_t>(grad_table.size()));
  std::size_t k = 0;
  for_each_buffer(m.stack, m.table, [&](std::span<double> w) {
    const auto g = grads.at(k);
    if (g.size() != w.size()) throw ValidationError("optimizer: gradient layout does not match parameters");
    VectorXd& a = m1_[k];
    VectorXd& b = m2_[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      a(i) = b1_ * a(i) + (1 - b1_) * g[i];
      b(i) = b2_ * b(i) + (1 - b2_) * g[i] * g[i];
      w[i] -= lr_ * (a(i) / c1) / (std::sqrt(b(i) / c2) + eps_);
    }
    ++k;
  });
}

MatrixXd batch_features(const Batch& b, const Model& m) {
  MatrixXd x(b.graph.size(), m.config.dim);
  features::EmbeddingTable view{m.table};
  for (int i = 0; i < b.graph.size(); ++i) x.row(i) = features::embed_rows(b.rows[i], view).transpose();
  return x;
}

namespace {

struct Mined {
  double loss = 0;
  MatrixXd grad;  // d mean loss / d embeddings, filled when requested
};

Mined mined_loss(const Batch& b, const MatrixXd& e, double margin, bool want_grad) {
  Mined r;
  if (b.pairs.empty()) throw ValidationError(b.id + ": no labeled pairs");
  const Eigen::Index n2 = e.rows() - b.n1;
  const MatrixXd page2 = e.bottomRows(n2);
  if (want_grad) r.grad = MatrixXd::Zero(e.rows(), e.cols());
  const double scale = 1.0 / static_cast<double>(b.pairs.size());
  for (std::size_t i = 0; i < b.pairs.size(); ++i) {
    auto [a, p] = b.pairs[i];
    const int neg = mine_negative(e.row(a).transpose(), page2, p);
    const auto g = contrastive_loss_grad(e.row(a).transpose(), page2.row(p).transpose(), page2.row(neg).transpose(),
                                         margin);
    if (!std::isfinite(g.loss))
      throw ComputeError("non-finite loss in batch '" + b.id + "' at labeled pair " + std::to_string(i));
    r.loss += g.loss * scale;
    if (want_grad) {
      r.grad.row(a) += scale * g.da.transpose();
      r.grad.row(b.n1 + p) += scale * g.dp.transpose();
      r.grad.row(b.n1 + neg) += scale * g.dn.transpose();
    }
  }
  return r;
}

}  // namespace

BatchEval evaluate_batch(const Batch& b, const gnn::GraphMasks& masks, const Model& m, double margin) {
  BatchEval r;
  r.embeddings = gnn::forward(masks, batch_features(b, m), m.stack, m.config).embeddings;
  r.loss = mined_loss(b, r.embeddings, margin, false).loss;
  return r;
}

double train_step(const Batch& b, const gnn::GraphMasks& masks, Model& m, Adam& opt, double margin) {
  gnn::ForwardCache cache;
  const auto fr = gnn::forward(masks, batch_features(b, m), m.stack, m.config, &cache);
  const Mined mined = mined_loss(b, fr.embeddings, margin, true);
  const gnn::Gradients g = gnn::backward(mined.grad, cache, m.stack, m.config);
  MatrixXd table_grad = MatrixXd::Zero(m.table.rows(), m.table.cols());
  for (int i = 0; i < b.graph.size(); ++i) features::accumulate_rows_grad(b.rows[i], g.input.row(i).transpose(), table_grad);
  opt.step(m, g.params, table_grad);
  return mined.loss;
}

Trainer::Trainer(const TrainConfig& c, Model& m, std::vector<const Batch*> bs)
    : config(c), model(m), optimizer(m, c), batches(std::move(bs)) {
  config.validate();
  masks.reserve(batches.size());
  for (const Batch* b : batches) masks.push_back(gnn::make_masks(b->graph, model.config));
}

double Trainer::run_epoch(int epoch) {
  if (batches.empty()) throw ValidationError("no training batches");
  std::vector<std::size_t> order(batches.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(derive_seed(derive_seed(config.seed, kEpochStream), static_cast<std::uint64_t>(epoch)));
  rng.shuffle(order);
  double total = 0;
  for (std::size_t i : order) total += train_step(*batches[i], masks[i], model, optimizer, config.margin);
  return total / static_cast<double>(batches.size());
}

std::vector<Fold> kfold_split(const std::vector<int>& ids, int k, std::uint64_t seed) {
  if (k < 2) throw ValidationError("k-fold split needs k >= 2");
  if (static_cast<std::size_t>(k) > ids.size())
    throw ValidationError("cannot split " + std::to_string(ids.size()) + " batches into " + std::to_string(k) +
                          " folds");
  std::vector<int> shuffled = ids;
  Rng rng(derive_seed(seed, kFoldStream));
  rng.shuffle(shuffled);
  std::vector<Fold> folds(k);
  const std::size_t base = shuffled.size() / k, extra = shuffled.size() % k;
  std::size_t pos = 0;
  for (int f = 0; f < k; ++f) {
    const std::size_t len = base + (static_cast<std::size_t>(f) < extra ? 1 : 0);
    for (std::size_t i = 0; i < shuffled.size(); ++i)
      (i >= pos && i < pos + len ? folds[f].validation : folds[f].train).push_back(shuffled[i]);
    pos += len;
  }
  return folds;
}

json EpochLog::to_json() const {
  return {{"epoch", epoch},
          {"fold", fold},
          {"train_loss", train_loss},
          {"val_loss", val_loss ? json(*val_loss) : json(nullptr)},
          {"val_top1", val_top1 ? json(*val_top1) : json(nullptr)}};
}

std::pair<double, double> validate(const std::vector<const Batch*>& batches, const Model& m, double margin) {
  if (batches.empty()) return {0.0, 0.0};
  eval::PairingTally tally({1});
  double loss = 0;
  for (const Batch* b : batches) {
    const auto masks = gnn::make_masks(b->graph, m.config);
    const auto r = evaluate_batch(*b, masks, m, margin);
    loss += r.loss;
    tally.add(r.embeddings.topRows(b->n1), r.embeddings.bottomRows(r.embeddings.rows() - b->n1), b->pairs);
  }
  return {loss / static_cast<double>(batches.size()), tally.rate(1)};
}

Model cross_validate(const std::vector<Batch>& batches, const gnn::ModelConfig& model_config,
                     const features::Vocab& vocab, const TrainConfig& config, const EpochCallback& on_epoch) {
  config.validate();
  std::vector<int> ids(batches.size());
  for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = static_cast<int>(i);
  const auto folds = kfold_split(ids, config.folds, config.seed);

  for (int f = 0; f < config.folds; ++f) {
    Model m = init_model(model_config, vocab, derive_seed(derive_seed(config.seed, kFoldModelStream), f));
    std::vector<const Batch*> train, val;
    for (int i : folds[f].train) train.push_back(&batches[i]);
    for (int i : folds[f].validation) val.push_back(&batches[i]);
    Trainer t(config, m, train);
    for (int e = 1; e <= config.epochs; ++e) {
      EpochLog log;
      log.epoch = e;
      log.fold = f;
      log.train_loss = t.run_epoch(e);
      std::tie(log.val_loss, log.val_top1) = validate(val, m, config.margin);
      if (on_epoch) on_epoch(log);
    }
  }

  Model final_model = init_model(model_config, vocab, config.seed);
  std::vector<const Batch*> all;
  for (const auto& b : batches) all.push_back(&b);
  Trainer t(config, final_model, all);
  for (int e = 1; e <= config.epochs; ++e) {
    EpochLog log;
    log.epoch = e;
    log.fold = -1;
    log.train_loss = t.run_epoch(e);
    if (on_epoch) on_epoch(log);
  }
  return final_model;
}

}  // namespace spanflow::train
