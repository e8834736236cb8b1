#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "spanflow/pagegraph.hpp"

namespace spanflow::gnn {

enum class AttentionMode {
  Softmax,     // masked softmax of scaled dot products
  LiteralEq2,  // ratio of masked raw dot products, scaled by 1/sqrt(d_head)
};

struct ModelConfig {
  int dim = 360;
  int heads = 4;
  int layers = 8;
  int order = 1;  // neighborhood order x
  AttentionMode mode = AttentionMode::Softmax;
  // Zero the value vectors of pairs at hop radius > 1. Always active when
  // order > 1; at order 1 the mask keeps every attended pair anyway.
  bool regularization = false;
  graph::NeighborhoodRule rule = graph::NeighborhoodRule::And;

  int head_dim() const { return dim / heads; }
  int ff_dim() const { return 2 * dim; }
  bool value_mask_active() const { return regularization || order > 1; }
  void validate() const;

  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
};

const char* mode_name(AttentionMode m);
AttentionMode parse_mode(const std::string& s);

// Row-vector convention: layer input X is N x d, Q = X * wq. Head h owns
// columns [h * d_head, (h + 1) * d_head) of wq, wk, wv.
struct EncoderLayer {
  Eigen::MatrixXd wq, wk, wv;  // d x d
  Eigen::MatrixXd wo;          // d x d
  Eigen::MatrixXd w1;          // d x d_ff
  Eigen::VectorXd b1;          // d_ff
  Eigen::MatrixXd w2;          // d_ff x d
  Eigen::VectorXd b2;          // d
  Eigen::VectorXd ln1_gain, ln1_bias, ln2_gain, ln2_bias;
};

struct EncoderStack {
  std::vector<EncoderLayer> layers;
};

// Glorot-uniform matrices, zero biases, unit norm gains.
EncoderStack init_stack(const ModelConfig& config, std::uint64_t seed);
EncoderStack zeros_like(const EncoderStack& s);

// Visits every tensor as a flat contiguous buffer in a fixed order.
template <class Stack, class F>
void for_each_param(Stack& stack, F&& f) {
  auto flat = [](auto& m) { return std::span(m.data(), static_cast<std::size_t>(m.size())); };
  for (std::size_t l = 0; l < stack.layers.size(); ++l) {
    auto& L = stack.layers[l];
    const std::string p = "layer" + std::to_string(l) + ".";
    f(p + "wq", flat(L.wq), L.wq.rows(), L.wq.cols());
    f(p + "wk", flat(L.wk), L.wk.rows(), L.wk.cols());
    f(p + "wv", flat(L.wv), L.wv.rows(), L.wv.cols());
    f(p + "wo", flat(L.wo), L.wo.rows(), L.wo.cols());
    f(p + "w1", flat(L.w1), L.w1.rows(), L.w1.cols());
    f(p + "b1", flat(L.b1), L.b1.size(), Eigen::Index{1});
    f(p + "w2", flat(L.w2), L.w2.rows(), L.w2.cols());
    f(p + "b2", flat(L.b2), L.b2.size(), Eigen::Index{1});
    f(p + "ln1_gain", flat(L.ln1_gain), L.ln1_gain.size(), Eigen::Index{1});
    f(p + "ln1_bias", flat(L.ln1_bias), L.ln1_bias.size(), Eigen::Index{1});
    f(p + "ln2_gain", flat(L.ln2_gain), L.ln2_gain.size(), Eigen::Index{1});
    f(p + "ln2_bias", flat(L.ln2_bias), L.ln2_bias.size(), Eigen::Index{1});
  }
}

// Dense 0/1 masks for one (possibly bound) graph at the model's order.
struct GraphMasks {
  Eigen::MatrixXd attend;  // A_x
  Eigen::MatrixXd value;   // 1 where v_j keeps its content for query i
  int size() const { return static_cast<int>(attend.rows()); }
};

GraphMasks make_masks(const graph::PageGraph& g, const ModelConfig& config);

// [layer][head] -> N x N coefficients.
using AttentionTensor = std::vector<std::vector<Eigen::MatrixXd>>;

struct LayerCache {
  Eigen::MatrixXd x, q, k, v;
  std::vector<Eigen::MatrixXd> alpha;  // per head
  std::vector<Eigen::VectorXd> denom;  // literal mode, per head
  Eigen::MatrixXd concat;
  Eigen::MatrixXd xhat1, h1, z1, a1, xhat2;
  Eigen::VectorXd inv_std1, inv_std2;
};

struct ForwardCache {
  std::vector<LayerCache> layers;
  const GraphMasks* masks = nullptr;
  int n = 0;
  bool valid = false;
};

struct HeadsOutput {
  Eigen::MatrixXd concat;               // N x d, heads side by side
  std::vector<Eigen::MatrixXd> alpha;   // per head
  std::vector<Eigen::VectorXd> denom;   // literal mode only
};

// Masked multi-head aggregation given explicit projections: for each head
// alpha from q and k over the attend mask, then (alpha .* value mask) * v.
HeadsOutput attend(const Eigen::MatrixXd& q, const Eigen::MatrixXd& k, const Eigen::MatrixXd& v,
                   const GraphMasks& masks, const ModelConfig& config, int layer_index = 0);

struct LayerOutput {
  Eigen::MatrixXd output;
  std::vector<Eigen::MatrixXd> alpha;
};

// One encoder layer. `layer_index` only labels error messages.
LayerOutput attention_layer(const Eigen::MatrixXd& x, const GraphMasks& masks, const EncoderLayer& layer,
                            const ModelConfig& config, LayerCache* cache = nullptr, int layer_index = 0);

struct ForwardResult {
  Eigen::MatrixXd embeddings;
  AttentionTensor attention;
};

ForwardResult forward(const GraphMasks& masks, const Eigen::MatrixXd& features, const EncoderStack& stack,
                      const ModelConfig& config, ForwardCache* cache = nullptr);

struct Gradients {
  EncoderStack params;
  Eigen::MatrixXd input;  // d loss / d features
};

// Exact reverse mode through a cached forward pass. Throws ValidationError
// when the cache is missing or does not match the upstream gradient.
Gradients backward(const Eigen::MatrixXd& output_grad, const ForwardCache& cache, const EncoderStack& stack,
                   const ModelConfig& config);

// Head-averaged, identity-augmented, row-normalized per-layer maps
// multiplied so the result attributes final outputs to input vertices:
// R = M_L * ... * M_1.
Eigen::MatrixXd rollout(const AttentionTensor& attention);
Eigen::MatrixXd rollout_layer_map(const std::vector<Eigen::MatrixXd>& heads);

}  // namespace spanflow::gnn
