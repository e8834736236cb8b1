#include "spanflow/gnn.hpp"

#include <cmath>
#include <limits>

#include "spanflow/common.hpp"

namespace spanflow::gnn {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using nlohmann::json;

namespace {
constexpr double kLayerNormEps = 1e-5;
constexpr double kLiteralMinDenominator = 1e-12;
}  // namespace

const char* mode_name(AttentionMode m) { return m == AttentionMode::Softmax ? "softmax" : "literal_eq2"; }

AttentionMode parse_mode(const std::string& s) {
  if (s == "softmax") return AttentionMode::Softmax;
  if (s == "literal_eq2") return AttentionMode::LiteralEq2;
  throw ValidationError("unknown attention mode '" + s + "' (expected softmax or literal_eq2)");
}

void ModelConfig::validate() const {
  if (dim < 1) throw ValidationError("model dim must be positive");
  if (heads < 1) throw ValidationError("head count must be positive");
  if (dim % heads != 0) throw ValidationError("model dim " + std::to_string(dim) + " is not divisible by " +
                                              std::to_string(heads) + " heads");
  if (layers < 0) throw ValidationError("layer count must be non-negative");
  if (order < 1) throw ValidationError("neighborhood order must be >= 1");
}

json ModelConfig::to_json() const {
  return {{"d", dim},
          {"heads", heads},
          {"layers", layers},
          {"order", order},
          {"attention_mode", mode_name(mode)},
          {"regularization", value_mask_active()},
          {"neighborhood_rule", rule == graph::NeighborhoodRule::And ? "and" : "or"}};
}

ModelConfig ModelConfig::from_json(const json& j) {
  ModelConfig c;
  try {
    c.dim = j.at("d").get<int>();
    c.heads = j.at("heads").get<int>();
    c.layers = j.at("layers").get<int>();
    c.order = j.at("order").get<int>();
    c.mode = parse_mode(j.at("attention_mode").get<std::string>());
    c.regularization = j.at("regularization").get<bool>();
    c.rule = j.value("neighborhood_rule", std::string("and")) == "or" ? graph::NeighborhoodRule::LiteralOr
                                                                       : graph::NeighborhoodRule::And;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed model config: ") + e.what());
  }
  c.validate();
  return c;
}

namespace {

void glorot(MatrixXd& m, Eigen::Index rows, Eigen::Index cols, Eigen::Index fan_in, Eigen::Index fan_out,
            Rng& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  m.resize(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = rng.uniform(-a, a);
}

}  // namespace

EncoderStack init_stack(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  const int d = config.dim, dh = config.head_dim(), dff = config.ff_dim();
  EncoderStack s;
  s.layers.resize(config.layers);
  for (auto& L : s.layers) {
    glorot(L.wq, d, d, d, dh, rng);
    glorot(L.wk, d, d, d, dh, rng);
    glorot(L.wv, d, d, d, dh, rng);
    glorot(L.wo, d, d, d, d, rng);
    glorot(L.w1, d, dff, d, dff, rng);
    glorot(L.w2, dff, d, dff, d, rng);
    L.b1 = VectorXd::Zero(dff);
    L.b2 = VectorXd::Zero(d);
    L.ln1_gain = VectorXd::Ones(d);
    L.ln1_bias = VectorXd::Zero(d);
    L.ln2_gain = VectorXd::Ones(d);
    L.ln2_bias = VectorXd::Zero(d);
  }
  return s;
}

EncoderStack zeros_like(const EncoderStack& s) {
  EncoderStack z = s;
  for_each_param(z, [](const std::string&, std::span<double> buf, auto, auto) {
    std::fill(buf.begin(), buf.end(), 0.0);
  });
  return z;
}

GraphMasks make_masks(const graph::PageGraph& g, const ModelConfig& config) {
  config.validate();
  GraphMasks m;
  m.attend = graph::expand_neighborhood(g, config.order, config.rule).cast<double>();
  if (config.value_mask_active())
    m.value = graph::near_mask(g).cast<double>();
  else
    m.value = MatrixXd::Ones(g.size(), g.size());
  return m;
}

namespace {

// Per-row layer norm. Returns y and stores x-hat and 1/sigma.
MatrixXd layer_norm(const MatrixXd& x, const VectorXd& gain, const VectorXd& bias, MatrixXd& xhat,
                    VectorXd& inv_std) {
  const double d = static_cast<double>(x.cols());
  const VectorXd mean = x.rowwise().sum() / d;
  xhat = x.colwise() - mean;
  const VectorXd var = xhat.array().square().rowwise().sum() / d;
  inv_std = (var.array() + kLayerNormEps).rsqrt();
  xhat = xhat.array().colwise() * inv_std.array();
  MatrixXd y = xhat.array().rowwise() * gain.transpose().array();
  y.rowwise() += bias.transpose();
  return y;
}

MatrixXd layer_norm_backward(const MatrixXd& dy, const MatrixXd& xhat, const VectorXd& inv_std,
                             const VectorXd& gain, VectorXd& dgain, VectorXd& dbias) {
  dgain += (dy.array() * xhat.array()).colwise().sum().transpose().matrix();
  dbias += dy.colwise().sum().transpose();
  const double d = static_cast<double>(dy.cols());
  const MatrixXd g = dy.array().rowwise() * gain.transpose().array();
  const VectorXd mean_g = g.rowwise().sum() / d;
  const VectorXd mean_gx = (g.array() * xhat.array()).rowwise().sum() / d;
  MatrixXd dx = g;
  dx.colwise() -= mean_g;
  dx -= (xhat.array().colwise() * mean_gx.array()).matrix();
  return dx.array().colwise() * inv_std.array();
}

}  // namespace

HeadsOutput attend(const MatrixXd& q, const MatrixXd& k, const MatrixXd& v, const GraphMasks& masks,
                   const ModelConfig& config, int layer_index) {
  const Eigen::Index n = q.rows();
  const int dh = config.head_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  if (masks.size() != n) throw ValidationError("attention masks do not match the vertex count");

  HeadsOutput out;
  out.concat.resize(n, config.dim);
  out.alpha.reserve(config.heads);
  for (int h = 0; h < config.heads; ++h) {
    const auto qh = q.middleCols(h * dh, dh);
    const auto kh = k.middleCols(h * dh, dh);
    MatrixXd raw = qh * kh.transpose();
    MatrixXd alpha(n, n);
    if (config.mode == AttentionMode::Softmax) {
      constexpr double kNegInf = -std::numeric_limits<double>::infinity();
      MatrixXd s = (masks.attend.array() > 0).select(raw * scale, kNegInf);
      const VectorXd row_max = s.rowwise().maxCoeff();
      alpha = (s.colwise() - row_max).array().exp();
      const VectorXd z = alpha.rowwise().sum();
      alpha = alpha.array().colwise() / z.array();
    } else {
      MatrixXd masked = raw.cwiseProduct(masks.attend);
      VectorXd denom = masked.rowwise().sum();
      for (Eigen::Index i = 0; i < n; ++i)
        if (std::abs(denom(i)) < kLiteralMinDenominator)
          throw ComputeError("literal_eq2 attention: degenerate row for vertex " + std::to_string(i) +
                             " (layer " + std::to_string(layer_index) + ", head " + std::to_string(h) +
                             ", denominator " + std::to_string(denom(i)) + ")");
      alpha = (masked.array().colwise() / denom.array()) * scale;
      out.denom.push_back(std::move(denom));
    }
    out.concat.middleCols(h * dh, dh) = alpha.cwiseProduct(masks.value) * v.middleCols(h * dh, dh);
    out.alpha.push_back(std::move(alpha));
  }
  return out;
}

LayerOutput attention_layer(const MatrixXd& x, const GraphMasks& masks, const EncoderLayer& L,
                            const ModelConfig& config, LayerCache* cache, int layer_index) {
  MatrixXd q = x * L.wq, k = x * L.wk, v = x * L.wv;
  HeadsOutput heads = attend(q, k, v, masks, config, layer_index);
  MatrixXd& concat = heads.concat;
  LayerOutput out;
  out.alpha = heads.alpha;
  std::vector<VectorXd>& denoms = heads.denom;

  MatrixXd xhat1, xhat2;
  VectorXd inv1, inv2;
  MatrixXd h1 = layer_norm(x + concat * L.wo, L.ln1_gain, L.ln1_bias, xhat1, inv1);
  MatrixXd z1 = h1 * L.w1;
  z1.rowwise() += L.b1.transpose();
  MatrixXd a1 = z1.cwiseMax(0.0);
  MatrixXd r2 = a1 * L.w2;
  r2.rowwise() += L.b2.transpose();
  r2 += h1;
  out.output = layer_norm(r2, L.ln2_gain, L.ln2_bias, xhat2, inv2);

  if (cache) {
    cache->x = x;
    cache->q = std::move(q);
    cache->k = std::move(k);
    cache->v = std::move(v);
    cache->alpha = out.alpha;
    cache->denom = std::move(denoms);
    cache->concat = std::move(concat);
    cache->xhat1 = std::move(xhat1);
    cache->inv_std1 = std::move(inv1);
    cache->h1 = std::move(h1);
    cache->z1 = std::move(z1);
    cache->a1 = std::move(a1);
    cache->xhat2 = std::move(xhat2);
    cache->inv_std2 = std::move(inv2);
  }
  return out;
}

ForwardResult forward(const GraphMasks& masks, const MatrixXd& features, const EncoderStack& stack,
                      const ModelConfig& config, ForwardCache* cache) {
  config.validate();
  if (static_cast<int>(stack.layers.size()) != config.layers)
    throw ValidationError("encoder stack has " + std::to_string(stack.layers.size()) + " layers, config expects " +
                          std::to_string(config.layers));
  if (features.cols() != config.dim) throw ValidationError("feature width does not match model dim");
  if (!features.allFinite()) throw ValidationError("input features contain non-finite values");

  ForwardResult r;
  r.embeddings = features;
  if (cache) {
    cache->layers.assign(stack.layers.size(), {});
    cache->masks = &masks;
    cache->n = static_cast<int>(features.rows());
    cache->valid = false;
  }
  for (std::size_t l = 0; l < stack.layers.size(); ++l) {
    auto lo = attention_layer(r.embeddings, masks, stack.layers[l], config, cache ? &cache->layers[l] : nullptr,
                              static_cast<int>(l));
    r.embeddings = std::move(lo.output);
    r.attention.push_back(std::move(lo.alpha));
  }
  if (cache) cache->valid = true;
  return r;
}

Gradients backward(const MatrixXd& output_grad, const ForwardCache& cache, const EncoderStack& stack,
                   const ModelConfig& config) {
  if (!cache.valid || cache.masks == nullptr) throw ValidationError("backward: no forward cache");
  if (cache.layers.size() != stack.layers.size()) throw ValidationError("backward: cache/stack layer mismatch");
  if (output_grad.rows() != cache.n || output_grad.cols() != config.dim)
    throw ValidationError("backward: upstream gradient shape does not match the cached forward pass");

  const GraphMasks& masks = *cache.masks;
  const int dh = config.head_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  Gradients g{zeros_like(stack), MatrixXd()};
  MatrixXd dy = output_grad;

  for (std::size_t li = stack.layers.size(); li-- > 0;) {
    const EncoderLayer& L = stack.layers[li];
    const LayerCache& c = cache.layers[li];
    EncoderLayer& G = g.params.layers[li];
    const Eigen::Index n = c.x.rows();

    MatrixXd dr2 = layer_norm_backward(dy, c.xhat2, c.inv_std2, L.ln2_gain, G.ln2_gain, G.ln2_bias);
    G.b2 += dr2.colwise().sum().transpose();
    G.w2 += c.a1.transpose() * dr2;
    MatrixXd dz1 = (dr2 * L.w2.transpose()).cwiseProduct((c.z1.array() > 0).cast<double>().matrix());
    G.b1 += dz1.colwise().sum().transpose();
    G.w1 += c.h1.transpose() * dz1;
    MatrixXd dh1 = dr2 + dz1 * L.w1.transpose();

    MatrixXd dr1 = layer_norm_backward(dh1, c.xhat1, c.inv_std1, L.ln1_gain, G.ln1_gain, G.ln1_bias);
    G.wo += c.concat.transpose() * dr1;
    MatrixXd dconcat = dr1 * L.wo.transpose();

    MatrixXd dq(n, config.dim), dk(n, config.dim), dv(n, config.dim);
    for (int h = 0; h < config.heads; ++h) {
      const auto qh = c.q.middleCols(h * dh, dh);
      const auto kh = c.k.middleCols(h * dh, dh);
      const auto vh = c.v.middleCols(h * dh, dh);
      const auto doh = dconcat.middleCols(h * dh, dh);
      const MatrixXd& alpha = c.alpha[h];
      const MatrixXd w = alpha.cwiseProduct(masks.value);
      dv.middleCols(h * dh, dh) = w.transpose() * doh;
      const MatrixXd dalpha = (doh * vh.transpose()).cwiseProduct(masks.value);
      const VectorXd rowdot = alpha.cwiseProduct(dalpha).rowwise().sum();
      MatrixXd draw;
      if (config.mode == AttentionMode::Softmax) {
        draw = (alpha.array() * (dalpha.colwise() - rowdot).array()) * scale;
      } else {
        draw = ((dalpha * scale).colwise() - rowdot).cwiseProduct(masks.attend);
        draw = draw.array().colwise() / c.denom[h].array();
      }
      dq.middleCols(h * dh, dh) = draw * kh;
      dk.middleCols(h * dh, dh) = draw.transpose() * qh;
    }
    G.wq += c.x.transpose() * dq;
    G.wk += c.x.transpose() * dk;
    G.wv += c.x.transpose() * dv;
    dy = dr1 + dq * L.wq.transpose() + dk * L.wk.transpose() + dv * L.wv.transpose();
  }
  g.input = std::move(dy);
  return g;
}

Eigen::MatrixXd rollout_layer_map(const std::vector<MatrixXd>& heads) {
  if (heads.empty()) throw ValidationError("rollout: layer has no heads");
  MatrixXd m = MatrixXd::Zero(heads.front().rows(), heads.front().cols());
  for (const auto& a : heads) m += a;
  m /= static_cast<double>(heads.size());
  m += MatrixXd::Identity(m.rows(), m.cols());
  const VectorXd z = m.rowwise().sum();
  return m.array().colwise() / z.array();
}

Eigen::MatrixXd rollout(const AttentionTensor& attention) {
  if (attention.empty()) throw ValidationError("rollout needs at least one captured layer");
  MatrixXd r = rollout_layer_map(attention.front());
  for (std::size_t l = 1; l < attention.size(); ++l) r = rollout_layer_map(attention[l]) * r;
  return r;
}

}  // namespace spanflow::gnn
