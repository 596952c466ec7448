#pragma once

// Forward pass of the toy transformer with transcoders read alongside each
// MLP, and direct linear attribution between the resulting graph nodes.
//
// Attribution freezes the attention patterns and LayerNorm denominators of
// the actual forward pass. With those frozen, every residual-stream write
// (token embedding, a_f * decoder column f, transcoder error, decoder bias,
// LayerNorm shift) reaches every later read point through a fixed linear map
// that skips MLP blocks, whose outputs are themselves accounted for by
// feature, error and bias terms. An edge is the contribution of one source
// write to one target's pre-activation (or logit), so for every target
//
//   sum(incoming edges) + bias path + excluded sources = pre-activation.
//
// Contributions are computed by pulling each target's read vector backwards
// through the frozen attention blocks.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "graph.hpp"
#include "parallel.hpp"
#include "toy_model.hpp"
#include "transforms.hpp"

namespace pathtrace {

struct LayerTrace {
  Matrix resid_pre;                  // T x d, stream entering the block
  Vector ln1_inv_scale;              // T, 1 / sigma of the attention LayerNorm
  std::vector<Matrix> patterns;      // per head, T x T, row = query position
  Matrix attn_out;                   // T x d
  Matrix resid_mid;                  // T x d, stream read by the MLP / transcoder
  Vector ln2_inv_scale;              // T
  Matrix mlp_input;                  // T x d, after LayerNorm when enabled
  Matrix pre_activations;            // T x d_features
  Matrix activations;                // T x d_features, rectified
  Matrix reconstruction;             // T x d
  Matrix mlp_out;                    // T x d, true MLP output
  Matrix error;                      // T x d, mlp_out - reconstruction
};

struct TraceCache {
  std::vector<std::uint32_t> tokens;
  std::vector<LayerTrace> layers;
  Matrix resid_final;    // T x d
  double final_inv_scale = 1.0;
  Vector logits;         // vocab, final position

  std::size_t positions() const { return tokens.size(); }
};

namespace trace_detail {

inline double gelu(double x) {
  constexpr double k = 0.7978845608028654;  // sqrt(2 / pi)
  return 0.5 * x * (1.0 + std::tanh(k * (x + 0.044715 * x * x * x)));
}

// Row-wise LayerNorm; writes 1/sigma per row into inv_scale.
inline Matrix layer_norm(const Matrix& x, const Vector& gamma, const Vector& beta, double eps,
                         Vector& inv_scale) {
  Matrix out(x.rows(), x.cols());
  inv_scale.resize(x.rows());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double mean = x.row(r).mean();
    const Eigen::RowVectorXd centered = x.row(r).array() - mean;
    const double var = centered.squaredNorm() / static_cast<double>(x.cols());
    const double inv = 1.0 / std::sqrt(var + eps);
    inv_scale(r) = inv;
    out.row(r) = (centered.array() * inv * gamma.transpose().array() + beta.transpose().array());
  }
  return out;
}

// Transpose of the frozen LayerNorm linear part v -> gamma * (v - mean(v)) * inv,
// applied to every row of `adj`.
inline Matrix layer_norm_adjoint(const Matrix& adj, const Vector& gamma, double inv) {
  Matrix scaled = (adj.array().rowwise() * gamma.transpose().array()) * inv;
  Eigen::VectorXd means = scaled.rowwise().mean();
  scaled.colwise() -= means;
  return scaled;
}

}  // namespace trace_detail

// Byte-level tokenizer: every UTF-8 byte becomes one token, reduced modulo
// the vocabulary size.
inline std::vector<std::uint32_t> tokenize_bytes(std::string_view text, std::uint32_t vocab_size) {
  std::vector<std::uint32_t> out;
  out.reserve(text.size());
  for (unsigned char c : text) out.push_back(static_cast<std::uint32_t>(c) % vocab_size);
  return out;
}

inline TraceCache forward(const ToyModel& model, std::span<const std::uint32_t> tokens) {
  using trace_detail::layer_norm;
  const auto& cfg = model.config();
  const auto& spec = model.spec;
  if (tokens.empty()) throw Error(ErrorCode::EmptyPrompt, "prompt has no tokens");
  if (tokens.size() > cfg.max_seq_len)
    throw Error(ErrorCode::TokenOutOfRange, "prompt length " + std::to_string(tokens.size()) +
                                                " exceeds max_seq_len " +
                                                std::to_string(cfg.max_seq_len));
  for (std::size_t i = 0; i < tokens.size(); ++i)
    if (tokens[i] >= cfg.vocab_size)
      throw Error(ErrorCode::TokenOutOfRange, "token " + std::to_string(tokens[i]) +
                                                  " at position " + std::to_string(i) +
                                                  " is outside the vocabulary");

  const auto T = static_cast<Eigen::Index>(tokens.size());
  const Eigen::Index dh = cfg.d_head();
  const double score_scale = 1.0 / std::sqrt(static_cast<double>(dh));

  TraceCache cache;
  cache.tokens.assign(tokens.begin(), tokens.end());
  Matrix x(T, cfg.d_model);
  for (Eigen::Index p = 0; p < T; ++p) x.row(p) = spec.embedding.row(tokens[p]);

  cache.layers.resize(cfg.n_layers);
  for (std::uint32_t l = 0; l < cfg.n_layers; ++l) {
    const auto& w = spec.layers[l];
    const auto& tc = model.bank.layers[l];
    auto& lt = cache.layers[l];
    lt.resid_pre = x;

    const Matrix attn_in = cfg.use_layernorm
                               ? layer_norm(x, w.ln1_gamma, w.ln1_beta, cfg.ln_eps, lt.ln1_inv_scale)
                               : x;
    lt.attn_out = Matrix::Zero(T, cfg.d_model);
    lt.patterns.resize(cfg.n_heads);
    for (std::uint32_t h = 0; h < cfg.n_heads; ++h) {
      const Matrix q = attn_in * w.wq.middleRows(h * dh, dh).transpose();
      const Matrix k = attn_in * w.wk.middleRows(h * dh, dh).transpose();
      const Matrix v = attn_in * w.wv.middleRows(h * dh, dh).transpose();
      Matrix scores = (q * k.transpose()) * score_scale;
      Matrix& pattern = lt.patterns[h];
      pattern = Matrix::Zero(T, T);
      for (Eigen::Index p = 0; p < T; ++p) {
        const double max_score = scores.row(p).head(p + 1).maxCoeff();
        double total = 0.0;
        for (Eigen::Index j = 0; j <= p; ++j) {
          pattern(p, j) = std::exp(scores(p, j) - max_score);
          total += pattern(p, j);
        }
        pattern.row(p).head(p + 1) /= total;
      }
      lt.attn_out += (pattern * v) * w.wo.middleCols(h * dh, dh).transpose();
    }
    lt.resid_mid = x + lt.attn_out;

    lt.mlp_input = cfg.use_layernorm ? layer_norm(lt.resid_mid, w.ln2_gamma, w.ln2_beta, cfg.ln_eps,
                                                  lt.ln2_inv_scale)
                                     : lt.resid_mid;
    lt.pre_activations = (lt.mlp_input * tc.encoder.transpose()).rowwise() +
                         tc.encoder_bias.transpose();
    lt.activations = lt.pre_activations.cwiseMax(0.0);
    lt.reconstruction =
        (lt.activations * tc.decoder.transpose()).rowwise() + tc.decoder_bias.transpose();

    Matrix hidden = (lt.mlp_input * w.mlp_in.transpose()).rowwise() + w.mlp_in_bias.transpose();
    hidden = hidden.unaryExpr([](double z) { return trace_detail::gelu(z); });
    lt.mlp_out = (hidden * w.mlp_out.transpose()).rowwise() + w.mlp_out_bias.transpose();
    lt.error = lt.mlp_out - lt.reconstruction;

    x = lt.resid_mid + lt.mlp_out;
  }
  cache.resid_final = x;

  Eigen::RowVectorXd last = x.row(T - 1);
  if (cfg.use_layernorm) {
    Vector inv;
    last = layer_norm(last, spec.final_ln_gamma, spec.final_ln_beta, cfg.ln_eps, inv);
    cache.final_inv_scale = inv(0);
  }
  cache.logits = (last * spec.unembedding).transpose();
  return cache;
}

// Rectified transcoder activations of one layer, T x d_features.
inline const Matrix& feature_activations(const TraceCache& cache, std::size_t layer) {
  if (layer >= cache.layers.size())
    throw Error(ErrorCode::InvalidModel, "layer " + std::to_string(layer) + " out of range");
  return cache.layers[layer].activations;
}

struct SourceKinds {
  bool embeddings = true;
  bool features = true;
  bool errors = true;
};

struct AttributionConfig {
  bool include_error_nodes = true;
  SourceKinds sources;
  std::size_t max_logit_nodes = 5;
  // Only targets at the final token position receive edges.
  bool final_position_only = false;
  std::size_t workers = 1;
};

// Decomposition of one target's value.
struct TargetTerms {
  FeatureNode target;
  double edge_sum = 0.0;   // sum of incoming edge weights, in source order
  double bias = 0.0;       // encoder bias, decoder biases and LayerNorm shifts
  double excluded = 0.0;   // sources not represented as nodes or disabled
  double value = 0.0;      // actual pre-activation or logit from the forward pass
};

struct Attribution {
  AttributionGraph graph;
  std::vector<TargetTerms> targets;
};

namespace trace_detail {

// Output of one read point: edges into its targets plus their term sums.
struct ReadPointResult {
  std::vector<AttributionEdge> edges;
  std::vector<TargetTerms> terms;
};

struct ReadPoint {
  std::uint32_t layer = 0;  // transcoder layer, or n_layers for logits
  std::uint32_t position = 0;
  std::vector<std::uint32_t> indices;  // feature indices or logit token ids
};

class Attributor {
 public:
  Attributor(const ToyModel& model, const TraceCache& cache, const AttributionConfig& config)
      : model_(model), cache_(cache), config_(config), cfg_(model.config()) {}

  ReadPointResult run(const ReadPoint& rp) const {
    const auto k = static_cast<Eigen::Index>(rp.indices.size());
    const bool is_logit = rp.layer == cfg_.n_layers;
    const auto p = rp.position;

    ReadPointResult out;
    out.terms.resize(rp.indices.size());
    Matrix read(k, cfg_.d_model);
    for (Eigen::Index r = 0; r < k; ++r) {
      auto& t = out.terms[r];
      const auto idx = rp.indices[r];
      if (is_logit) {
        t.target = {cfg_.n_layers, NodeKind::Logit, idx, p};
        read.row(r) = model_.spec.unembedding.col(idx).transpose();
        t.value = cache_.logits(idx);
        if (cfg_.use_layernorm) t.bias += read.row(r).dot(model_.spec.final_ln_beta);
      } else {
        const auto& tc = model_.bank.layers[rp.layer];
        t.target = {rp.layer + 1, NodeKind::Feature, idx, p};
        read.row(r) = tc.encoder.row(idx);
        t.value = cache_.layers[rp.layer].pre_activations(p, idx);
        t.bias += tc.encoder_bias(idx);
        if (cfg_.use_layernorm) t.bias += read.row(r).dot(model_.spec.layers[rp.layer].ln2_beta);
      }
    }
    if (cfg_.use_layernorm) {
      read = is_logit ? layer_norm_adjoint(read, model_.spec.final_ln_gamma, cache_.final_inv_scale)
                      : layer_norm_adjoint(read, model_.spec.layers[rp.layer].ln2_gamma,
                                           cache_.layers[rp.layer].ln2_inv_scale(p));
    }

    // adjoint[q] is k x d: sensitivity of each target to the stream at q.
    std::vector<Matrix> adjoint(p + 1, Matrix::Zero(k, cfg_.d_model));
    adjoint[p] = read;
    int top = static_cast<int>(rp.layer);
    if (is_logit) {
      // The logit reads the final stream directly; the last block's writes
      // sit right before it.
      collect_writes(cfg_.n_layers, adjoint, out);
      top = static_cast<int>(cfg_.n_layers) - 1;
    }
    for (int w = top; w >= 0; --w) {
      attention_backward(static_cast<std::uint32_t>(w), adjoint, out);
      collect_writes(static_cast<std::uint32_t>(w), adjoint, out);
    }
    return out;
  }

 private:
  // Adjoint at resid_mid[layer] -> adjoint at resid_pre[layer], adding the
  // attention LayerNorm shift to the bias path.
  void attention_backward(std::uint32_t layer, std::vector<Matrix>& adjoint,
                          ReadPointResult& out) const {
    const auto& w = model_.spec.layers[layer];
    const auto& lt = cache_.layers[layer];
    const Eigen::Index dh = cfg_.d_head();
    const auto n = adjoint.size();
    const Eigen::Index k = adjoint[0].rows();

    std::vector<Matrix> value_adj(n, Matrix::Zero(k, cfg_.d_model));
    for (std::uint32_t h = 0; h < cfg_.n_heads; ++h) {
      const auto wo_h = w.wo.middleCols(h * dh, dh);
      const auto wv_h = w.wv.middleRows(h * dh, dh);
      std::vector<Matrix> z(n);
      for (std::size_t q = 0; q < n; ++q) z[q] = adjoint[q] * wo_h;
      for (std::size_t j = 0; j < n; ++j) {
        Matrix y = Matrix::Zero(k, dh);
        for (std::size_t q = j; q < n; ++q) {
          const double a = lt.patterns[h](static_cast<Eigen::Index>(q), static_cast<Eigen::Index>(j));
          if (a != 0.0) y += a * z[q];
        }
        value_adj[j] += y * wv_h;
      }
    }
    for (std::size_t j = 0; j < n; ++j) {
      if (cfg_.use_layernorm) {
        const Vector shift = value_adj[j] * w.ln1_beta;
        for (Eigen::Index r = 0; r < k; ++r) out.terms[r].bias += shift(r);
        adjoint[j] += trace_detail::layer_norm_adjoint(value_adj[j], w.ln1_gamma,
                                                       lt.ln1_inv_scale(static_cast<Eigen::Index>(j)));
      } else {
        adjoint[j] += value_adj[j];
      }
    }
  }

  // Sources written into resid_pre[stream]: embeddings for stream 0,
  // otherwise the outputs of transcoder stream - 1.
  void collect_writes(std::uint32_t stream, const std::vector<Matrix>& adjoint,
                      ReadPointResult& out) const {
    const Eigen::Index k = adjoint[0].rows();
    for (std::size_t q = 0; q < adjoint.size(); ++q) {
      const auto& adj = adjoint[q];
      const auto pos = static_cast<std::uint32_t>(q);
      if (stream == 0) {
        const auto token = cache_.tokens[q];
        const Vector contrib = adj * model_.spec.embedding.row(token).transpose();
        const FeatureNode src{0, NodeKind::Embedding, token, pos};
        emit(src, contrib, config_.sources.embeddings, out);
        continue;
      }
      const auto j = stream - 1;
      const auto& tc = model_.bank.layers[j];
      const auto& lt = cache_.layers[j];
      const auto qi = static_cast<Eigen::Index>(q);

      const Vector bias = adj * tc.decoder_bias;
      for (Eigen::Index r = 0; r < k; ++r) out.terms[r].bias += bias(r);

      const Matrix through_decoder = adj * tc.decoder;  // k x d_features
      for (Eigen::Index f = 0; f < through_decoder.cols(); ++f) {
        const double a = lt.activations(qi, f);
        if (!(a > 0.0)) continue;
        const Vector contrib = through_decoder.col(f) * a;
        const FeatureNode src{stream, NodeKind::Feature, static_cast<std::uint32_t>(f), pos};
        emit(src, contrib, config_.sources.features, out);
      }
      const Vector contrib = adj * lt.error.row(qi).transpose();
      const FeatureNode src{stream, NodeKind::Error, 0, pos};
      emit(src, contrib, config_.include_error_nodes && config_.sources.errors, out);
    }
  }

  void emit(const FeatureNode& src, const Vector& contrib, bool as_edge,
            ReadPointResult& out) const {
    for (Eigen::Index r = 0; r < contrib.size(); ++r) {
      const double v = contrib(r);
      auto& t = out.terms[r];
      if (!as_edge) {
        t.excluded += v;
        continue;
      }
      if (v == 0.0) continue;
      t.edge_sum += v;
      out.edges.push_back({src, t.target, v});
    }
  }

  const ToyModel& model_;
  const TraceCache& cache_;
  const AttributionConfig& config_;
  const ToyModelConfig& cfg_;
};

}  // namespace trace_detail

// Indices of the top-k logits at the final position; ties go to the lower
// token id.
inline std::vector<std::uint32_t> top_logits(const Vector& logits, std::size_t k) {
  std::vector<std::uint32_t> ids(static_cast<std::size_t>(logits.size()));
  std::iota(ids.begin(), ids.end(), 0u);
  k = std::min(k, ids.size());
  std::partial_sort(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(k), ids.end(),
                    [&](std::uint32_t a, std::uint32_t b) {
                      if (logits(a) != logits(b)) return logits(a) > logits(b);
                      return a < b;
                    });
  ids.resize(k);
  return ids;
}

// Builds the per-prompt attribution graph and the per-target decomposition.
inline Attribution attribute_detailed(const ToyModel& model, const TraceCache& cache,
                                      const AttributionConfig& config, GraphMeta meta = {}) {
  const auto& cfg = model.config();
  const auto T = static_cast<std::uint32_t>(cache.positions());
  GraphBuilder builder;

  std::vector<trace_detail::ReadPoint> read_points;
  bool any_active = false;
  for (std::uint32_t l = 0; l < cfg.n_layers; ++l) {
    const auto& act = cache.layers[l].activations;
    for (std::uint32_t p = 0; p < T; ++p) {
      trace_detail::ReadPoint rp{l, p, {}};
      for (std::uint32_t f = 0; f < cfg.d_features; ++f) {
        if (act(p, f) > 0.0) {
          rp.indices.push_back(f);
          builder.add_node({l + 1, NodeKind::Feature, f, p});
        }
      }
      if (config.include_error_nodes) builder.add_node({l + 1, NodeKind::Error, 0, p});
      if (rp.indices.empty()) continue;
      any_active = true;
      if (config.final_position_only && p + 1 != T) continue;
      read_points.push_back(std::move(rp));
    }
  }
  if (!any_active)
    throw Error(ErrorCode::NoActiveFeatures, "no transcoder feature is active for this prompt");
  for (std::uint32_t p = 0; p < T; ++p)
    builder.add_node({0, NodeKind::Embedding, cache.tokens[p], p});

  if (config.max_logit_nodes > 0) {
    auto ids = top_logits(cache.logits, config.max_logit_nodes);
    for (auto id : ids) builder.add_node({cfg.n_layers, NodeKind::Logit, id, T - 1});
    read_points.push_back({cfg.n_layers, T - 1, std::move(ids)});
  }

  trace_detail::Attributor attributor(model, cache, config);
  std::vector<trace_detail::ReadPointResult> results(read_points.size());
  parallel_for(read_points.size(), config.workers,
               [&](std::size_t i) { results[i] = attributor.run(read_points[i]); });

  Attribution out;
  for (auto& r : results) {
    for (const auto& e : r.edges) builder.add_edge(e.src, e.dst, e.weight);
    out.targets.insert(out.targets.end(), r.terms.begin(), r.terms.end());
  }
  meta.collapsed = false;
  meta.normalized = false;
  out.graph = builder.build(std::move(meta));
  return out;
}

inline AttributionGraph attribute(const ToyModel& model, const TraceCache& cache,
                                  const AttributionConfig& config, GraphMeta meta = {}) {
  return attribute_detailed(model, cache, config, std::move(meta)).graph;
}

// forward -> attribute -> collapse positions -> normalize.
inline AttributionGraph trace_prompt(const ToyModel& model, std::span<const std::uint32_t> tokens,
                                     GraphMeta meta, const AttributionConfig& config = {}) {
  const auto cache = forward(model, tokens);
  return normalize(collapse_positions(attribute(model, cache, config, std::move(meta))));
}

}  // namespace pathtrace
