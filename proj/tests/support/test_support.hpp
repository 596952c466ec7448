#pragma once

// Shared helpers for the unit and acceptance suites: seeded generators for
// random graphs, a plain-loop reference forward pass, a frozen-linear
// surrogate used as the ablation oracle, and small filesystem utilities.

#include <cmath>
#include <atomic>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <unistd.h>

#include <pathtrace/pathtrace.hpp>

namespace pt_test {

using namespace pathtrace;
namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Random graphs

struct GraphShape {
  std::uint32_t layers = 3;        // transcoder layers; logits sit on `layers`
  std::uint32_t features = 6;      // per layer
  std::uint32_t tokens = 5;        // embedding / logit ids
  std::uint32_t positions = 0;     // 0: collapsed graph
  bool errors = true;
};

inline FeatureNode random_node(std::mt19937_64& rng, const GraphShape& s) {
  std::uniform_int_distribution<int> kind_d(0, 3);
  FeatureNode n;
  n.kind = static_cast<NodeKind>(kind_d(rng));
  if (!s.errors && n.kind == NodeKind::Error) n.kind = NodeKind::Feature;
  switch (n.kind) {
    case NodeKind::Embedding:
      n.layer = 0;
      n.feature_index = std::uniform_int_distribution<std::uint32_t>(0, s.tokens - 1)(rng);
      break;
    case NodeKind::Logit:
      n.layer = s.layers;
      n.feature_index = std::uniform_int_distribution<std::uint32_t>(0, s.tokens - 1)(rng);
      break;
    case NodeKind::Feature:
      n.layer = std::uniform_int_distribution<std::uint32_t>(1, s.layers)(rng);
      n.feature_index = std::uniform_int_distribution<std::uint32_t>(0, s.features - 1)(rng);
      break;
    case NodeKind::Error:
      n.layer = std::uniform_int_distribution<std::uint32_t>(1, s.layers)(rng);
      n.feature_index = 0;
      break;
  }
  if (s.positions) n.position = std::uniform_int_distribution<std::uint32_t>(0, s.positions - 1)(rng);
  return n;
}

// Random forward edge keys, unique, in no particular order.
inline std::vector<EdgeKey> random_keys(std::mt19937_64& rng, const GraphShape& s, std::size_t count) {
  std::set<EdgeKey> keys;
  std::size_t attempts = 0;
  while (keys.size() < count && attempts++ < count * 200) {
    auto a = random_node(rng, s), b = random_node(rng, s);
    if (is_forward_edge(a, b)) keys.insert({a, b});
    else if (is_forward_edge(b, a)) keys.insert({b, a});
  }
  return {keys.begin(), keys.end()};
}

inline double random_weight(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> mag(0.01, 1.0);
  return std::bernoulli_distribution(0.3)(rng) ? -mag(rng) : mag(rng);
}

inline GraphMeta meta_for(std::string id, bool collapsed = true, bool normalized = false,
                          std::string l = "US", std::string c = "UK") {
  return GraphMeta{Code(l), Code(c), std::move(id), collapsed, normalized};
}

inline AttributionGraph graph_from(const std::vector<std::pair<EdgeKey, double>>& edges, GraphMeta meta) {
  GraphBuilder b;
  for (const auto& [k, w] : edges) b.add_edge(k.first, k.second, w);
  return b.build(std::move(meta));
}

// Raw (unnormalized) random graph with `edges` edges.
inline AttributionGraph random_raw_graph(std::mt19937_64& rng, const GraphShape& s, std::size_t edges,
                                         GraphMeta meta) {
  std::vector<std::pair<EdgeKey, double>> e;
  for (const auto& k : random_keys(rng, s, edges)) e.push_back({k, random_weight(rng)});
  meta.collapsed = s.positions == 0;
  meta.normalized = false;
  return graph_from(e, std::move(meta));
}

inline AttributionGraph random_normalized_graph(std::mt19937_64& rng, const GraphShape& s,
                                                std::size_t edges, GraphMeta meta) {
  return normalize(random_raw_graph(rng, s, edges, std::move(meta)));
}

// Independent sum of |w| using Kahan summation in reverse order.
inline double kahan_abs_sum(const AttributionGraph& g) {
  double sum = 0.0, c = 0.0;
  const auto& e = g.edges();
  for (auto it = e.rbegin(); it != e.rend(); ++it) {
    const double y = std::fabs(it->weight) - c;
    const double t = sum + y;
    c = (t - sum) - y;
    sum = t;
  }
  return sum;
}

// Brute-force weighted Jaccard over an explicit key map.
inline double jaccard_oracle(const AttributionGraph& a, const AttributionGraph& b, bool with_errors = false) {
  std::map<EdgeKey, std::pair<double, double>> u;
  auto counts = [&](const AttributionEdge& e) {
    return with_errors || (e.src.kind != NodeKind::Error && e.dst.kind != NodeKind::Error);
  };
  for (const auto& e : a.edges())
    if (counts(e)) u[e.key()].first = std::fabs(e.weight);
  for (const auto& e : b.edges())
    if (counts(e)) u[e.key()].second = std::fabs(e.weight);
  long double num = 0, den = 0;
  for (const auto& [k, v] : u) {
    num += std::min(v.first, v.second);
    den += std::max(v.first, v.second);
  }
  return static_cast<double>(num / den);
}

// ---------------------------------------------------------------------------
// Reference transformer (plain loops over std::vector, no Eigen)

using Mat = std::vector<std::vector<double>>;
using Vec = std::vector<double>;

inline Mat to_mat(const Matrix& m) {
  Mat out(static_cast<std::size_t>(m.rows()), Vec(static_cast<std::size_t>(m.cols())));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) out[r][c] = m(r, c);
  return out;
}

inline Vec to_vec(const Vector& v) { return Vec(v.data(), v.data() + v.size()); }

// y = W x for W rows x cols.
inline Vec matvec(const Matrix& w, const Vec& x) {
  Vec y(static_cast<std::size_t>(w.rows()), 0.0);
  for (Eigen::Index r = 0; r < w.rows(); ++r) {
    double s = 0.0;
    for (Eigen::Index c = 0; c < w.cols(); ++c) s += w(r, c) * x[c];
    y[r] = s;
  }
  return y;
}

inline double ref_gelu(double x) {
  return 0.5 * x * (1.0 + std::tanh(std::sqrt(2.0 / M_PI) * (x + 0.044715 * x * x * x)));
}

inline Vec ref_ln(const Vec& x, const Vector& gamma, const Vector& beta, double eps, double* inv_out) {
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(x.size());
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  var /= static_cast<double>(x.size());
  const double inv = 1.0 / std::sqrt(var + eps);
  if (inv_out) *inv_out = inv;
  Vec y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = (x[i] - mean) * inv * gamma(i) + beta(i);
  return y;
}

struct RefTrace {
  std::vector<Mat> pre_activations;  // [layer][pos][feature]
  std::vector<Mat> patterns_h0;      // [layer][q][k], head 0
  Vec logits;
};

inline RefTrace reference_forward(const ToyModel& model, const std::vector<std::uint32_t>& tokens) {
  const auto& cfg = model.config();
  const auto& spec = model.spec;
  const std::size_t T = tokens.size(), d = cfg.d_model, dh = cfg.d_head();
  Mat x(T, Vec(d));
  for (std::size_t p = 0; p < T; ++p)
    for (std::size_t i = 0; i < d; ++i) x[p][i] = spec.embedding(tokens[p], i);

  RefTrace out;
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    const auto& w = spec.layers[l];
    const auto& tc = model.bank.layers[l];
    Mat in = x;
    if (cfg.use_layernorm)
      for (std::size_t p = 0; p < T; ++p) in[p] = ref_ln(x[p], w.ln1_gamma, w.ln1_beta, cfg.ln_eps, nullptr);
    Mat attn(T, Vec(d, 0.0));
    for (std::size_t h = 0; h < cfg.n_heads; ++h) {
      Mat q(T, Vec(dh)), k(T, Vec(dh)), v(T, Vec(dh));
      for (std::size_t p = 0; p < T; ++p)
        for (std::size_t a = 0; a < dh; ++a) {
          double sq = 0, sk = 0, sv = 0;
          for (std::size_t i = 0; i < d; ++i) {
            sq += w.wq(h * dh + a, i) * in[p][i];
            sk += w.wk(h * dh + a, i) * in[p][i];
            sv += w.wv(h * dh + a, i) * in[p][i];
          }
          q[p][a] = sq, k[p][a] = sk, v[p][a] = sv;
        }
      Mat pat(T, Vec(T, 0.0));
      for (std::size_t p = 0; p < T; ++p) {
        Vec s(p + 1);
        double mx = -1e300;
        for (std::size_t j = 0; j <= p; ++j) {
          double dot = 0;
          for (std::size_t a = 0; a < dh; ++a) dot += q[p][a] * k[j][a];
          s[j] = dot / std::sqrt(static_cast<double>(dh));
          mx = std::max(mx, s[j]);
        }
        double z = 0;
        for (std::size_t j = 0; j <= p; ++j) z += (pat[p][j] = std::exp(s[j] - mx));
        for (std::size_t j = 0; j <= p; ++j) pat[p][j] /= z;
      }
      if (h == 0) out.patterns_h0.push_back(pat);
      for (std::size_t p = 0; p < T; ++p) {
        Vec mixed(dh, 0.0);
        for (std::size_t j = 0; j <= p; ++j)
          for (std::size_t a = 0; a < dh; ++a) mixed[a] += pat[p][j] * v[j][a];
        for (std::size_t i = 0; i < d; ++i)
          for (std::size_t a = 0; a < dh; ++a) attn[p][i] += w.wo(i, h * dh + a) * mixed[a];
      }
    }
    Mat mid(T, Vec(d));
    for (std::size_t p = 0; p < T; ++p)
      for (std::size_t i = 0; i < d; ++i) mid[p][i] = x[p][i] + attn[p][i];
    Mat pre(T);
    for (std::size_t p = 0; p < T; ++p) {
      Vec m = cfg.use_layernorm ? ref_ln(mid[p], w.ln2_gamma, w.ln2_beta, cfg.ln_eps, nullptr) : mid[p];
      pre[p] = matvec(tc.encoder, m);
      for (std::size_t f = 0; f < pre[p].size(); ++f) pre[p][f] += tc.encoder_bias(f);
      Vec hidden = matvec(w.mlp_in, m);
      for (std::size_t u = 0; u < hidden.size(); ++u) hidden[u] = ref_gelu(hidden[u] + w.mlp_in_bias(u));
      Vec mlp = matvec(w.mlp_out, hidden);
      for (std::size_t i = 0; i < d; ++i) x[p][i] = mid[p][i] + mlp[i] + w.mlp_out_bias(i);
    }
    out.pre_activations.push_back(std::move(pre));
  }
  Vec last = x[T - 1];
  if (cfg.use_layernorm) last = ref_ln(last, spec.final_ln_gamma, spec.final_ln_beta, cfg.ln_eps, nullptr);
  out.logits.assign(cfg.vocab_size, 0.0);
  for (std::size_t t = 0; t < cfg.vocab_size; ++t)
    for (std::size_t i = 0; i < d; ++i) out.logits[t] += last[i] * spec.unembedding(i, t);
  return out;
}

// ---------------------------------------------------------------------------
// Frozen-linear surrogate
//
// Re-runs the network with attention patterns, LayerNorm denominators and
// rectifier masks frozen from `cache`. The MLP output of layer l is replaced
// by its exact decomposition sum_f a_f dec_f + b_dec + error, and each source
// (embedding at a position, feature at a position, error at a position) is
// scaled by a switch. Zeroing one switch and differencing gives that source's
// total direct contribution to every target.

struct SourceId {
  NodeKind kind;
  std::uint32_t layer;  // node layer
  std::uint32_t index;  // token id / feature index / 0
  std::uint32_t position;

  FeatureNode node() const { return {layer, kind, index, position}; }
};

struct SurrogateOutput {
  std::map<FeatureNode, double> values;  // feature pre-activations (positioned) and logits
};

inline SurrogateOutput surrogate(const ToyModel& model, const TraceCache& cache,
                                 const std::vector<std::uint32_t>& logit_ids,
                                 const SourceId* disabled) {
  const auto& cfg = model.config();
  const auto& spec = model.spec;
  const std::size_t T = cache.tokens.size(), d = cfg.d_model, dh = cfg.d_head();
  auto on = [&](NodeKind k, std::uint32_t layer, std::uint32_t idx, std::uint32_t pos) {
    return !(disabled && disabled->kind == k && disabled->layer == layer && disabled->index == idx &&
             disabled->position == pos);
  };
  // Frozen LN: affine map with the cached 1/sigma.
  auto frozen_ln = [&](const Vec& x, const Vector& gamma, const Vector& beta, double inv) {
    double mean = 0.0;
    for (double v : x) mean += v;
    mean /= static_cast<double>(x.size());
    Vec y(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = (x[i] - mean) * inv * gamma(i) + beta(i);
    return y;
  };

  SurrogateOutput out;
  Mat x(T, Vec(d, 0.0));
  for (std::size_t p = 0; p < T; ++p)
    if (on(NodeKind::Embedding, 0, cache.tokens[p], static_cast<std::uint32_t>(p)))
      for (std::size_t i = 0; i < d; ++i) x[p][i] = spec.embedding(cache.tokens[p], i);

  for (std::uint32_t l = 0; l < cfg.n_layers; ++l) {
    const auto& w = spec.layers[l];
    const auto& tc = model.bank.layers[l];
    const auto& lt = cache.layers[l];
    Mat in = x;
    if (cfg.use_layernorm)
      for (std::size_t p = 0; p < T; ++p) in[p] = frozen_ln(x[p], w.ln1_gamma, w.ln1_beta, lt.ln1_inv_scale(p));
    Mat mid = x;
    for (std::size_t h = 0; h < cfg.n_heads; ++h) {
      Mat v(T, Vec(dh, 0.0));
      for (std::size_t p = 0; p < T; ++p)
        for (std::size_t a = 0; a < dh; ++a)
          for (std::size_t i = 0; i < d; ++i) v[p][a] += w.wv(h * dh + a, i) * in[p][i];
      for (std::size_t p = 0; p < T; ++p) {
        Vec mixed(dh, 0.0);
        for (std::size_t j = 0; j <= p; ++j)
          for (std::size_t a = 0; a < dh; ++a) mixed[a] += lt.patterns[h](p, j) * v[j][a];
        for (std::size_t i = 0; i < d; ++i)
          for (std::size_t a = 0; a < dh; ++a) mid[p][i] += w.wo(i, h * dh + a) * mixed[a];
      }
    }
    for (std::size_t p = 0; p < T; ++p) {
      const auto pos = static_cast<std::uint32_t>(p);
      Vec m = cfg.use_layernorm ? frozen_ln(mid[p], w.ln2_gamma, w.ln2_beta, lt.ln2_inv_scale(p)) : mid[p];
      Vec pre = matvec(tc.encoder, m);
      for (std::uint32_t f = 0; f < pre.size(); ++f) {
        pre[f] += tc.encoder_bias(f);
        if (lt.activations(p, f) > 0.0) out.values[{l + 1, NodeKind::Feature, f, pos}] = pre[f];
      }
      Vec next = mid[p];
      for (std::size_t i = 0; i < d; ++i) next[i] += tc.decoder_bias(i);
      for (std::uint32_t f = 0; f < cfg.d_features; ++f) {
        const double a = lt.activations(p, f);
        if (!(a > 0.0) || !on(NodeKind::Feature, l + 1, f, pos)) continue;
        for (std::size_t i = 0; i < d; ++i) next[i] += a * tc.decoder(i, f);
      }
      if (on(NodeKind::Error, l + 1, 0, pos))
        for (std::size_t i = 0; i < d; ++i) next[i] += lt.error(p, i);
      x[p] = next;
    }
  }
  Vec last = x[T - 1];
  if (cfg.use_layernorm) last = frozen_ln(last, spec.final_ln_gamma, spec.final_ln_beta, cache.final_inv_scale);
  for (auto id : logit_ids) {
    double s = 0.0;
    for (std::size_t i = 0; i < d; ++i) s += last[i] * spec.unembedding(i, id);
    out.values[{cfg.n_layers, NodeKind::Logit, id, static_cast<std::uint32_t>(T - 1)}] = s;
  }
  return out;
}

// Every source the surrogate can switch off.
inline std::vector<SourceId> surrogate_sources(const ToyModel& model, const TraceCache& cache) {
  std::vector<SourceId> out;
  const auto T = static_cast<std::uint32_t>(cache.tokens.size());
  for (std::uint32_t p = 0; p < T; ++p) out.push_back({NodeKind::Embedding, 0, cache.tokens[p], p});
  for (std::uint32_t l = 0; l < model.config().n_layers; ++l)
    for (std::uint32_t p = 0; p < T; ++p) {
      for (std::uint32_t f = 0; f < model.config().d_features; ++f)
        if (cache.layers[l].activations(p, f) > 0.0) out.push_back({NodeKind::Feature, l + 1, f, p});
      out.push_back({NodeKind::Error, l + 1, 0, p});
    }
  return out;
}

struct AblationReport {
  double max_edge_error = 0.0;      // |edge weight - ablation difference|
  double max_surrogate_error = 0.0; // |surrogate(all on) - actual value|
  std::size_t checked = 0;
};

// Compares every (source, target) pair of a raw attribution against the
// surrogate's ablation difference; absent edges must have difference 0.
inline AblationReport ablation_check(const ToyModel& model, const TraceCache& cache,
                                     const Attribution& attr) {
  std::vector<std::uint32_t> logit_ids;
  for (const auto& n : attr.graph.nodes())
    if (n.kind == NodeKind::Logit) logit_ids.push_back(n.feature_index);
  const auto full = surrogate(model, cache, logit_ids, nullptr);

  AblationReport r;
  for (const auto& t : attr.targets) {
    auto it = full.values.find(t.target);
    if (it == full.values.end()) {
      r.max_surrogate_error = INFINITY;
      continue;
    }
    r.max_surrogate_error = std::max(r.max_surrogate_error, std::fabs(it->second - t.value));
  }
  for (const auto& src : surrogate_sources(model, cache)) {
    const auto ablated = surrogate(model, cache, logit_ids, &src);
    for (const auto& t : attr.targets) {
      const double diff = full.values.at(t.target) - ablated.values.at(t.target);
      const double w = attr.graph.weight(src.node(), t.target).value_or(0.0);
      r.max_edge_error = std::max(r.max_edge_error, std::fabs(diff - w));
      ++r.checked;
    }
  }
  return r;
}

// Independent completeness: sums the graph's incoming edges per target.
inline double completeness_error(const Attribution& attr) {
  std::map<FeatureNode, double> incoming;
  for (const auto& e : attr.graph.edges()) incoming[e.dst] += e.weight;
  double worst = 0.0;
  for (const auto& t : attr.targets) {
    const double sum = incoming.count(t.target) ? incoming[t.target] : 0.0;
    worst = std::max(worst, std::fabs(sum + t.bias + t.excluded - t.value));
  }
  return worst;
}

inline std::vector<std::uint32_t> random_tokens(std::mt19937_64& rng, std::size_t len, std::uint32_t vocab) {
  std::vector<std::uint32_t> t(len);
  for (auto& x : t) x = std::uniform_int_distribution<std::uint32_t>(0, vocab - 1)(rng);
  return t;
}

// ---------------------------------------------------------------------------
// Filesystem

class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    path_ = fs::temp_directory_path() /
            ("pathtrace_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& s) const { return path_ / s; }

 private:
  fs::path path_;
};

inline std::string slurp(const fs::path& p) { return read_file_bytes(p); }

inline void spit(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << text;
}

// Relative path -> bytes for every regular file under `root`.
inline std::map<std::string, std::string> tree_contents(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = slurp(e.path());
  return out;
}

// Synthetic corpus: `languages` x `countries`, `n` items each.
inline Corpus synthetic_corpus(const std::vector<std::string>& languages,
                               const std::vector<std::string>& countries, std::size_t n) {
  std::vector<QuestionSet> sets;
  for (const auto& l : languages)
    for (const auto& c : countries) {
      QuestionSet s{Code(l), Code(c), {}};
      for (std::size_t i = 0; i < n; ++i) {
        std::string stmt = "Statement " + std::to_string(i) + " about " + c + " in " + l + " is";
        if (l != "CN") stmt += " ";
        s.items.push_back({"q" + std::to_string(i + 1), stmt});
      }
      sets.push_back(std::move(s));
    }
  return Corpus(std::move(sets));
}

// ---------------------------------------------------------------------------
// Reference matrices

inline SimilarityMatrix load_fixture_matrix(const std::string& name, MatrixMode mode) {
  return parse_matrix_csv(read_file_bytes(fs::path(PATHTRACE_FIXTURES) / name), mode);
}

}  // namespace pt_test
