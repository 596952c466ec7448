#pragma once

// Desk-scale decoder-only transformer with one observational transcoder per
// MLP block, plus the `TOYMODEL v1` container that stores both.
//
// Container layout (text, '\n'-terminated lines):
//
//   TOYMODEL v1
//   <hyperparameter> <value>          one line each, see ToyModelConfig
//   tensors <count>
//   tensor <name> <rows> <cols>       header block, one line per tensor
//   data
//   <row of hex floats>               row-major, tensors in header order
//   end
//
// Vectors are stored as 1 x n tensors.

#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <type_traits>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "error.hpp"
#include "hexfloat.hpp"
#include "rng.hpp"

namespace pathtrace {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

struct ToyModelConfig {
  std::uint32_t n_layers = 2;
  std::uint32_t d_model = 16;
  std::uint32_t n_heads = 2;
  std::uint32_t vocab_size = 32;
  std::uint32_t d_mlp = 32;
  std::uint32_t d_features = 8;
  std::uint32_t max_seq_len = 128;
  bool use_layernorm = false;
  double ln_eps = 1e-5;

  std::uint32_t d_head() const { return d_model / n_heads; }

  friend bool operator==(const ToyModelConfig&, const ToyModelConfig&) = default;
};

struct LayerWeights {
  // Per-head projections are stacked: rows [h*d_head, (h+1)*d_head) of
  // wq/wk/wv and the matching columns of wo belong to head h.
  Matrix wq, wk, wv;  // (n_heads*d_head) x d_model
  Matrix wo;          // d_model x (n_heads*d_head)
  Vector ln1_gamma, ln1_beta;
  Vector ln2_gamma, ln2_beta;
  Matrix mlp_in;  // d_mlp x d_model
  Vector mlp_in_bias;
  Matrix mlp_out;  // d_model x d_mlp
  Vector mlp_out_bias;
};

struct ToyModelSpec {
  ToyModelConfig config;
  Matrix embedding;  // vocab x d_model
  std::vector<LayerWeights> layers;
  Vector final_ln_gamma, final_ln_beta;
  Matrix unembedding;  // d_model x vocab
};

// Sparse dictionary read alongside one MLP block:
// a = relu(encoder x + encoder_bias), reconstruction = decoder a + decoder_bias.
struct Transcoder {
  Matrix encoder;  // d_features x d_model
  Vector encoder_bias;
  Matrix decoder;  // d_model x d_features
  Vector decoder_bias;
};

struct TranscoderBank {
  std::uint32_t d_features = 0;
  std::vector<Transcoder> layers;
};

struct ToyModel {
  ToyModelSpec spec;
  TranscoderBank bank;

  const ToyModelConfig& config() const { return spec.config; }
};

namespace model_detail {

enum class Init { Uniform, AroundOne };

template <bool Const>
struct BasicSlot {
  using M = std::conditional_t<Const, const Matrix, Matrix>;
  using V = std::conditional_t<Const, const Vector, Vector>;
  using Ref = std::conditional_t<Const, const double&, double&>;

  std::string name;
  std::variant<M*, V*> target;
  Eigen::Index rows = 0;
  Eigen::Index cols = 0;
  Init init = Init::Uniform;
  double scale = 1.0;

  Ref at(Eigen::Index r, Eigen::Index c) const {
    if (auto* m = std::get_if<M*>(&target)) return (**m)(r, c);
    return (*std::get<V*>(target))(c);
  }

  Eigen::Index actual_rows() const {
    if (auto* m = std::get_if<M*>(&target)) return (*m)->rows();
    return 1;
  }

  Eigen::Index actual_cols() const {
    if (auto* m = std::get_if<M*>(&target)) return (*m)->cols();
    return std::get<V*>(target)->size();
  }

  void allocate() const requires(!Const) {
    if (auto* m = std::get_if<M*>(&target)) (*m)->resize(rows, cols);
    else std::get<V*>(target)->resize(cols);
  }
};

// Sizes the per-layer containers to match the config.
inline void prepare_layers(ToyModel& model) {
  const auto& c = model.spec.config;
  model.spec.layers.resize(c.n_layers);
  model.bank.layers.resize(c.n_layers);
  model.bank.d_features = c.d_features;
}

// Every tensor of the model in container / generation order.
template <typename Model>
auto slots(Model& model) {
  constexpr bool kConst = std::is_const_v<Model>;
  using Slot = BasicSlot<kConst>;
  const auto& c = model.spec.config;
  const Eigen::Index d = c.d_model, v = c.vocab_size, hd = c.n_heads * c.d_head(),
                     m = c.d_mlp, f = c.d_features;
  const double in_d = 1.0 / std::sqrt(static_cast<double>(d));
  const double in_hd = 1.0 / std::sqrt(static_cast<double>(hd));
  const double in_m = 1.0 / std::sqrt(static_cast<double>(m));
  const double in_f = 1.0 / std::sqrt(static_cast<double>(f));

  auto& s = model.spec;
  std::vector<Slot> out;
  out.push_back({"embedding", &s.embedding, v, d, Init::Uniform, 1.0});
  for (std::uint32_t l = 0; l < c.n_layers; ++l) {
    auto& w = s.layers[l];
    auto& t = model.bank.layers[l];
    const std::string p = "layer" + std::to_string(l) + ".";
    out.push_back({p + "attn.wq", &w.wq, hd, d, Init::Uniform, in_d});
    out.push_back({p + "attn.wk", &w.wk, hd, d, Init::Uniform, in_d});
    out.push_back({p + "attn.wv", &w.wv, hd, d, Init::Uniform, in_d});
    out.push_back({p + "attn.wo", &w.wo, d, hd, Init::Uniform, in_hd});
    out.push_back({p + "ln1.gamma", &w.ln1_gamma, 1, d, Init::AroundOne, 0.1});
    out.push_back({p + "ln1.beta", &w.ln1_beta, 1, d, Init::Uniform, 0.1});
    out.push_back({p + "ln2.gamma", &w.ln2_gamma, 1, d, Init::AroundOne, 0.1});
    out.push_back({p + "ln2.beta", &w.ln2_beta, 1, d, Init::Uniform, 0.1});
    out.push_back({p + "mlp.w_in", &w.mlp_in, m, d, Init::Uniform, in_d});
    out.push_back({p + "mlp.b_in", &w.mlp_in_bias, 1, m, Init::Uniform, 0.1});
    out.push_back({p + "mlp.w_out", &w.mlp_out, d, m, Init::Uniform, in_m});
    out.push_back({p + "mlp.b_out", &w.mlp_out_bias, 1, d, Init::Uniform, 0.1});
    const std::string q = "transcoder" + std::to_string(l) + ".";
    out.push_back({q + "w_enc", &t.encoder, f, d, Init::Uniform, in_d});
    out.push_back({q + "b_enc", &t.encoder_bias, 1, f, Init::Uniform, 0.2});
    out.push_back({q + "w_dec", &t.decoder, d, f, Init::Uniform, in_f});
    out.push_back({q + "b_dec", &t.decoder_bias, 1, d, Init::Uniform, 0.1});
  }
  out.push_back({"final_ln.gamma", &s.final_ln_gamma, 1, d, Init::AroundOne, 0.1});
  out.push_back({"final_ln.beta", &s.final_ln_beta, 1, d, Init::Uniform, 0.1});
  out.push_back({"unembedding", &s.unembedding, d, v, Init::Uniform, in_d});
  return out;
}

inline std::vector<std::pair<std::string, std::string>> config_fields(const ToyModelConfig& c) {
  return {{"n_layers", std::to_string(c.n_layers)},
          {"d_model", std::to_string(c.d_model)},
          {"n_heads", std::to_string(c.n_heads)},
          {"vocab_size", std::to_string(c.vocab_size)},
          {"d_mlp", std::to_string(c.d_mlp)},
          {"d_features", std::to_string(c.d_features)},
          {"max_seq_len", std::to_string(c.max_seq_len)},
          {"use_layernorm", c.use_layernorm ? "1" : "0"},
          {"ln_eps", to_hexfloat(c.ln_eps)}};
}

}  // namespace model_detail

inline void validate_config(const ToyModelConfig& c) {
  auto fail = [](const std::string& msg) { throw Error(ErrorCode::InvalidModel, msg); };
  if (c.n_layers < 1) fail("n_layers must be >= 1");
  if (c.d_model < 2) fail("d_model must be >= 2");
  if (c.n_heads < 1) fail("n_heads must be >= 1");
  if (c.d_model % c.n_heads != 0) fail("d_model must be divisible by n_heads");
  if (c.vocab_size < 2) fail("vocab_size must be >= 2");
  if (c.d_mlp < 1) fail("d_mlp must be >= 1");
  if (c.d_features < 1) fail("d_features must be >= 1");
  if (c.max_seq_len < 1) fail("max_seq_len must be >= 1");
  if (!(c.ln_eps > 0.0) || !std::isfinite(c.ln_eps)) fail("ln_eps must be positive");
}

// Checks dimensions of every tensor against the config and that all weights
// are finite.
inline void validate_model(const ToyModel& model) {
  validate_config(model.config());
  const auto& c = model.config();
  if (model.spec.layers.size() != c.n_layers || model.bank.layers.size() != c.n_layers)
    throw Error(ErrorCode::InvalidModel, "layer count does not match n_layers");
  if (model.bank.d_features != c.d_features)
    throw Error(ErrorCode::InvalidModel, "transcoder width does not match d_features");
  for (const auto& slot : model_detail::slots(model)) {
    if (slot.actual_rows() != slot.rows || slot.actual_cols() != slot.cols)
      throw Error(ErrorCode::InvalidModel,
                  "tensor " + slot.name + " has shape " + std::to_string(slot.actual_rows()) + "x" +
                      std::to_string(slot.actual_cols()) + ", expected " +
                      std::to_string(slot.rows) + "x" + std::to_string(slot.cols));
    for (Eigen::Index r = 0; r < slot.rows; ++r)
      for (Eigen::Index k = 0; k < slot.cols; ++k)
        if (!std::isfinite(slot.at(r, k)))
          throw Error(ErrorCode::InvalidModel, "tensor " + slot.name + " is not finite");
  }
}

// Draws every tensor, in container order and row-major within a tensor, from
// one SplitMix64 stream: Uniform tensors get scale * u(-1, 1), LayerNorm
// gains get 1 + scale * u(-1, 1). Scales are 1/sqrt(fan_in) for projections.
inline ToyModel generate_toy_model(const ToyModelConfig& config, std::uint64_t seed) {
  validate_config(config);
  ToyModel model;
  model.spec.config = config;
  model_detail::prepare_layers(model);
  SplitMix64 rng(seed);
  for (const auto& slot : model_detail::slots(model)) {
    slot.allocate();
    for (Eigen::Index r = 0; r < slot.rows; ++r)
      for (Eigen::Index c = 0; c < slot.cols; ++c) {
        const double u = rng.uniform(-1.0, 1.0) * slot.scale;
        slot.at(r, c) = slot.init == model_detail::Init::AroundOne ? 1.0 + u : u;
      }
  }
  return model;
}

inline void write_toy_model(const ToyModel& model, std::ostream& out) {
  validate_model(model);
  const auto all = model_detail::slots(model);
  std::string buf = "TOYMODEL v1\n";
  for (const auto& [k, v] : model_detail::config_fields(model.config())) buf += k + " " + v + "\n";
  buf += "tensors " + std::to_string(all.size()) + "\n";
  for (const auto& s : all)
    buf += "tensor " + s.name + " " + std::to_string(s.rows) + " " + std::to_string(s.cols) + "\n";
  buf += "data\n";
  for (const auto& s : all) {
    for (Eigen::Index r = 0; r < s.rows; ++r) {
      for (Eigen::Index c = 0; c < s.cols; ++c) {
        if (c) buf += ' ';
        buf += to_hexfloat(s.at(r, c));
      }
      buf += '\n';
    }
  }
  buf += "end\n";
  out << buf;
  if (!out) throw Error(ErrorCode::IoError, "failed writing model");
}

inline ToyModel parse_toy_model(std::string_view text) {
  std::vector<std::string_view> lines;
  for (std::size_t start = 0; start < text.size();) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos)
      throw FormatError(lines.size() + 1, 1, "unterminated final line (truncated model?)");
    lines.push_back(text.substr(start, end - start));
    start = end + 1;
  }
  std::size_t i = 0;
  auto next = [&]() -> std::string_view {
    if (i >= lines.size()) throw FormatError(i + 1, 1, "unexpected end of model file");
    return lines[i++];
  };
  auto split = [](std::string_view line) {
    std::vector<std::string_view> out;
    for (std::size_t s = 0; s <= line.size();) {
      auto e = line.find(' ', s);
      if (e == std::string_view::npos) e = line.size();
      out.push_back(line.substr(s, e - s));
      s = e + 1;
    }
    return out;
  };
  auto parse_u32 = [&](std::string_view t) {
    std::uint32_t v = 0;
    auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (t.empty() || ec != std::errc() || p != t.data() + t.size())
      throw FormatError(i, 1, "expected unsigned integer, got '" + std::string(t) + "'");
    return v;
  };

  auto header = next();
  if (header.rfind("TOYMODEL v", 0) != 0) throw FormatError(1, 1, "expected 'TOYMODEL v1' header");
  if (header != "TOYMODEL v1")
    throw Error(ErrorCode::VersionError, "unsupported model format '" + std::string(header) + "'");

  ToyModel model;
  auto& c = model.spec.config;
  std::map<std::string, std::string, std::less<>> fields;
  std::size_t tensor_count = 0;
  for (;;) {
    auto tok = split(next());
    if (tok.size() != 2) throw FormatError(i, 1, "expected '<key> <value>'");
    if (tok[0] == "tensors") {
      tensor_count = parse_u32(tok[1]);
      break;
    }
    if (!fields.emplace(std::string(tok[0]), std::string(tok[1])).second)
      throw FormatError(i, 1, "duplicate key '" + std::string(tok[0]) + "'");
  }
  auto field = [&](std::string_view key) -> std::string_view {
    auto it = fields.find(key);
    if (it == fields.end()) throw FormatError(i, 1, "missing hyperparameter '" + std::string(key) + "'");
    return it->second;
  };
  c.n_layers = parse_u32(field("n_layers"));
  c.d_model = parse_u32(field("d_model"));
  c.n_heads = parse_u32(field("n_heads"));
  c.vocab_size = parse_u32(field("vocab_size"));
  c.d_mlp = parse_u32(field("d_mlp"));
  c.d_features = parse_u32(field("d_features"));
  c.max_seq_len = parse_u32(field("max_seq_len"));
  auto ln = field("use_layernorm");
  if (ln != "0" && ln != "1") throw FormatError(i, 1, "use_layernorm must be 0 or 1");
  c.use_layernorm = ln == "1";
  auto eps = parse_hexfloat(field("ln_eps"));
  if (!eps) throw FormatError(i, 1, "ln_eps must be a hex float");
  c.ln_eps = *eps;
  if (fields.size() != 9) throw FormatError(i, 1, "unknown hyperparameter in model header");
  try {
    validate_config(c);
  } catch (const Error& e) {
    throw FormatError(i, 1, e.detail());
  }

  model_detail::prepare_layers(model);
  const auto all = model_detail::slots(model);
  if (tensor_count != all.size())
    throw FormatError(i, 1, "expected " + std::to_string(all.size()) + " tensors");
  for (const auto& s : all) {
    auto tok = split(next());
    if (tok.size() != 4 || tok[0] != "tensor" || tok[1] != s.name ||
        parse_u32(tok[2]) != s.rows || parse_u32(tok[3]) != s.cols)
      throw FormatError(i, 1, "expected 'tensor " + s.name + " " + std::to_string(s.rows) + " " +
                                  std::to_string(s.cols) + "'");
    s.allocate();
  }
  if (next() != "data") throw FormatError(i, 1, "expected 'data'");
  for (const auto& s : all) {
    for (Eigen::Index r = 0; r < s.rows; ++r) {
      auto tok = split(next());
      if (static_cast<Eigen::Index>(tok.size()) != s.cols)
        throw FormatError(i, 1, "row of " + s.name + " needs " + std::to_string(s.cols) + " values");
      std::size_t col = 1;
      for (Eigen::Index k = 0; k < s.cols; ++k) {
        auto v = parse_hexfloat(tok[k]);
        if (!v) throw FormatError(i, col, "malformed value in " + s.name);
        s.at(r, k) = *v;
        col += tok[k].size() + 1;
      }
    }
  }
  if (next() != "end") throw FormatError(i, 1, "expected 'end'");
  if (i != lines.size()) throw FormatError(i + 1, 1, "trailing content after 'end'");
  return model;
}

inline ToyModel read_toy_model_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open model " + path.string());
  std::string text{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  try {
    return parse_toy_model(text);
  } catch (const FormatError& e) {
    throw Error(ErrorCode::FormatError, path.string() + ": " + e.detail());
  }
}

inline void write_toy_model_file(const ToyModel& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot create " + path.string());
  write_toy_model(model, out);
}

}  // namespace pathtrace
