#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "sppe/errors.hpp"
#include "sppe/ops.hpp"
#include "sppe/patching.hpp"
#include "sppe/posenc.hpp"
#include "sppe/rng.hpp"
#include "sppe/tensor.hpp"

namespace sppe {

enum class HeadActivation { SigmoidMultilabel, Softmax };

struct ModelConfig {
  int blocks = 12;
  int dim = 768;
  int heads = 12;
  int mlp_ratio = 4;
  int classes = 527;
  PEVariant pe = PEVariant::Absolute;
  HeadActivation head = HeadActivation::SigmoidMultilabel;
  double dropout = 0.1;
  int peg_layers = 5;  // PEG at the outputs of blocks [0, min(peg_layers, blocks))

  int d_k() const { return dim / heads; }
  int peg_block_count() const {
    return pe_features(pe).peg ? std::min(peg_layers, blocks) : 0;
  }

  void validate() const {
    if (blocks < 1 || dim < 1 || heads < 1 || classes < 1 || mlp_ratio < 1) {
      throw std::invalid_argument("model config: extents must be positive");
    }
    if (dim % heads != 0) {
      throw std::invalid_argument("model config: dim " + std::to_string(dim) +
                                  " not divisible by heads " +
                                  std::to_string(heads));
    }
    if (pe_features(pe).bias == BiasKind::TwoD && heads % 2 != 0) {
      throw std::invalid_argument(
          "model config: alibi2d requires an even head count, got " +
          std::to_string(heads));
    }
    if (dropout < 0.0 || dropout >= 1.0) {
      throw std::invalid_argument("model config: dropout must be in [0, 1)");
    }
  }

  static ModelConfig paper() { return ModelConfig{}; }
  static ModelConfig desk() {
    ModelConfig c;
    c.blocks = 2;
    c.dim = 64;
    c.heads = 4;
    c.classes = 2;
    c.dropout = 0.0;
    return c;
  }
};

// Weight matrices use Xavier scaling so tiny desk models and the paper-scale
// model both start in a trainable regime; embedding-like tables use a flat
// base scale.
enum class ParamInit { Xavier, Embedding, Zeros, Ones };

struct ParamSpec {
  std::string name;
  Shape shape;
  ParamInit init = ParamInit::Xavier;

  std::size_t count() const { return shape_numel(shape); }

  double init_stddev(double embed_std) const {
    switch (init) {
      case ParamInit::Xavier: {
        const double fan_in = static_cast<double>(shape[0]);
        const double fan_out =
            static_cast<double>(shape.size() > 1 ? shape[1] : shape[0]);
        return std::sqrt(2.0 / (fan_in + fan_out));
      }
      case ParamInit::Embedding: return embed_std;
      default: return 0.0;
    }
  }
};

inline bool is_pe_param(std::string_view name) {
  return name.starts_with("pos.") || name.starts_with("peg.") ||
         name.find(".rel.") != std::string_view::npos;
}

inline bool is_head_param(std::string_view name) {
  return name.starts_with("head.");
}

// Single source of truth for parameter names, shapes and ordering; both
// allocation and parameter counting derive from it.
inline std::vector<ParamSpec> param_specs(const ModelConfig& cfg,
                                          const PatchLayout& layout) {
  cfg.validate();
  const auto d = static_cast<std::size_t>(cfg.dim);
  const auto dk = static_cast<std::size_t>(cfg.d_k());
  const auto hidden = static_cast<std::size_t>(cfg.dim * cfg.mlp_ratio);
  const auto n = static_cast<std::size_t>(layout.seq_len());
  const auto patch_dim = static_cast<std::size_t>(layout.patch_dim());
  const PEFeatures pe = pe_features(cfg.pe);

  std::vector<ParamSpec> specs;
  specs.push_back({"patch.w", {patch_dim, d}});
  specs.push_back({"patch.b", {d}, ParamInit::Zeros});
  specs.push_back({"cls", {1, d}, ParamInit::Embedding});
  if (pe.absolute) specs.push_back({"pos.absolute", {n, d}, ParamInit::Embedding});
  for (int i = 0; i < cfg.blocks; ++i) {
    const std::string b = "block." + std::to_string(i) + ".";
    specs.push_back({b + "ln1.g", {d}, ParamInit::Ones});
    specs.push_back({b + "ln1.b", {d}, ParamInit::Zeros});
    for (const char* w : {"wq", "wk", "wv", "wo"})
      specs.push_back({b + "attn." + w, {d, d}});
    for (const char* bias : {"bq", "bk", "bv", "bo"})
      specs.push_back({b + "attn." + bias, {d}, ParamInit::Zeros});
    if (pe.bias == BiasKind::Learned) {
      specs.push_back({b + "rel.et",
                       {2 * static_cast<std::size_t>(layout.t_patches) - 1, dk},
                       ParamInit::Embedding});
      specs.push_back({b + "rel.ef",
                       {2 * static_cast<std::size_t>(layout.f_patches) - 1, dk},
                       ParamInit::Embedding});
    }
    specs.push_back({b + "ln2.g", {d}, ParamInit::Ones});
    specs.push_back({b + "ln2.b", {d}, ParamInit::Zeros});
    specs.push_back({b + "mlp.w1", {d, hidden}});
    specs.push_back({b + "mlp.b1", {hidden}, ParamInit::Zeros});
    specs.push_back({b + "mlp.w2", {hidden, d}});
    specs.push_back({b + "mlp.b2", {d}, ParamInit::Zeros});
  }
  for (int i = 0; i < cfg.peg_block_count(); ++i) {
    const std::string p = "peg." + std::to_string(i) + ".";
    specs.push_back({p + "kernel", {d, 3, 3}, ParamInit::Embedding});
    specs.push_back({p + "bias", {d}, ParamInit::Zeros});
  }
  specs.push_back({"final_ln.g", {d}, ParamInit::Ones});
  specs.push_back({"final_ln.b", {d}, ParamInit::Zeros});
  specs.push_back({"head.w", {d, static_cast<std::size_t>(cfg.classes)}});
  specs.push_back({"head.b", {static_cast<std::size_t>(cfg.classes)}, ParamInit::Zeros});
  return specs;
}

template <typename T>
struct ModelParams {
  std::vector<std::pair<std::string, Tensor<T>>> named;

  static ModelParams init(const ModelConfig& cfg, const PatchLayout& layout,
                          Rng& rng, double embed_std = 0.02) {
    ModelParams p;
    for (const ParamSpec& spec : param_specs(cfg, layout)) {
      Tensor<T> t;
      switch (spec.init) {
        case ParamInit::Xavier:
        case ParamInit::Embedding:
          t = Tensor<T>::randn(spec.shape, rng, spec.init_stddev(embed_std), true);
          break;
        case ParamInit::Zeros: t = Tensor<T>::zeros(spec.shape, true); break;
        case ParamInit::Ones: t = Tensor<T>::full(spec.shape, T(1), true); break;
      }
      p.named.emplace_back(spec.name, std::move(t));
    }
    return p;
  }

  const Tensor<T>& get(std::string_view name) const {
    for (const auto& [n, t] : named)
      if (n == name) return t;
    throw std::invalid_argument("model params: no parameter named " +
                                std::string(name));
  }
  Tensor<T>& get(std::string_view name) {
    for (auto& [n, t] : named)
      if (n == name) return t;
    throw std::invalid_argument("model params: no parameter named " +
                                std::string(name));
  }
  bool has(std::string_view name) const {
    for (const auto& [n, t] : named)
      if (n == name) return true;
    return false;
  }

  void zero_grads() {
    for (auto& [n, t] : named) t.zero_grad();
  }

  std::size_t total_count() const {
    std::size_t c = 0;
    for (const auto& [n, t] : named) c += t.numel();
    return c;
  }
};

struct ParamCountRow {
  std::string component;
  std::size_t count = 0;
};

struct ParamCountTable {
  std::vector<ParamCountRow> rows;
  std::size_t pe_subtotal = 0;
  std::size_t total = 0;
};

// Exact integer parameter counts by component, plus the PE-only subtotal.
inline ParamCountTable count_params(const ModelConfig& cfg,
                                    const PatchLayout& layout) {
  ParamCountTable table;
  const auto add = [&table](const std::string& component, std::size_t count) {
    for (auto& row : table.rows) {
      if (row.component == component) {
        row.count += count;
        return;
      }
    }
    table.rows.push_back({component, count});
  };
  for (const ParamSpec& spec : param_specs(cfg, layout)) {
    const std::size_t c = spec.count();
    table.total += c;
    if (spec.name.starts_with("patch.")) add("patch_projection", c);
    else if (spec.name == "cls") add("cls_token", c);
    else if (spec.name.starts_with("pos.absolute")) add("pe.absolute", c);
    else if (spec.name.starts_with("peg.")) add("pe.conditional", c);
    else if (spec.name.find(".rel.") != std::string::npos) add("pe.relative", c);
    else if (spec.name.starts_with("block.")) add("encoder_blocks", c);
    else if (spec.name.starts_with("final_ln.")) add("final_layernorm", c);
    else if (spec.name.starts_with("head.")) add("head", c);
    if (is_pe_param(spec.name)) table.pe_subtotal += c;
  }
  return table;
}

// Eq. 1 scaled dot-product attention for one head:
//   Att(Q, K, V) = Softmax((Q K^T + R) / sqrt(d_k)) V
template <typename T>
Tensor<T> attention(Tape<T>* tape, const Tensor<T>& q, const Tensor<T>& k,
                    const Tensor<T>& v, const Tensor<T>& r) {
  detail::require_rank2(q, "attention");
  detail::require_rank2(k, "attention");
  detail::require_rank2(v, "attention");
  if (q.shape[1] != k.shape[1] || k.shape[0] != v.shape[0]) {
    throw std::invalid_argument("attention: Q " + shape_str(q.shape) + ", K " +
                                shape_str(k.shape) + ", V " + shape_str(v.shape) +
                                " are inconsistent");
  }
  Tensor<T> scores = matmul(tape, q, transpose(tape, k));
  if (r.numel() > 0) {
    detail::require_same_shape(scores, r, "attention bias");
    scores = add(tape, scores, r);
  }
  const T inv_sqrt_dk = T(1) / std::sqrt(static_cast<T>(q.shape[1]));
  Tensor<T> weights = softmax_lastdim(tape, scale(tape, scores, inv_sqrt_dk));
  return matmul(tape, weights, v);
}

template <typename T>
Tensor<T> attention(Tape<T>* tape, const Tensor<T>& q, const Tensor<T>& k,
                    const Tensor<T>& v) {
  return attention(tape, q, k, v, Tensor<T>());
}

template <typename T>
struct EncoderOut {
  Tensor<T> logits;  // 1 x classes
  Tensor<T> seq;     // final-layernorm sequence, rows x d
};

template <typename T>
struct Model {
  ModelConfig cfg;
  PatchLayout layout;
  ModelParams<T> params;
  std::vector<Tensor<T>> fixed_bias;  // per-head ALiBi matrices, cached

  static Model init(const ModelConfig& cfg, const PatchLayout& layout,
                    std::uint64_t seed, double embed_std = 0.02) {
    Model m;
    m.cfg = cfg;
    m.layout = layout;
    Rng rng(seed);
    Rng init_rng = rng.fork("param-init");
    m.params = ModelParams<T>::init(cfg, layout, init_rng, embed_std);
    m.refresh_fixed_bias();
    return m;
  }

  void refresh_fixed_bias() {
    const BiasKind bias = pe_features(cfg.pe).bias;
    fixed_bias.clear();
    if (bias == BiasKind::TimeOnly || bias == BiasKind::TwoD) {
      fixed_bias = alibi_bias<T>(layout, cfg.heads, bias);
    }
  }
};

// Full encoder: patch projection + CLS, optional absolute PE, `blocks`
// pre-norm transformer blocks with the configured attention bias, optional
// PEG at early block outputs, final layernorm, dense head on the CLS row.
// Dropout is active only when a dropout RNG is supplied.
template <typename T>
EncoderOut<T> encoder_forward(Tape<T>* tape, const Model<T>& model,
                              const Tensor<T>& patches, Rng* dropout_rng = nullptr) {
  const ModelConfig& cfg = model.cfg;
  const PatchLayout& layout = model.layout;
  const ModelParams<T>& p = model.params;
  const PEFeatures pe = pe_features(cfg.pe);
  const std::size_t dk = static_cast<std::size_t>(cfg.d_k());
  const double drop = dropout_rng != nullptr ? cfg.dropout : 0.0;

  if (patches.rank() != 2 ||
      patches.shape[0] != static_cast<std::size_t>(layout.seq_len()) ||
      patches.shape[1] != static_cast<std::size_t>(layout.patch_dim())) {
    throw std::invalid_argument("encoder_forward: patches " +
                                shape_str(patches.shape) + ", layout wants (" +
                                std::to_string(layout.seq_len()) + "x" +
                                std::to_string(layout.patch_dim()) + ")");
  }

  Tensor<T> x = project_and_cls(tape, patches, p.get("patch.w"), p.get("patch.b"),
                                p.get("cls"));
  if (pe.absolute) x = absolute_add(tape, x, p.get("pos.absolute"), layout);

  for (int i = 0; i < cfg.blocks; ++i) {
    const std::string b = "block." + std::to_string(i) + ".";

    Tensor<T> h = layernorm_rows(tape, x, p.get(b + "ln1.g"), p.get(b + "ln1.b"));
    Tensor<T> q = add_rowwise(tape, matmul(tape, h, p.get(b + "attn.wq")),
                              p.get(b + "attn.bq"));
    Tensor<T> k = add_rowwise(tape, matmul(tape, h, p.get(b + "attn.wk")),
                              p.get(b + "attn.bk"));
    Tensor<T> v = add_rowwise(tape, matmul(tape, h, p.get(b + "attn.wv")),
                              p.get(b + "attn.bv"));

    std::vector<Tensor<T>> head_outs;
    head_outs.reserve(cfg.heads);
    for (int hd = 0; hd < cfg.heads; ++hd) {
      Tensor<T> qh = slice_cols(tape, q, hd * dk, dk);
      Tensor<T> kh = slice_cols(tape, k, hd * dk, dk);
      Tensor<T> vh = slice_cols(tape, v, hd * dk, dk);
      Tensor<T> scores = matmul(tape, qh, transpose(tape, kh));
      if (!model.fixed_bias.empty()) {
        scores = add(tape, scores, model.fixed_bias[hd]);
      } else if (pe.bias == BiasKind::Learned) {
        Tensor<T> r = relative_bias(tape, qh, p.get(b + "rel.et"),
                                    p.get(b + "rel.ef"), layout);
        scores = add(tape, scores, r);
      }
      scores = scale(tape, scores, T(1) / std::sqrt(static_cast<T>(dk)));
      Tensor<T> weights = softmax_lastdim(tape, scores);
      if (drop > 0.0) weights = dropout(tape, weights, drop, *dropout_rng);
      head_outs.push_back(matmul(tape, weights, vh));
    }
    Tensor<T> attn_out = concat_cols(tape, head_outs);
    attn_out = add_rowwise(tape, matmul(tape, attn_out, p.get(b + "attn.wo")),
                           p.get(b + "attn.bo"));
    x = add(tape, x, attn_out);

    Tensor<T> h2 = layernorm_rows(tape, x, p.get(b + "ln2.g"), p.get(b + "ln2.b"));
    Tensor<T> hidden = gelu(
        tape, add_rowwise(tape, matmul(tape, h2, p.get(b + "mlp.w1")),
                          p.get(b + "mlp.b1")));
    if (drop > 0.0) hidden = dropout(tape, hidden, drop, *dropout_rng);
    Tensor<T> mlp_out = add_rowwise(tape, matmul(tape, hidden, p.get(b + "mlp.w2")),
                                    p.get(b + "mlp.b2"));
    x = add(tape, x, mlp_out);

    if (pe.peg && i < cfg.peg_block_count()) {
      const std::string pg = "peg." + std::to_string(i) + ".";
      x = peg_apply(tape, x, p.get(pg + "kernel"), p.get(pg + "bias"), layout);
    }

    if (!x.all_finite()) {
      throw NumericError("encoder_forward: non-finite activations after block " +
                         std::to_string(i));
    }
  }

  Tensor<T> final_seq =
      layernorm_rows(tape, x, p.get("final_ln.g"), p.get("final_ln.b"));
  Tensor<T> cls_row = slice_rows(tape, final_seq, 0, 1);
  Tensor<T> logits =
      add_rowwise(tape, matmul(tape, cls_row, p.get("head.w")), p.get("head.b"));
  return EncoderOut<T>{std::move(logits), std::move(final_seq)};
}

}  // namespace sppe
