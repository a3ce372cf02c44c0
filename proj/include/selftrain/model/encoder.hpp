// Copyright 2026 The selftrain Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Small BERT-style encoder (post-LN transformer) with three heads: MLM over
// the vocabulary, classification from the [CLS] position, and per-token tag
// emissions. The CRF transition scores live here too so they are
// checkpointed with the rest of the model.
//
// Parameter names:
//   embeddings.token  embeddings.position  embeddings.ln.{gamma,beta}
//   layer.{i}.attn.{q,k,v,o}.{w,b}  layer.{i}.attn.ln.{gamma,beta}
//   layer.{i}.ffn.{in,out}.{w,b}    layer.{i}.ffn.ln.{gamma,beta}
//   pooler.{w,b} (optional)  cls.{w,b}  tok.{w,b}  mlm.{w (untied only),b}
//   crf.{transitions,start,end}

#include <json.hpp>

#include <cstdint>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "selftrain/autodiff/adam.hpp"
#include "selftrain/autodiff/checkpoint.hpp"
#include "selftrain/autodiff/ops.hpp"

namespace selftrain {

struct EncoderConfig {
  std::size_t num_layers = 2;
  std::size_t hidden = 64;
  std::size_t heads = 4;
  std::size_t ffn_mult = 4;
  std::size_t max_seq_len = 32;
  std::size_t vocab_size = 0;
  std::size_t num_classes = 0;
  std::size_t num_tags = 0;
  double dropout = 0.1;
  double init_std = 0.02;
  bool tie_mlm = false;     // reuse embeddings.token as the MLM projection
  bool cls_pooler = false;  // tanh pooler between [CLS] and the classifier

  void validate() const {
    if (num_layers < 1) throw ConfigError("encoder: num_layers must be >= 1");
    if (heads == 0 || hidden % heads != 0)
      throw ConfigError("encoder: hidden (" + std::to_string(hidden) + ") must be divisible by heads (" +
                        std::to_string(heads) + ")");
    if (ffn_mult == 0 || max_seq_len < 3 || vocab_size < 5)
      throw ConfigError("encoder: ffn_mult, max_seq_len >= 3 and vocab_size >= 5 required");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("encoder: dropout must lie in [0, 1)");
  }
  bool operator==(const EncoderConfig&) const = default;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(EncoderConfig, num_layers, hidden, heads, ffn_mult, max_seq_len,
                                                vocab_size, num_classes, num_tags, dropout, init_std, tie_mlm,
                                                cls_pooler)

// Closed-form parameter count; must agree with init_model().
inline std::size_t expected_parameter_count(const EncoderConfig& c) {
  const std::size_t H = c.hidden, F = c.hidden * c.ffn_mult, V = c.vocab_size, S = c.max_seq_len;
  const std::size_t C = std::max<std::size_t>(c.num_classes, 1), T = std::max<std::size_t>(c.num_tags, 1);
  const std::size_t per_layer = 4 * (H * H + H) + 2 * H + (H * F + F) + (F * H + H) + 2 * H;
  std::size_t n = V * H + S * H + 2 * H + c.num_layers * per_layer;
  if (c.cls_pooler) n += H * H + H;
  n += H * C + C + H * T + T;
  n += (c.tie_mlm ? 0 : H * V) + V;
  n += T * T + 2 * T;
  return n;
}

template <class T>
struct LayerParams {
  Tensor<T> q_w, q_b, k_w, k_b, v_w, v_b, o_w, o_b, attn_ln_g, attn_ln_b;
  Tensor<T> ffn_in_w, ffn_in_b, ffn_out_w, ffn_out_b, ffn_ln_g, ffn_ln_b;
};

template <class T>
struct CrfParams {
  Tensor<T> transitions;  // [K, K], score of tag i -> tag j
  Tensor<T> start;        // [K]
  Tensor<T> end;          // [K]

  std::size_t num_tags() const { return start.numel(); }
};

template <class T>
class EncoderModel {
 public:
  EncoderModel() = default;
  EncoderModel(EncoderModel&&) noexcept = default;
  EncoderModel& operator=(EncoderModel&&) noexcept = default;
  // Tensors are handles; copying would alias parameters. Use clone().
  EncoderModel(const EncoderModel&) = delete;
  EncoderModel& operator=(const EncoderModel&) = delete;

  EncoderConfig config;
  Tensor<T> tok_emb, pos_emb, emb_ln_g, emb_ln_b;
  std::vector<LayerParams<T>> layers;
  Tensor<T> pooler_w, pooler_b, cls_w, cls_b, tok_w, tok_b, mlm_w, mlm_b;
  CrfParams<T> crf;

  // Every parameter in registration order (the checkpoint order).
  std::vector<Param<T>>& params() { return params_; }
  const std::vector<Param<T>>& params() const { return params_; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.tensor.numel();
    return n;
  }

  Tensor<T> param(const std::string& name) const {
    for (const auto& p : params_)
      if (p.name == name) return p.tensor;
    throw IndexError("no parameter named '" + name + "'");
  }

  void zero_grad() {
    for (auto& p : params_) p.tensor.zero_grad();
  }

  // Deep copy with independent storage.
  EncoderModel clone() const {
    EncoderModel m = build(config);
    for (std::size_t i = 0; i < params_.size(); ++i)
      std::copy(params_[i].tensor.data().begin(), params_[i].tensor.data().end(), m.params_[i].tensor.data().begin());
    return m;
  }

  std::string serialize() const { return serialize_checkpoint(params_); }
  void deserialize(std::string_view bytes) { deserialize_checkpoint<T>(bytes, params_); }

  // Allocates zero-valued parameters for `config` (see init_model).
  static EncoderModel build(const EncoderConfig& config) {
    config.validate();
    EncoderModel m;
    m.config = config;
    const std::size_t H = config.hidden, F = config.hidden * config.ffn_mult, V = config.vocab_size;
    const std::size_t C = std::max<std::size_t>(config.num_classes, 1);
    const std::size_t K = std::max<std::size_t>(config.num_tags, 1);
    auto reg = [&m](const std::string& name, Shape shape, bool decay) {
      auto t = Tensor<T>::zeros(std::move(shape), true);
      m.params_.push_back({name, t, decay});
      return t;
    };
    m.tok_emb = reg("embeddings.token", {V, H}, true);
    m.pos_emb = reg("embeddings.position", {config.max_seq_len, H}, true);
    m.emb_ln_g = reg("embeddings.ln.gamma", {H}, false);
    m.emb_ln_b = reg("embeddings.ln.beta", {H}, false);
    for (std::size_t i = 0; i < config.num_layers; ++i) {
      const std::string p = "layer." + std::to_string(i) + ".";
      LayerParams<T> l;
      l.q_w = reg(p + "attn.q.w", {H, H}, true);
      l.q_b = reg(p + "attn.q.b", {H}, false);
      l.k_w = reg(p + "attn.k.w", {H, H}, true);
      l.k_b = reg(p + "attn.k.b", {H}, false);
      l.v_w = reg(p + "attn.v.w", {H, H}, true);
      l.v_b = reg(p + "attn.v.b", {H}, false);
      l.o_w = reg(p + "attn.o.w", {H, H}, true);
      l.o_b = reg(p + "attn.o.b", {H}, false);
      l.attn_ln_g = reg(p + "attn.ln.gamma", {H}, false);
      l.attn_ln_b = reg(p + "attn.ln.beta", {H}, false);
      l.ffn_in_w = reg(p + "ffn.in.w", {H, F}, true);
      l.ffn_in_b = reg(p + "ffn.in.b", {F}, false);
      l.ffn_out_w = reg(p + "ffn.out.w", {F, H}, true);
      l.ffn_out_b = reg(p + "ffn.out.b", {H}, false);
      l.ffn_ln_g = reg(p + "ffn.ln.gamma", {H}, false);
      l.ffn_ln_b = reg(p + "ffn.ln.beta", {H}, false);
      m.layers.push_back(l);
    }
    if (config.cls_pooler) {
      m.pooler_w = reg("pooler.w", {H, H}, true);
      m.pooler_b = reg("pooler.b", {H}, false);
    }
    m.cls_w = reg("cls.w", {H, C}, true);
    m.cls_b = reg("cls.b", {C}, false);
    m.tok_w = reg("tok.w", {H, K}, true);
    m.tok_b = reg("tok.b", {K}, false);
    if (!config.tie_mlm) m.mlm_w = reg("mlm.w", {H, V}, true);
    m.mlm_b = reg("mlm.b", {V}, false);
    m.crf.transitions = reg("crf.transitions", {K, K}, false);
    m.crf.start = reg("crf.start", {K}, false);
    m.crf.end = reg("crf.end", {K}, false);
    return m;
  }

 private:
  std::vector<Param<T>> params_;
};

// Truncated-normal(init_std) weight matrices and embeddings, zero biases,
// unit layer-norm gain, zero CRF scores. A pure function of (config, seed).
template <class T>
EncoderModel<T> init_model(const EncoderConfig& config, std::uint64_t seed) {
  auto m = EncoderModel<T>::build(config);
  Rng rng(derive_seed(seed, "init_model"));
  for (auto& p : m.params()) {
    const auto& n = p.name;
    auto data = p.tensor.data();
    const bool is_gamma = n.ends_with(".gamma");
    const bool is_weight = n.ends_with(".w") || n.starts_with("embeddings.token") ||
                           n.starts_with("embeddings.position");
    if (is_gamma) {
      std::fill(data.begin(), data.end(), T(1));
    } else if (is_weight) {
      for (auto& v : data) v = static_cast<T>(rng.truncated_normal(config.init_std));
    }
  }
  return m;
}

// Optional capture of attention probabilities, one [B, heads, S, S] block per
// layer.
template <class T>
struct ForwardTrace {
  std::vector<Buffer<T>> attention_probs;
};

// ids and attention_mask are [batch * seq] row-major. `rng` is required when
// training with dropout > 0.
template <class T>
Tensor<T> encoder_forward(const EncoderModel<T>& model, std::span<const int> input_ids,
                          std::span<const int> attention_mask, std::size_t batch, bool training, Rng* rng,
                          ForwardTrace<T>* trace = nullptr) {
  const auto& c = model.config;
  if (batch == 0 || input_ids.size() % batch != 0)
    throw DimensionError("encoder_forward: " + std::to_string(input_ids.size()) + " ids for batch " +
                         std::to_string(batch));
  const std::size_t seq = input_ids.size() / batch;
  if (seq > c.max_seq_len)
    throw DimensionError("encoder_forward: sequence length " + std::to_string(seq) + " exceeds max_seq_len " +
                         std::to_string(c.max_seq_len));
  if (attention_mask.size() != input_ids.size()) throw DimensionError("encoder_forward: mask/ids size mismatch");
  for (int m : attention_mask)
    if (m != 0 && m != 1) throw ContractError("encoder_forward: attention mask must be 0/1");
  for (int id : input_ids)
    if (id < 0 || static_cast<std::size_t>(id) >= c.vocab_size)
      throw IndexError("encoder_forward: token id " + std::to_string(id) + " outside vocabulary of " +
                       std::to_string(c.vocab_size));

  std::vector<int> positions(batch * seq);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t s = 0; s < seq; ++s) positions[b * seq + s] = static_cast<int>(s);
  const double p = c.dropout;

  auto x = add(embedding_lookup(model.tok_emb, input_ids, {batch, seq}),
               embedding_lookup(model.pos_emb, std::span<const int>(positions), {batch, seq}));
  x = dropout(layer_norm(x, model.emb_ln_g, model.emb_ln_b), p, training, rng);

  for (const auto& l : model.layers) {
    auto q = linear(x, l.q_w, l.q_b);
    auto k = linear(x, l.k_w, l.k_b);
    auto v = linear(x, l.v_w, l.v_b);
    Buffer<T>* probs = nullptr;
    if (trace) probs = &trace->attention_probs.emplace_back();
    auto ctx = multi_head_attention(q, k, v, attention_mask, c.heads, p, training, rng, probs);
    auto attn = dropout(linear(ctx, l.o_w, l.o_b), p, training, rng);
    x = layer_norm(add(x, attn), l.attn_ln_g, l.attn_ln_b);
    auto h = gelu(linear(x, l.ffn_in_w, l.ffn_in_b));
    auto f = dropout(linear(h, l.ffn_out_w, l.ffn_out_b), p, training, rng);
    x = layer_norm(add(x, f), l.ffn_ln_g, l.ffn_ln_b);
  }
  return x;
}

namespace detail {

template <class T>
void check_hidden(const EncoderModel<T>& model, const Tensor<T>& hidden_states, const char* head) {
  if (hidden_states.rank() != 3 || hidden_states.dim(2) != model.config.hidden)
    throw DimensionError(std::string(head) + ": hidden states " + shape_str(hidden_states.shape()) +
                         " do not match encoder hidden size " + std::to_string(model.config.hidden));
}

}  // namespace detail

// [B, num_classes] from the [CLS] position.
template <class T>
Tensor<T> cls_logits(const EncoderModel<T>& model, const Tensor<T>& hidden_states) {
  detail::check_hidden(model, hidden_states, "cls_logits");
  auto cls = select_position(hidden_states, 0);
  if (model.config.cls_pooler) cls = tanh(linear(cls, model.pooler_w, model.pooler_b));
  return linear(cls, model.cls_w, model.cls_b);
}

// [B, S, num_tags]
template <class T>
Tensor<T> token_logits(const EncoderModel<T>& model, const Tensor<T>& hidden_states) {
  detail::check_hidden(model, hidden_states, "token_logits");
  return linear(hidden_states, model.tok_w, model.tok_b);
}

namespace detail {

// y = x E^T + b for a tied [V, H] embedding table.
template <class T>
Tensor<T> tied_projection(const Tensor<T>& x, const Tensor<T>& table, const Tensor<T>& bias) {
  const auto rows = leading(x.shape()), H = table.dim(1), V = table.dim(0);
  Buffer<T> out(rows * V);
  MapR<T> y(out.data(), rows, V);
  y.noalias() = CMapR<T>(x.data().data(), rows, H) * CMapR<T>(table.data().data(), V, H).transpose();
  y.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(bias.data().data(), V);
  Shape shape = x.shape();
  shape.back() = V;
  const bool track = any_requires_grad<T>({&x, &table, &bias});
  auto r = make_output<T>(std::move(shape), std::move(out), track);
  if (track)
    record<T>(r, [xn = x.node(), en = table.node(), bn = bias.node(), rows, H, V](std::span<const T> g) {
      CMapR<T> dy(g.data(), rows, V);
      if (xn->requires_grad)
        MapR<T>(xn->ensure_grad().data(), rows, H).noalias() += dy * CMapR<T>(en->data.data(), V, H);
      if (en->requires_grad)
        MapR<T>(en->ensure_grad().data(), V, H).noalias() += dy.transpose() * CMapR<T>(xn->data.data(), rows, H);
      if (bn->requires_grad)
        Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>(bn->ensure_grad().data(), V) += dy.colwise().sum();
    });
  return r;
}

}  // namespace detail

// [B, S, vocab_size]
template <class T>
Tensor<T> mlm_logits(const EncoderModel<T>& model, const Tensor<T>& hidden_states) {
  detail::check_hidden(model, hidden_states, "mlm_logits");
  if (model.config.tie_mlm) return detail::tied_projection(hidden_states, model.tok_emb, model.mlm_b);
  return linear(hidden_states, model.mlm_w, model.mlm_b);
}

}  // namespace selftrain
