#include "hass/encoder.hpp"

#include <cmath>
#include <stdexcept>
#include <utility>

#include "hass/rng.hpp"

namespace hass {

namespace {

Tensor glorot_uniform(std::size_t rows, std::size_t cols, RngStream& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
  Tensor w({rows, cols});
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = rng.uniform(-limit, limit);
  return w;
}

std::size_t auto_heads(std::size_t embed_dim) { return embed_dim % 2 == 0 ? 2 : 1; }

void check_divides(std::size_t heads, std::size_t dim, const char* what) {
  if (heads == 0) throw ConfigError(std::string("head count must be >= 1 (") + what + ")");
  if (dim % heads != 0) {
    throw ConfigError("head count " + std::to_string(heads) + " does not divide " + what + " " +
                      std::to_string(dim));
  }
}

AttentionParams init_attention(std::size_t embed_dim, std::size_t heads, RngStream& rng) {
  check_divides(heads, embed_dim, "embedding dim");
  AttentionParams p;
  p.head_count = heads;
  p.key_dim = embed_dim;
  p.value_dim = embed_dim;
  const std::size_t head_dim = embed_dim / heads;
  p.heads.resize(heads);
  for (auto& h : p.heads) {
    h.wq = glorot_uniform(head_dim, embed_dim, rng);
    h.bq = Tensor({head_dim});
    h.wk = glorot_uniform(head_dim, embed_dim, rng);
    h.bk = Tensor({head_dim});
    h.wv = glorot_uniform(head_dim, embed_dim, rng);
    h.bv = Tensor({head_dim});
  }
  p.wo = glorot_uniform(embed_dim, embed_dim, rng);
  p.bo = Tensor({embed_dim});
  return p;
}

FfnParams init_ffn(std::size_t embed_dim, std::size_t hidden_dim, RngStream& rng) {
  FfnParams p;
  p.w1 = glorot_uniform(hidden_dim, embed_dim, rng);
  p.b1 = Tensor({hidden_dim});
  p.w2 = glorot_uniform(embed_dim, hidden_dim, rng);
  p.b2 = Tensor({embed_dim});
  return p;
}

LayerNormParams init_layer_norm(std::size_t dim, double eps) {
  LayerNormParams p;
  p.gain = Tensor::full({dim}, 1.0);
  p.bias = Tensor({dim});
  p.eps = eps;
  return p;
}

EncoderBlockParams init_block(std::size_t embed_dim, std::size_t heads, std::size_t ffn_dim,
                              double eps, RngStream& rng) {
  EncoderBlockParams b;
  b.attn = init_attention(embed_dim, heads, rng);
  b.ffn = init_ffn(embed_dim, ffn_dim, rng);
  b.ln1 = init_layer_norm(embed_dim, eps);
  b.ln2 = init_layer_norm(embed_dim, eps);
  return b;
}

// Single source of truth for the enumeration order and names of a block's
// trainable tensors.
template <typename Block, typename Fn>
void visit_block(const std::string& prefix, Block& b, Fn&& fn) {
  for (std::size_t i = 0; i < b.attn.heads.size(); ++i) {
    auto& h = b.attn.heads[i];
    const std::string hp = prefix + "attn.h" + std::to_string(i) + ".";
    fn(hp + "wq", h.wq);
    fn(hp + "bq", h.bq);
    fn(hp + "wk", h.wk);
    fn(hp + "bk", h.bk);
    fn(hp + "wv", h.wv);
    fn(hp + "bv", h.bv);
  }
  fn(prefix + "attn.wo", b.attn.wo);
  fn(prefix + "attn.bo", b.attn.bo);
  fn(prefix + "ffn.w1", b.ffn.w1);
  fn(prefix + "ffn.b1", b.ffn.b1);
  fn(prefix + "ffn.w2", b.ffn.w2);
  fn(prefix + "ffn.b2", b.ffn.b2);
  fn(prefix + "ln1.gain", b.ln1.gain);
  fn(prefix + "ln1.bias", b.ln1.bias);
  fn(prefix + "ln2.gain", b.ln2.gain);
  fn(prefix + "ln2.bias", b.ln2.bias);
}

template <typename Params, typename Fn>
void visit_encoder(Params& p, Fn&& fn) {
  visit_block("intra.", p.intra, fn);
  visit_block("inter.", p.inter, fn);
}

// Binds one block's tensors as tape leaves. `record` is called with
// (name, tensor_ref, var) for every tensor, in visit order.
template <typename Block, typename Record>
BlockVars bind_block(Tape& tape, const std::string& prefix, Block& block, Record&& record) {
  BlockVars v;
  v.attn.key_dim = block.attn.key_dim;
  v.attn.head_count = block.attn.head_count;
  v.ln1.eps = block.ln1.eps;
  v.ln2.eps = block.ln2.eps;
  auto push = [&](const std::string& name, auto& tensor) {
    Var var = tape.leaf(tensor);
    record(name, tensor, var);
    return var;
  };
  for (std::size_t i = 0; i < block.attn.heads.size(); ++i) {
    auto& h = block.attn.heads[i];
    const std::string hp = prefix + "attn.h" + std::to_string(i) + ".";
    AttentionVars::Head hv;
    hv.wq = push(hp + "wq", h.wq);
    hv.bq = push(hp + "bq", h.bq);
    hv.wk = push(hp + "wk", h.wk);
    hv.bk = push(hp + "bk", h.bk);
    hv.wv = push(hp + "wv", h.wv);
    hv.bv = push(hp + "bv", h.bv);
    v.attn.heads.push_back(hv);
  }
  v.attn.wo = push(prefix + "attn.wo", block.attn.wo);
  v.attn.bo = push(prefix + "attn.bo", block.attn.bo);
  v.ffn.w1 = push(prefix + "ffn.w1", block.ffn.w1);
  v.ffn.b1 = push(prefix + "ffn.b1", block.ffn.b1);
  v.ffn.w2 = push(prefix + "ffn.w2", block.ffn.w2);
  v.ffn.b2 = push(prefix + "ffn.b2", block.ffn.b2);
  v.ln1.gain = push(prefix + "ln1.gain", block.ln1.gain);
  v.ln1.bias = push(prefix + "ln1.bias", block.ln1.bias);
  v.ln2.gain = push(prefix + "ln2.gain", block.ln2.gain);
  v.ln2.bias = push(prefix + "ln2.bias", block.ln2.bias);
  return v;
}

// Value-only binding for the tensor-level entry points.
EncoderVars bind_encoder_value(Tape& tape, const HassEncoderParams& params) {
  EncoderVars v;
  v.channels = params.channels;
  v.timesteps = params.timesteps;
  v.depth = params.depth;
  auto discard = [](const std::string&, const Tensor&, Var) {};
  v.intra = bind_block(tape, "intra.", params.intra, discard);
  v.inter = bind_block(tape, "inter.", params.inter, discard);
  return v;
}

AttentionVars bind_attention_value(Tape& tape, const AttentionParams& params) {
  AttentionVars v;
  v.key_dim = params.key_dim;
  v.head_count = params.head_count;
  for (const auto& h : params.heads) {
    AttentionVars::Head hv;
    hv.wq = tape.leaf(h.wq);
    hv.bq = tape.leaf(h.bq);
    hv.wk = tape.leaf(h.wk);
    hv.bk = tape.leaf(h.bk);
    hv.wv = tape.leaf(h.wv);
    hv.bv = tape.leaf(h.bv);
    v.heads.push_back(hv);
  }
  v.wo = tape.leaf(params.wo);
  v.bo = tape.leaf(params.bo);
  return v;
}

}  // namespace

void AttentionParams::validate() const {
  if (head_count == 0 || heads.size() != head_count) {
    throw ShapeError("attention params must hold exactly head_count projection triples");
  }
  check_divides(head_count, key_dim, "key dim");
  check_divides(head_count, value_dim, "value dim");
  const std::size_t hk = key_dim / head_count;
  const std::size_t hv = value_dim / head_count;
  for (const auto& h : heads) {
    if (h.wq.rank() != 2 || h.wq.extent(0) != hk || h.wq.extent(1) != key_dim ||
        h.wk.rank() != 2 || h.wk.extent(0) != hk || h.wk.extent(1) != key_dim ||
        h.wv.rank() != 2 || h.wv.extent(0) != hv || h.wv.extent(1) != value_dim ||
        h.bq.size() != hk || h.bk.size() != hk || h.bv.size() != hv) {
      throw ShapeError("attention head projections do not match d_k=" + std::to_string(key_dim) +
                       ", d_v=" + std::to_string(value_dim) +
                       ", m=" + std::to_string(head_count));
    }
  }
  if (wo.rank() != 2 || wo.extent(0) != value_dim || wo.extent(1) != value_dim ||
      bo.size() != value_dim) {
    throw ShapeError("attention output projection must be d_v x d_v with a d_v bias");
  }
}

void FfnParams::validate() const {
  if (w1.rank() != 2 || w2.rank() != 2 || w2.extent(1) != w1.extent(0) ||
      b1.size() != w1.extent(0) || b2.size() != w2.extent(0) || w2.extent(0) != w1.extent(1)) {
    throw ShapeError("ffn params are not a well-formed two-layer map: w1 " + w1.shape_str() +
                     ", w2 " + w2.shape_str());
  }
}

void HassEncoderParams::validate() const {
  if (channels == 0 || timesteps == 0 || depth == 0) {
    throw ShapeError("encoder dims must be >= 1");
  }
  intra.attn.validate();
  inter.attn.validate();
  intra.ffn.validate();
  inter.ffn.validate();
  if (intra.attn.key_dim != intra_embed_dim() || intra.attn.value_dim != intra_embed_dim()) {
    throw ShapeError("intra attention dims must equal T*D");
  }
  if (inter.attn.key_dim != inter_embed_dim() || inter.attn.value_dim != inter_embed_dim()) {
    throw ShapeError("inter attention dims must equal C*D");
  }
}

HassEncoderParams init_encoder(const EncoderConfig& config) {
  if (config.channels == 0 || config.timesteps == 0 || config.depth == 0) {
    throw ConfigError("encoder config: all extents must be >= 1");
  }
  HassEncoderParams p;
  p.channels = config.channels;
  p.timesteps = config.timesteps;
  p.depth = config.depth;

  const std::size_t d_intra = p.intra_embed_dim();
  const std::size_t d_inter = p.inter_embed_dim();
  const std::size_t m_intra = config.heads_intra ? config.heads_intra : auto_heads(d_intra);
  const std::size_t m_inter = config.heads_inter ? config.heads_inter : auto_heads(d_inter);
  check_divides(m_intra, d_intra, "intra embedding dim");
  check_divides(m_inter, d_inter, "inter embedding dim");
  const std::size_t f_intra = config.ffn_dim_intra ? config.ffn_dim_intra : 4 * d_intra;
  const std::size_t f_inter = config.ffn_dim_inter ? config.ffn_dim_inter : 4 * d_inter;

  RngStream rng(config.seed);
  p.intra = init_block(d_intra, m_intra, f_intra, config.ln_eps, rng);
  p.inter = init_block(d_inter, m_inter, f_inter, config.ln_eps, rng);
  return p;
}

void for_each_tensor(HassEncoderParams& params,
                     const std::function<void(const std::string&, Tensor&)>& fn) {
  visit_encoder(params, fn);
}

void for_each_tensor(const HassEncoderParams& params,
                     const std::function<void(const std::string&, const Tensor&)>& fn) {
  visit_encoder(params, fn);
}

EncoderVars bind_encoder(Tape& tape, const HassEncoderParams& params) {
  return bind_encoder_value(tape, params);
}

EncoderVars bind_encoder(Tape& tape, HassEncoderParams& params,
                         std::vector<ParamBinding>& bindings, const std::string& name_prefix) {
  EncoderVars v;
  v.channels = params.channels;
  v.timesteps = params.timesteps;
  v.depth = params.depth;
  auto record = [&](const std::string& name, Tensor& tensor, Var var) {
    bindings.push_back(ParamBinding{name_prefix + name, &tensor, var});
  };
  v.intra = bind_block(tape, "intra.", params.intra, record);
  v.inter = bind_block(tape, "inter.", params.inter, record);
  return v;
}

Var multi_head_attention(Tape& tape, Var q, Var k, Var v, const AttentionVars& params,
                         AttentionProbe* probe) {
  const std::size_t m = params.head_count;
  if (m == 0 || params.heads.size() != m) {
    throw ShapeError("attention: head list does not match head count");
  }
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(params.key_dim) /
                                           static_cast<double>(m));
  std::vector<Var> head_outputs;
  head_outputs.reserve(m);
  for (const auto& h : params.heads) {
    Var qn = tape.add_bias_broadcast(tape.matmul(h.wq, q), h.bq);
    Var kn = tape.add_bias_broadcast(tape.matmul(h.wk, k), h.bk);
    Var vn = tape.add_bias_broadcast(tape.matmul(h.wv, v), h.bv);
    Var scores = tape.scale(tape.matmul(tape.transpose(qn), kn), inv_scale);
    Var attn = tape.softmax_rows(scores);  // N x N, rows sum to 1
    if (probe) probe->head_attention.push_back(attn);
    head_outputs.push_back(tape.matmul(vn, tape.transpose(attn)));
  }
  Var stacked = m == 1 ? head_outputs[0] : tape.vstack(head_outputs);
  return tape.add_bias_broadcast(tape.matmul(params.wo, stacked), params.bo);
}

Var ffn_apply(Tape& tape, Var x, const FfnVars& params) {
  Var hidden = tape.relu(tape.add_bias_broadcast(tape.matmul(params.w1, x), params.b1));
  return tape.add_bias_broadcast(tape.matmul(params.w2, hidden), params.b2);
}

namespace {

// Shared residual structure of both blocks: LN(x + attention(x)) then
// LN(. + ffn(.)), token-wise.
Var block_body(Tape& tape, Var tokens, const BlockVars& params) {
  Var attn = multi_head_attention(tape, tokens, tokens, tokens, params.attn);
  Var f = tape.layer_norm(tape.add(tokens, attn), params.ln1.gain, params.ln1.bias,
                          params.ln1.eps);
  Var ff = ffn_apply(tape, f, params.ffn);
  return tape.layer_norm(tape.add(f, ff), params.ln2.gain, params.ln2.bias, params.ln2.eps);
}

void check_block_input(const Tensor& value, const char* op) {
  if (value.rank() != 3) {
    throw ShapeError(std::string(op) + ": expected a C x T x D input, got " + value.shape_str());
  }
}

}  // namespace

Var intra_channel_block(Tape& tape, Var input, const BlockVars& params) {
  const Tensor& value = tape.value(input);
  check_block_input(value, "intra_channel_block");
  const std::size_t c = value.extent(0), t = value.extent(1), d = value.extent(2);
  if (params.attn.key_dim != t * d) {
    throw ShapeError("intra_channel_block: attention dim " + std::to_string(params.attn.key_dim) +
                     " does not match T*D=" + std::to_string(t * d));
  }
  // Tokens are channels; a channel's flattened time series is its embedding.
  Var tokens = tape.transpose(tape.reshape(input, {c, t * d}));
  Var out = block_body(tape, tokens, params);
  return tape.reshape(tape.transpose(out), {c, t, d});
}

Var inter_channel_block(Tape& tape, Var input, const BlockVars& params) {
  const Tensor& value = tape.value(input);
  check_block_input(value, "inter_channel_block");
  const std::size_t c = value.extent(0), t = value.extent(1), d = value.extent(2);
  if (params.attn.key_dim != c * d) {
    throw ShapeError("inter_channel_block: attention dim " + std::to_string(params.attn.key_dim) +
                     " does not match C*D=" + std::to_string(c * d));
  }
  // Tokens are time slices; the cross-channel vector at a step is its embedding.
  Var tokens = tape.reshape(tape.swap_axes_12(input), {c * d, t});
  Var out = block_body(tape, tokens, params);
  return tape.swap_axes_12(tape.reshape(out, {c, d, t}));
}

Var encode(Tape& tape, Var input, const EncoderVars& params) {
  return inter_channel_block(tape, intra_channel_block(tape, input, params.intra), params.inter);
}

Tensor dot_product_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                             const AttentionParams& params) {
  std::vector<Tensor> ignored;
  return dot_product_attention(q, k, v, params, ignored);
}

Tensor dot_product_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                             const AttentionParams& params,
                             std::vector<Tensor>& head_attention_out) {
  params.validate();
  if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2 || q.extent(1) != k.extent(1) ||
      q.extent(1) != v.extent(1)) {
    throw ShapeError("dot_product_attention: token counts disagree: q " + q.shape_str() + ", k " +
                     k.shape_str() + ", v " + v.shape_str());
  }
  if (q.extent(0) != params.key_dim || k.extent(0) != params.key_dim ||
      v.extent(0) != params.value_dim) {
    throw ShapeError("dot_product_attention: inputs q " + q.shape_str() + ", k " + k.shape_str() +
                     ", v " + v.shape_str() + " do not match d_k=" +
                     std::to_string(params.key_dim) + ", d_v=" + std::to_string(params.value_dim));
  }
  Tape tape;
  AttentionVars vars = bind_attention_value(tape, params);
  AttentionProbe probe;
  Var out = multi_head_attention(tape, tape.leaf(q), tape.leaf(k), tape.leaf(v), vars, &probe);
  head_attention_out.clear();
  for (Var a : probe.head_attention) head_attention_out.push_back(tape.value(a));
  return tape.value(out);
}

Tensor ffn(const Tensor& x, const FfnParams& params) {
  params.validate();
  if (x.rank() != 2 || x.extent(0) != params.w1.extent(1)) {
    throw ShapeError("ffn: input " + x.shape_str() + " does not match w1 " +
                     params.w1.shape_str());
  }
  Tape tape;
  FfnVars vars{tape.leaf(params.w1), tape.leaf(params.b1), tape.leaf(params.w2),
               tape.leaf(params.b2)};
  return tape.value(ffn_apply(tape, tape.leaf(x), vars));
}

namespace {

Tensor run_block(const Tensor& input, const EncoderBlockParams& params, bool intra) {
  Tape tape;
  auto discard = [](const std::string&, const Tensor&, Var) {};
  BlockVars vars = bind_block(tape, intra ? "intra." : "inter.", params, discard);
  Var out = intra ? intra_channel_block(tape, tape.leaf(input), vars)
                  : inter_channel_block(tape, tape.leaf(input), vars);
  return tape.value(out);
}

}  // namespace

Tensor intra_channel_block(const Tensor& input, const EncoderBlockParams& params) {
  return run_block(input, params, true);
}

Tensor inter_channel_block(const Tensor& input, const EncoderBlockParams& params) {
  return run_block(input, params, false);
}

Tensor encode(const Tensor& input, const HassEncoderParams& params) {
  params.validate();
  if (input.rank() != 3 || input.extent(0) != params.channels ||
      input.extent(1) != params.timesteps || input.extent(2) != params.depth) {
    throw ShapeError("encode: input " + input.shape_str() + " does not match encoder dims " +
                     std::to_string(params.channels) + "x" + std::to_string(params.timesteps) +
                     "x" + std::to_string(params.depth));
  }
  Tape tape;
  EncoderVars vars = bind_encoder_value(tape, params);
  return tape.value(encode(tape, tape.leaf(input), vars));
}

}  // namespace hass
