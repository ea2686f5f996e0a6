#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "hass/autodiff.hpp"
#include "hass/tensor.hpp"

namespace hass {

// Multi-head dot-product attention parameters for one block: per-head
// query/key projections plus the value/output projections. Projections map
// d_k-dimensional tokens to d_k/m per head (d_v analogous for values).
struct AttentionParams {
  struct Head {
    Tensor wq;  // (d_k/m) x d_k
    Tensor bq;  // d_k/m
    Tensor wk;  // (d_k/m) x d_k
    Tensor bk;  // d_k/m
    Tensor wv;  // (d_v/m) x d_v
    Tensor bv;  // d_v/m
  };
  std::size_t head_count = 1;
  std::size_t key_dim = 0;    // d_k
  std::size_t value_dim = 0;  // d_v
  std::vector<Head> heads;
  Tensor wo;  // d_v x d_v
  Tensor bo;  // d_v

  void validate() const;
};

// Two dense layers with a ReLU between them: w2 [w1 x + b1]_+ + b2.
struct FfnParams {
  Tensor w1;  // d_f x d
  Tensor b1;  // d_f
  Tensor w2;  // d x d_f
  Tensor b2;  // d

  void validate() const;
};

struct LayerNormParams {
  Tensor gain;
  Tensor bias;
  double eps = 1e-5;
};

// One residual attention block: LN(x + attention) followed by LN(. + ffn),
// each layer norm with its own affine parameters.
struct EncoderBlockParams {
  AttentionParams attn;
  FfnParams ffn;
  LayerNormParams ln1;
  LayerNormParams ln2;
};

// The full encoder: a block attending across channels (tokens = channels,
// embedding = flattened per-channel time series) followed by a block
// attending along time slices (tokens = time steps, embedding = the
// cross-channel vector at that step). Both blocks preserve the input shape.
struct HassEncoderParams {
  std::size_t channels = 0;   // C
  std::size_t timesteps = 0;  // T
  std::size_t depth = 1;      // D

  EncoderBlockParams intra;
  EncoderBlockParams inter;

  std::size_t intra_embed_dim() const { return timesteps * depth; }
  std::size_t inter_embed_dim() const { return channels * depth; }
  void validate() const;
};

struct EncoderConfig {
  std::size_t channels = 0;
  std::size_t timesteps = 0;
  std::size_t depth = 1;
  // 0 means auto: 2 heads when the embedding dim is divisible by 2, else 1.
  std::size_t heads_intra = 0;
  std::size_t heads_inter = 0;
  // 0 means auto: 4x the block's embedding dim.
  std::size_t ffn_dim_intra = 0;
  std::size_t ffn_dim_inter = 0;
  double ln_eps = 1e-5;
  std::uint64_t seed = 0;
};

// Glorot-uniform weights, zero biases, identity layer norms, all drawn from
// one deterministic stream of `seed`.
HassEncoderParams init_encoder(const EncoderConfig& config);

// ---- Tape-level building blocks (used by training and gradient checks) ----

struct AttentionVars {
  struct Head {
    Var wq, bq, wk, bk, wv, bv;
  };
  std::vector<Head> heads;
  Var wo, bo;
  std::size_t key_dim = 0;
  std::size_t head_count = 1;
};

struct FfnVars {
  Var w1, b1, w2, b2;
};

struct LayerNormVars {
  Var gain, bias;
  double eps = 1e-5;
};

struct BlockVars {
  AttentionVars attn;
  FfnVars ffn;
  LayerNormVars ln1, ln2;
};

struct EncoderVars {
  std::size_t channels = 0, timesteps = 0, depth = 1;
  BlockVars intra, inter;
};

// Name -> (host tensor, tape leaf) correspondence for one bound parameter.
struct ParamBinding {
  std::string name;
  Tensor* tensor;
  Var var;
};

// Enumerates every trainable tensor of the encoder in a fixed order with its
// serialization name ("intra.attn.h0.wq", ...). Shared by the binder, the
// optimizer and the parameter file writer.
void for_each_tensor(HassEncoderParams& params,
                     const std::function<void(const std::string&, Tensor&)>& fn);
void for_each_tensor(const HassEncoderParams& params,
                     const std::function<void(const std::string&, const Tensor&)>& fn);

// Registers every encoder tensor as a tape leaf and appends the bindings.
EncoderVars bind_encoder(Tape& tape, HassEncoderParams& params,
                         std::vector<ParamBinding>& bindings,
                         const std::string& name_prefix = "enc.");
// Value-only binding for pure forward passes.
EncoderVars bind_encoder(Tape& tape, const HassEncoderParams& params);

// Per-head attention probe: softmax matrices recorded during a forward pass.
struct AttentionProbe {
  std::vector<Var> head_attention;  // one N x N var per head
};

// Multi-head dot-product attention on the tape. q, k, v are [d_k x N] /
// [d_v x N]; the result is [d_v x N].
Var multi_head_attention(Tape& tape, Var q, Var k, Var v, const AttentionVars& params,
                         AttentionProbe* probe = nullptr);

Var ffn_apply(Tape& tape, Var x, const FfnVars& params);

// Channel-token block: attention across channels, then the feed-forward,
// each behind a residual + token-wise layer norm. Input and output are
// [C x T x D].
Var intra_channel_block(Tape& tape, Var input, const BlockVars& params);
// Time-token block, same structure with tokens = time slices.
Var inter_channel_block(Tape& tape, Var input, const BlockVars& params);
// intra block then inter block; shape-preserving.
Var encode(Tape& tape, Var input, const EncoderVars& params);

// ---- Tensor-level entry points ----

Tensor dot_product_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                             const AttentionParams& params);
// As above, additionally returning each head's N x N attention matrix.
Tensor dot_product_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                             const AttentionParams& params,
                             std::vector<Tensor>& head_attention_out);
Tensor ffn(const Tensor& x, const FfnParams& params);
Tensor intra_channel_block(const Tensor& input, const EncoderBlockParams& params);
Tensor inter_channel_block(const Tensor& input, const EncoderBlockParams& params);
Tensor encode(const Tensor& input, const HassEncoderParams& params);

}  // namespace hass
