#pragma once

#include <optional>
#include <string>
#include <vector>

#include "tpnet/rng.hpp"
#include "tpnet/tensor.hpp"
#include "tpnet/tracks.hpp"
#include "tpnet/weights_io.hpp"

namespace tpnet {

// Socio-temporal masked multi-head attention encoder-decoder.
//
// Encoder: linear embedding of scaled (x, y), then `stack_depth` repetitions
// of [social MHA over vehicles (graph mask) -> learned positional encoding ->
// temporal MHA over timesteps (causal mask) -> feed-forward], each sublayer
// with residual + layer norm, followed by a shared LSTM over time.
//
// Decoder, per future step: one social+temporal attention layer over the
// growing hidden-state history (social mask rebuilt from the latest known
// positions), fused with the embedded previous position, driving an LSTM
// cell whose hidden state feeds a per-step position-delta head.

struct ModelConfig {
  int d_model = 32;
  int n_heads = 4;
  int stack_depth = 2;  // M
  int d_ff = 64;
  int lstm_hidden = 32;
  int t_steps = 6;
  int f_steps = 10;
  double d_near = 15.0;
  // Divide attention *weights* by sqrt(d_k) after the softmax instead of
  // scaling the scores before it. Off by default: post-softmax division
  // breaks the weights-sum-to-1 property.
  bool literal_attention_scaling = false;
  // Ablation switches: drop the encoder STMHA stack (embedding feeds the
  // LSTM directly) or the decoder's per-step STMHA block.
  bool no_encoder_stmha = false;
  bool no_decoder_stmha = false;

  void validate() const;
};

struct EncodedState {
  Tensor hidden;                // [N, lstm_hidden]
  Tensor cell;                  // [N, lstm_hidden]
  std::vector<Tensor> outputs;  // t_steps entries of [N, lstm_hidden]
};

struct DecodeResult {
  std::vector<Tensor> positions_scaled;       // f_steps entries of [N, 2]
  std::vector<std::vector<uint8_t>> used_teacher;  // [step][vehicle]
};

// Fresh parameter set, uniform +-1/sqrt(fan_in), LSTM forget bias +1.
WeightMap init_weights(const ModelConfig& cfg, Rng& rng);

// ---- building blocks (exposed for targeted tests) -------------------------

// Q [m, d_k], K [n, d_k], V [n, d_v], mask [m, n] of {0,1}. Masked scores
// receive -inf before the softmax; every mask row needs >= 1 allowed entry.
Tensor masked_attention(const Tensor& Q, const Tensor& K, const Tensor& V,
                        const Tensor& mask, bool literal_scaling = false);

// Multi-head block named `prefix` in W ("<prefix>.h<k>.wq/wk/wv" plus
// "<prefix>.wo/bo"): splits into heads, attends with the shared mask,
// concatenates, projects.
Tensor mha(const WeightMap& W, const std::string& prefix, int n_heads,
           const Tensor& Xq, const Tensor& Xkv, const Tensor& mask,
           bool literal_scaling);

Tensor mask_from_graph(const InteractionGraph& g);
Tensor causal_mask(int t);  // [t, t] lower-triangular ones

// Learned positional encoding for one timestep index: rank-1 [width] vector
// from the two-layer MLP at `prefix` ("<prefix>.w1/b1/w2/b2").
Tensor positional_encoding(const WeightMap& W, const std::string& prefix,
                           int index, int horizon);

// One social-attention sublayer applied per timestep: X[t] is [N, width].
std::vector<Tensor> smha_layer(const WeightMap& W, const std::string& prefix,
                               int n_heads, const std::vector<Tensor>& X,
                               const std::vector<InteractionGraph>& graphs,
                               bool literal_scaling);

// Temporal attention (strict causal mask) + feed-forward, both with residual
// and norm, applied per vehicle across the sequence.
std::vector<Tensor> tmha_ffn_layer(const WeightMap& W, const std::string& prefix,
                                   int n_heads, const std::vector<Tensor>& X,
                                   bool literal_scaling);

// ---- full model ------------------------------------------------------------

// Scales the past positions, builds per-timestep interaction graphs from the
// unscaled positions, and runs the full encoder.
EncodedState encode(const TrajectoryWindow& w, const ScaleSpec& scale,
                    const WeightMap& W, const ModelConfig& cfg);

// Iterative decoding over cfg.f_steps. With tf_rng set, each (step, vehicle)
// input is the ground-truth position with probability tf_ratio when the GT
// exists; otherwise the model's own previous prediction. tf_rng == nullptr
// forces closed-loop rollout.
DecodeResult decode(const EncodedState& state, const TrajectoryWindow& w,
                    const ScaleSpec& scale, const WeightMap& W,
                    const ModelConfig& cfg, double tf_ratio = 0.0,
                    Rng* tf_rng = nullptr);

// Convenience: encode + closed-loop decode, unscaled meter outputs
// [step][vehicle] in the window's frame (relative to w.origin); no gradients
// recorded.
std::vector<std::vector<Pos2>> predict_window(const TrajectoryWindow& w,
                                              const ScaleSpec& scale,
                                              const WeightMap& W,
                                              const ModelConfig& cfg);

}  // namespace tpnet
