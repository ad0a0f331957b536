#include "tpnet/stmha.hpp"

#include <cmath>
#include <cstdio>
#include <utility>

namespace tpnet {

namespace {

constexpr int kPosHidden = 16;  // hidden width of the positional-encoding MLP

Tensor uniform_param(Rng& rng, Shape shape, int fan_in) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  Tensor t = Tensor::param(std::move(shape));
  for (auto& v : t.node()->values) v = rng.uniform(-bound, bound);
  return t;
}

void init_mha(WeightMap& W, Rng& rng, const std::string& prefix, int width,
              int n_heads) {
  const int d_head = width / n_heads;
  for (int h = 0; h < n_heads; ++h) {
    const std::string hp = prefix + ".h" + std::to_string(h);
    W.emplace(hp + ".wq", uniform_param(rng, {width, d_head}, width));
    W.emplace(hp + ".wk", uniform_param(rng, {width, d_head}, width));
    W.emplace(hp + ".wv", uniform_param(rng, {width, d_head}, width));
  }
  W.emplace(prefix + ".wo", uniform_param(rng, {width, width}, width));
  W.emplace(prefix + ".bo", Tensor::param({width}));
  W.emplace(prefix + ".norm.g", Tensor::param({width}, std::vector<double>(width, 1.0)));
  W.emplace(prefix + ".norm.b", Tensor::param({width}));
}

void init_pos(WeightMap& W, Rng& rng, const std::string& prefix, int width) {
  W.emplace(prefix + ".w1", uniform_param(rng, {1, kPosHidden}, 1));
  W.emplace(prefix + ".b1", uniform_param(rng, {kPosHidden}, 1));
  W.emplace(prefix + ".w2", uniform_param(rng, {kPosHidden, width}, kPosHidden));
  W.emplace(prefix + ".b2", Tensor::param({width}));
}

void init_ffn(WeightMap& W, Rng& rng, const std::string& prefix, int width, int d_ff) {
  W.emplace(prefix + ".w1", uniform_param(rng, {width, d_ff}, width));
  W.emplace(prefix + ".b1", Tensor::param({d_ff}));
  W.emplace(prefix + ".w2", uniform_param(rng, {d_ff, width}, d_ff));
  W.emplace(prefix + ".b2", Tensor::param({width}));
  W.emplace(prefix + ".norm.g", Tensor::param({width}, std::vector<double>(width, 1.0)));
  W.emplace(prefix + ".norm.b", Tensor::param({width}));
}

void init_lstm(WeightMap& W, Rng& rng, const std::string& prefix, int d_in, int hidden) {
  W.emplace(prefix + ".wx", uniform_param(rng, {d_in, 4 * hidden}, d_in));
  W.emplace(prefix + ".wh", uniform_param(rng, {hidden, 4 * hidden}, hidden));
  std::vector<double> b(static_cast<size_t>(4 * hidden), 0.0);
  // forget-gate bias starts at +1 so early training retains memory
  for (int i = hidden; i < 2 * hidden; ++i) b[static_cast<size_t>(i)] = 1.0;
  W.emplace(prefix + ".b", Tensor::param({4 * hidden}, std::move(b)));
}

const Tensor& get(const WeightMap& W, const std::string& name) {
  auto it = W.find(name);
  if (it == W.end()) throw ContractError("missing weight tensor: " + name);
  return it->second;
}

Tensor linear(const WeightMap& W, const std::string& prefix, const Tensor& x) {
  return add(matmul(x, get(W, prefix + ".w")), get(W, prefix + ".b"));
}

Tensor norm(const WeightMap& W, const std::string& prefix, const Tensor& x) {
  return layer_norm(x, get(W, prefix + ".norm.g"), get(W, prefix + ".norm.b"));
}

// One step of the shared 4-gate LSTM cell; gate order (i, f, g, o).
std::pair<Tensor, Tensor> lstm_cell(const WeightMap& W, const std::string& prefix,
                                    const Tensor& x, const Tensor& h, const Tensor& c) {
  const int H = c.cols();
  Tensor gates = add(add(matmul(x, get(W, prefix + ".wx")),
                         matmul(h, get(W, prefix + ".wh"))),
                     get(W, prefix + ".b"));
  Tensor i = sigmoid(slice_cols(gates, 0, H));
  Tensor f = sigmoid(slice_cols(gates, H, 2 * H));
  Tensor g = tanh(slice_cols(gates, 2 * H, 3 * H));
  Tensor o = sigmoid(slice_cols(gates, 3 * H, 4 * H));
  Tensor c_next = add(mul(f, c), mul(i, g));
  Tensor h_next = mul(o, tanh(c_next));
  return {h_next, c_next};
}

Tensor ffn_block(const WeightMap& W, const std::string& prefix, const Tensor& x) {
  Tensor inner = relu(add(matmul(x, get(W, prefix + ".w1")), get(W, prefix + ".b1")));
  Tensor out = add(matmul(inner, get(W, prefix + ".w2")), get(W, prefix + ".b2"));
  return norm(W, prefix, add(out, x));
}

Tensor embed_positions(const WeightMap& W, const Tensor& scaled_xy) {
  return linear(W, "embed", scaled_xy);
}

Tensor positions_tensor(const std::vector<Pos2>& pos) {
  const int n = static_cast<int>(pos.size());
  std::vector<double> v;
  v.reserve(static_cast<size_t>(n) * 2);
  for (const auto& p : pos) {
    v.push_back(p.x());
    v.push_back(p.y());
  }
  return Tensor::from({n, 2}, std::move(v));
}

void warn_if_unscaled(const Tensor& scaled_xy) {
  static thread_local bool warned = false;
  if (warned) return;
  for (double v : scaled_xy.values()) {
    if (std::abs(v) > 1.5) {
      std::fprintf(stderr,
                   "tpnet: warning: embedding input %.3f outside [-1.5, 1.5]; "
                   "positions look unscaled\n", v);
      warned = true;
      return;
    }
  }
}

}  // namespace

void ModelConfig::validate() const {
  if (d_model <= 0 || n_heads <= 0 || stack_depth <= 0 || d_ff <= 0 ||
      lstm_hidden <= 0 || t_steps <= 0 || f_steps <= 0)
    throw ContractError("ModelConfig: all sizes must be positive");
  if (d_model % n_heads != 0)
    throw ContractError("ModelConfig: d_model must be divisible by n_heads");
  if (lstm_hidden % n_heads != 0)
    throw ContractError("ModelConfig: lstm_hidden must be divisible by n_heads");
  if (d_near <= 0.0) throw ContractError("ModelConfig: d_near must be positive");
}

WeightMap init_weights(const ModelConfig& cfg, Rng& rng) {
  cfg.validate();
  WeightMap W;
  W.emplace("embed.w", uniform_param(rng, {2, cfg.d_model}, 2));
  W.emplace("embed.b", Tensor::param({cfg.d_model}));
  if (!cfg.no_encoder_stmha) {
    for (int l = 0; l < cfg.stack_depth; ++l) {
      const std::string lp = "enc.s" + std::to_string(l);
      init_mha(W, rng, lp + ".smha", cfg.d_model, cfg.n_heads);
      init_pos(W, rng, lp + ".pos", cfg.d_model);
      init_mha(W, rng, lp + ".tmha", cfg.d_model, cfg.n_heads);
      init_ffn(W, rng, lp + ".ffn", cfg.d_model, cfg.d_ff);
    }
  }
  init_lstm(W, rng, "enc.lstm", cfg.d_model, cfg.lstm_hidden);

  if (!cfg.no_decoder_stmha) {
    init_mha(W, rng, "dec.smha", cfg.lstm_hidden, cfg.n_heads);
    init_pos(W, rng, "dec.pos", cfg.lstm_hidden);
    init_mha(W, rng, "dec.tmha", cfg.lstm_hidden, cfg.n_heads);
    init_ffn(W, rng, "dec.ffn", cfg.lstm_hidden, cfg.d_ff);
  }
  W.emplace("dec.fuse.w",
            uniform_param(rng, {cfg.lstm_hidden + cfg.d_model, cfg.d_model},
                          cfg.lstm_hidden + cfg.d_model));
  W.emplace("dec.fuse.b", Tensor::param({cfg.d_model}));
  init_lstm(W, rng, "dec.lstm", cfg.d_model, cfg.lstm_hidden);
  W.emplace("dec.out.w", uniform_param(rng, {cfg.lstm_hidden, 2}, cfg.lstm_hidden));
  W.emplace("dec.out.b", Tensor::param({2}));
  return W;
}

Tensor masked_attention(const Tensor& Q, const Tensor& K, const Tensor& V,
                        const Tensor& mask, bool literal_scaling) {
  if (Q.cols() != K.cols())
    throw DimensionError("masked_attention: Q/K width mismatch");
  if (K.rows() != V.rows())
    throw DimensionError("masked_attention: K/V row mismatch");
  if (mask.rows() != Q.rows() || mask.cols() != K.rows())
    throw DimensionError("masked_attention: mask shape mismatch");
  const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(Q.cols()));
  Tensor scores = matmul(Q, transpose(K));
  Tensor weights;
  if (literal_scaling) {
    // printed form: divide the softmax output, not the scores
    weights = scale(masked_softmax(scores, mask, 1), inv_sqrt_dk);
  } else {
    weights = masked_softmax(scale(scores, inv_sqrt_dk), mask, 1);
  }
  return matmul(weights, V);
}

Tensor mha(const WeightMap& W, const std::string& prefix, int n_heads,
           const Tensor& Xq, const Tensor& Xkv, const Tensor& mask,
           bool literal_scaling) {
  Tensor heads;
  for (int h = 0; h < n_heads; ++h) {
    const std::string hp = prefix + ".h" + std::to_string(h);
    Tensor q = matmul(Xq, get(W, hp + ".wq"));
    Tensor k = matmul(Xkv, get(W, hp + ".wk"));
    Tensor v = matmul(Xkv, get(W, hp + ".wv"));
    Tensor a = masked_attention(q, k, v, mask, literal_scaling);
    heads = h == 0 ? a : concat_cols(heads, a);
  }
  return add(matmul(heads, get(W, prefix + ".wo")), get(W, prefix + ".bo"));
}

Tensor mask_from_graph(const InteractionGraph& g) {
  std::vector<double> v(g.adj.begin(), g.adj.end());
  return Tensor::from({g.n, g.n}, std::move(v));
}

Tensor causal_mask(int t) {
  std::vector<double> v(static_cast<size_t>(t) * t, 0.0);
  for (int i = 0; i < t; ++i)
    for (int j = 0; j <= i; ++j) v[static_cast<size_t>(i) * t + j] = 1.0;
  return Tensor::from({t, t}, std::move(v));
}

Tensor positional_encoding(const WeightMap& W, const std::string& prefix,
                           int index, int horizon) {
  if (horizon <= 0) throw ContractError("positional_encoding: horizon must be > 0");
  Tensor idx = Tensor::from({1, 1}, {static_cast<double>(index) / horizon});
  Tensor hid = tanh(add(matmul(idx, get(W, prefix + ".w1")), get(W, prefix + ".b1")));
  Tensor out = add(matmul(hid, get(W, prefix + ".w2")), get(W, prefix + ".b2"));
  return reshape(out, {out.cols()});
}

std::vector<Tensor> smha_layer(const WeightMap& W, const std::string& prefix,
                               int n_heads, const std::vector<Tensor>& X,
                               const std::vector<InteractionGraph>& graphs,
                               bool literal_scaling) {
  if (X.size() != graphs.size())
    throw DimensionError("smha_layer: one graph per timestep required");
  std::vector<Tensor> out;
  out.reserve(X.size());
  for (size_t t = 0; t < X.size(); ++t) {
    if (graphs[t].n != X[t].rows())
      throw DimensionError("smha_layer: graph size does not match vehicle count");
    Tensor mask = mask_from_graph(graphs[t]);
    Tensor o = mha(W, prefix, n_heads, X[t], X[t], mask, literal_scaling);
    out.push_back(norm(W, prefix, add(o, X[t])));
  }
  return out;
}

std::vector<Tensor> tmha_ffn_layer(const WeightMap& W, const std::string& prefix,
                                   int n_heads, const std::vector<Tensor>& X,
                                   bool literal_scaling) {
  const int T = static_cast<int>(X.size());
  const int N = X[0].rows();
  Tensor cmask = causal_mask(T);
  // gather per-vehicle sequences, attend over time, scatter back per step
  std::vector<Tensor> per_vehicle;
  per_vehicle.reserve(static_cast<size_t>(N));
  const std::string tp = prefix + ".tmha";
  for (int i = 0; i < N; ++i) {
    std::vector<Tensor> rows;
    rows.reserve(static_cast<size_t>(T));
    for (int t = 0; t < T; ++t) rows.push_back(row(X[static_cast<size_t>(t)], i));
    Tensor seq = concat_rows(rows);
    Tensor o = mha(W, tp, n_heads, seq, seq, cmask, literal_scaling);
    per_vehicle.push_back(norm(W, tp, add(o, seq)));
  }
  std::vector<Tensor> out;
  out.reserve(static_cast<size_t>(T));
  for (int t = 0; t < T; ++t) {
    std::vector<Tensor> rows;
    rows.reserve(static_cast<size_t>(N));
    for (int i = 0; i < N; ++i) rows.push_back(row(per_vehicle[static_cast<size_t>(i)], t));
    out.push_back(ffn_block(W, prefix + ".ffn", concat_rows(rows)));
  }
  return out;
}

EncodedState encode(const TrajectoryWindow& w, const ScaleSpec& scale,
                    const WeightMap& W, const ModelConfig& cfg) {
  cfg.validate();
  if (w.t_steps != cfg.t_steps)
    throw DimensionError("encode: window t_steps does not match config");
  const int N = w.num_vehicles();
  const int T = w.t_steps;

  std::vector<Tensor> X;
  std::vector<InteractionGraph> graphs;
  X.reserve(static_cast<size_t>(T));
  graphs.reserve(static_cast<size_t>(T));
  for (int t = 0; t < T; ++t) {
    std::vector<Pos2> scaled(static_cast<size_t>(N));
    for (int i = 0; i < N; ++i)
      scaled[static_cast<size_t>(i)] =
          w.present_past(t, i) ? scale.scale(w.past[static_cast<size_t>(t)][static_cast<size_t>(i)])
                               : Pos2::Zero();
    Tensor xy = positions_tensor(scaled);
    warn_if_unscaled(xy);
    X.push_back(embed_positions(W, xy));
    graphs.push_back(build_graph(w, t, cfg.d_near));
  }

  const int horizon = cfg.t_steps + cfg.f_steps;
  if (!cfg.no_encoder_stmha) {
    for (int l = 0; l < cfg.stack_depth; ++l) {
      const std::string lp = "enc.s" + std::to_string(l);
      X = smha_layer(W, lp + ".smha", cfg.n_heads, X, graphs,
                     cfg.literal_attention_scaling);
      for (int t = 0; t < T; ++t)
        X[static_cast<size_t>(t)] =
            add(X[static_cast<size_t>(t)], positional_encoding(W, lp + ".pos", t, horizon));
      X = tmha_ffn_layer(W, lp, cfg.n_heads, X, cfg.literal_attention_scaling);
    }
  }

  EncodedState st;
  Tensor h = Tensor::zeros({N, cfg.lstm_hidden});
  Tensor c = Tensor::zeros({N, cfg.lstm_hidden});
  for (int t = 0; t < T; ++t) {
    auto [h2, c2] = lstm_cell(W, "enc.lstm", X[static_cast<size_t>(t)], h, c);
    h = h2;
    c = c2;
    st.outputs.push_back(h);
  }
  st.hidden = h;
  st.cell = c;
  return st;
}

DecodeResult decode(const EncodedState& state, const TrajectoryWindow& w,
                    const ScaleSpec& scale, const WeightMap& W,
                    const ModelConfig& cfg, double tf_ratio, Rng* tf_rng) {
  cfg.validate();
  if (tf_ratio < 0.0 || tf_ratio > 1.0)
    throw ContractError("decode: tf_ratio must lie in [0, 1]");
  if (w.f_steps != cfg.f_steps)
    throw DimensionError("decode: window f_steps does not match config");
  const int N = w.num_vehicles();
  const int F = cfg.f_steps;
  const int horizon = cfg.t_steps + cfg.f_steps;

  // latest known positions in meters drive the social graph each step
  std::vector<Pos2> latest(static_cast<size_t>(N));
  std::vector<Pos2> latest_scaled(static_cast<size_t>(N));
  for (int i = 0; i < N; ++i) {
    latest[static_cast<size_t>(i)] =
        w.past[static_cast<size_t>(w.t_steps - 1)][static_cast<size_t>(i)];
    latest_scaled[static_cast<size_t>(i)] = scale.scale(latest[static_cast<size_t>(i)]);
  }
  const std::vector<uint8_t> all_present(static_cast<size_t>(N), 1);

  std::vector<Tensor> history = state.outputs;  // grows by one entry per step
  Tensor h = state.hidden;
  Tensor c = state.cell;
  Tensor prev_xy = positions_tensor(latest_scaled);

  DecodeResult res;
  for (int s = 0; s < F; ++s) {
    Tensor stmha_out;
    if (cfg.no_decoder_stmha) {
      stmha_out = h;
    } else {
      const InteractionGraph g = build_graph_at(latest, all_present, cfg.d_near);
      Tensor social_mask = mask_from_graph(g);
      Tensor a = mha(W, "dec.smha", cfg.n_heads, h, h, social_mask,
                     cfg.literal_attention_scaling);
      Tensor cur = norm(W, "dec.smha", add(a, h));
      cur = add(cur, positional_encoding(W, "dec.pos", cfg.t_steps + s, horizon));
      history.push_back(cur);

      // temporal attention: each vehicle's current feature queries its history
      const int len = static_cast<int>(history.size());
      Tensor ones = Tensor::full({1, len}, 1.0);
      std::vector<Tensor> attended;
      attended.reserve(static_cast<size_t>(N));
      for (int i = 0; i < N; ++i) {
        std::vector<Tensor> rows;
        rows.reserve(static_cast<size_t>(len));
        for (const auto& hist_t : history) rows.push_back(row(hist_t, i));
        Tensor seq = concat_rows(rows);
        Tensor q = row(cur, i);
        Tensor o = mha(W, "dec.tmha", cfg.n_heads, q, seq, ones,
                       cfg.literal_attention_scaling);
        attended.push_back(norm(W, "dec.tmha", add(o, q)));
      }
      stmha_out = ffn_block(W, "dec.ffn", concat_rows(attended));
    }

    Tensor fused = add(matmul(concat_cols(stmha_out, embed_positions(W, prev_xy)),
                              get(W, "dec.fuse.w")),
                       get(W, "dec.fuse.b"));
    auto [h2, c2] = lstm_cell(W, "dec.lstm", fused, h, c);
    h = h2;
    c = c2;
    Tensor delta = add(matmul(h, get(W, "dec.out.w")), get(W, "dec.out.b"));
    Tensor pred = add(prev_xy, delta);
    res.positions_scaled.push_back(pred);

    // choose the next input and the next graph positions
    const bool teach = tf_rng != nullptr && tf_ratio > 0.0 && tf_rng->bernoulli(tf_ratio);
    std::vector<uint8_t> used(static_cast<size_t>(N), 0);
    std::vector<Pos2> next_scaled(static_cast<size_t>(N));
    for (int i = 0; i < N; ++i) {
      const bool have_gt = w.present_future(s, i);
      if (teach && have_gt) {
        const Pos2 gt = w.future[static_cast<size_t>(s)][static_cast<size_t>(i)];
        next_scaled[static_cast<size_t>(i)] = scale.scale(gt);
        latest[static_cast<size_t>(i)] = gt;
        used[static_cast<size_t>(i)] = 1;
      } else {
        const Pos2 p(pred.at(i, 0), pred.at(i, 1));
        next_scaled[static_cast<size_t>(i)] = p;
        latest[static_cast<size_t>(i)] = scale.unscale(p);
      }
    }
    res.used_teacher.push_back(std::move(used));
    if (teach) {
      prev_xy = positions_tensor(next_scaled);  // GT input: constant, no grad path
    } else {
      prev_xy = pred;  // model input: keeps the autoregressive gradient path
    }
  }
  return res;
}

std::vector<std::vector<Pos2>> predict_window(const TrajectoryWindow& w,
                                              const ScaleSpec& scale,
                                              const WeightMap& W,
                                              const ModelConfig& cfg) {
  EncodedState st = encode(w, scale, W, cfg);
  DecodeResult dec = decode(st, w, scale, W, cfg, 0.0, nullptr);
  std::vector<std::vector<Pos2>> out;
  out.reserve(dec.positions_scaled.size());
  for (const auto& p : dec.positions_scaled) {
    std::vector<Pos2> step(static_cast<size_t>(p.rows()));
    for (int i = 0; i < p.rows(); ++i)
      step[static_cast<size_t>(i)] = scale.unscale(Pos2(p.at(i, 0), p.at(i, 1)));
    out.push_back(std::move(step));
  }
  return out;
}

}  // namespace tpnet
