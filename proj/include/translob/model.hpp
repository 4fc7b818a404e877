#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "translob/adam.hpp"
#include "translob/autodiff.hpp"
#include "translob/init.hpp"
#include "translob/nn.hpp"
#include "translob/rng.hpp"
#include "translob/tensor.hpp"

namespace translob {

/// Attention score scaling: the head formula divides by sqrt(d) as printed;
/// head_dim uses the conventional sqrt(d/C) instead.
enum class ScaleMode { model_dim, head_dim };

inline const char* to_string(ScaleMode m) {
  return m == ScaleMode::model_dim ? "model_dim" : "head_dim";
}

inline ScaleMode scale_mode_from_string(const std::string& s) {
  if (s == "model_dim") return ScaleMode::model_dim;
  if (s == "head_dim") return ScaleMode::head_dim;
  throw ValidationError("unknown scale_mode: " + s);
}

struct ModelConfig {
  int window = 100;
  int input_features = 40;
  int conv_filters = 14;
  int kernel_size = 2;
  std::vector<int> dilations = {1, 2, 4, 8, 16};
  int model_dim = 15;  // conv_filters + 1 temporal channel
  int heads = 3;
  int blocks = 2;
  bool weights_shared = true;
  int mlp_inner = 60;  // 4 * model_dim
  int dense_dim = 64;
  int classes = 3;
  double dropout_rate = 0.1;
  double l2_lambda = 1e-4;
  ScaleMode scale_mode = ScaleMode::model_dim;
  std::uint64_t seed = 1;

  void validate() const {
    if (window < 1) throw ValidationError("window must be >= 1");
    if (input_features < 1) throw ValidationError("input_features must be >= 1");
    if (conv_filters < 1) throw ValidationError("conv_filters must be >= 1");
    if (kernel_size < 1) throw ValidationError("kernel_size must be >= 1");
    if (dilations.empty()) throw ValidationError("at least one conv layer is required");
    for (int d : dilations)
      if (d < 1) throw ValidationError("dilation rates must be >= 1");
    if (model_dim != conv_filters + 1)
      throw ValidationError("model_dim must equal conv_filters + 1 (temporal channel), got " +
                            std::to_string(model_dim) + " vs " + std::to_string(conv_filters) + "+1");
    if (heads < 1) throw ValidationError("heads must be >= 1");
    if (model_dim % heads != 0)
      throw ValidationError("heads (" + std::to_string(heads) + ") must divide model_dim (" +
                            std::to_string(model_dim) + ")");
    if (blocks < 1) throw ValidationError("blocks must be >= 1");
    if (mlp_inner != 4 * model_dim)
      throw ValidationError("mlp_inner must equal 4 * model_dim, got " + std::to_string(mlp_inner));
    if (dense_dim < 1) throw ValidationError("dense_dim must be >= 1");
    if (classes < 2) throw ValidationError("classes must be >= 2");
    if (dropout_rate < 0.0 || dropout_rate >= 1.0)
      throw ValidationError("dropout_rate must be in [0,1)");
    if (l2_lambda < 0.0) throw ValidationError("l2_lambda must be non-negative");
  }

  int head_dim() const { return model_dim / heads; }

  double attention_scale() const {
    return 1.0 / std::sqrt(static_cast<double>(scale_mode == ScaleMode::model_dim ? model_dim
                                                                                  : head_dim()));
  }
};

struct ConvLayerParams {
  Param w;  // [kernel, Cin, Cout]
  Param b;  // [Cout]
};

struct AttentionHeadParams {
  Param wq, wk, wv;  // [d, d/C], bias-free
};

struct TransformerBlockParams {
  std::vector<AttentionHeadParams> heads;
  Param wo;  // [d, d]
  Param ln1_gain, ln1_bias;
  Param ln2_gain, ln2_bias;
  Param mlp_w1, mlp_b1;  // [d, 4d], [4d]
  Param mlp_w2, mlp_b2;  // [4d, d], [d]
};

/// All learned weights. When cfg.weights_shared, `blocks` holds a single
/// entry used for every transformer block iteration, i.e. one gradient
/// accumulator per shared weight.
struct ModelParams {
  ModelConfig cfg;
  std::vector<ConvLayerParams> conv;
  Param conv_norm_gain, conv_norm_bias;
  std::vector<TransformerBlockParams> blocks;
  Param dense_w, dense_b;
  Param out_w, out_b;

  std::vector<Param*> all() {
    std::vector<Param*> ps;
    for (ConvLayerParams& c : conv) {
      ps.push_back(&c.w);
      ps.push_back(&c.b);
    }
    ps.push_back(&conv_norm_gain);
    ps.push_back(&conv_norm_bias);
    for (TransformerBlockParams& b : blocks) {
      for (AttentionHeadParams& h : b.heads) {
        ps.push_back(&h.wq);
        ps.push_back(&h.wk);
        ps.push_back(&h.wv);
      }
      ps.push_back(&b.wo);
      ps.push_back(&b.ln1_gain);
      ps.push_back(&b.ln1_bias);
      ps.push_back(&b.ln2_gain);
      ps.push_back(&b.ln2_bias);
      ps.push_back(&b.mlp_w1);
      ps.push_back(&b.mlp_b1);
      ps.push_back(&b.mlp_w2);
      ps.push_back(&b.mlp_b2);
    }
    ps.push_back(&dense_w);
    ps.push_back(&dense_b);
    ps.push_back(&out_w);
    ps.push_back(&out_b);
    return ps;
  }

  std::vector<const Param*> all() const {
    auto ps = const_cast<ModelParams*>(this)->all();
    return {ps.begin(), ps.end()};
  }

  std::int64_t parameter_count() const {
    std::int64_t n = 0;
    for (const Param* p : all()) n += p->value.numel();
    return n;
  }

  void zero_grads() {
    for (Param* p : all()) p->zero_grad();
  }
};

/// Allocate and initialize all params: Glorot uniform for weight matrices,
/// zeros for biases and layer-norm biases, ones for layer-norm gains.
/// Deterministic under cfg.seed.
inline ModelParams build_model(const ModelConfig& cfg) {
  cfg.validate();
  Rng rng = Rng(cfg.seed).fork(1);
  ModelParams mp;
  mp.cfg = cfg;

  const int n_conv = static_cast<int>(cfg.dilations.size());
  for (int l = 0; l < n_conv; ++l) {
    const int cin = l == 0 ? cfg.input_features : cfg.conv_filters;
    const int cout = cfg.conv_filters;
    ConvLayerParams layer;
    layer.w = Param("conv" + std::to_string(l + 1) + ".w",
                    Tensor({cfg.kernel_size, cin, cout}));
    glorot_uniform(layer.w.value, cfg.kernel_size * cin, cfg.kernel_size * cout, rng);
    layer.b = Param("conv" + std::to_string(l + 1) + ".b", Tensor::zeros({cout}));
    mp.conv.push_back(std::move(layer));
  }
  mp.conv_norm_gain = Param("conv_norm.gain", Tensor::full({cfg.conv_filters}, 1.0));
  mp.conv_norm_bias = Param("conv_norm.bias", Tensor::zeros({cfg.conv_filters}));

  const int d = cfg.model_dim;
  const int dh = cfg.head_dim();
  const int block_sets = cfg.weights_shared ? 1 : cfg.blocks;
  for (int bset = 0; bset < block_sets; ++bset) {
    const std::string prefix = cfg.weights_shared ? "block." : "block" + std::to_string(bset + 1) + ".";
    TransformerBlockParams blk;
    for (int a = 0; a < cfg.heads; ++a) {
      const std::string hp = prefix + "head" + std::to_string(a + 1) + ".";
      AttentionHeadParams head;
      head.wq = Param(hp + "wq", Tensor({d, dh}));
      head.wk = Param(hp + "wk", Tensor({d, dh}));
      head.wv = Param(hp + "wv", Tensor({d, dh}));
      glorot_uniform(head.wq.value, d, dh, rng);
      glorot_uniform(head.wk.value, d, dh, rng);
      glorot_uniform(head.wv.value, d, dh, rng);
      blk.heads.push_back(std::move(head));
    }
    blk.wo = Param(prefix + "wo", Tensor({d, d}));
    glorot_uniform(blk.wo.value, d, d, rng);
    blk.ln1_gain = Param(prefix + "ln1.gain", Tensor::full({d}, 1.0));
    blk.ln1_bias = Param(prefix + "ln1.bias", Tensor::zeros({d}));
    blk.ln2_gain = Param(prefix + "ln2.gain", Tensor::full({d}, 1.0));
    blk.ln2_bias = Param(prefix + "ln2.bias", Tensor::zeros({d}));
    blk.mlp_w1 = Param(prefix + "mlp.w1", Tensor({d, cfg.mlp_inner}));
    glorot_uniform(blk.mlp_w1.value, d, cfg.mlp_inner, rng);
    blk.mlp_b1 = Param(prefix + "mlp.b1", Tensor::zeros({cfg.mlp_inner}));
    blk.mlp_w2 = Param(prefix + "mlp.w2", Tensor({cfg.mlp_inner, d}));
    glorot_uniform(blk.mlp_w2.value, cfg.mlp_inner, d, rng);
    blk.mlp_b2 = Param(prefix + "mlp.b2", Tensor::zeros({d}));
    mp.blocks.push_back(std::move(blk));
  }

  const int flat = cfg.window * d;
  mp.dense_w = Param("dense.w", Tensor({flat, cfg.dense_dim}));
  glorot_uniform(mp.dense_w.value, flat, cfg.dense_dim, rng);
  mp.dense_b = Param("dense.b", Tensor::zeros({cfg.dense_dim}));
  mp.out_w = Param("out.w", Tensor({cfg.dense_dim, cfg.classes}));
  glorot_uniform(mp.out_w.value, cfg.dense_dim, cfg.classes, rng);
  mp.out_b = Param("out.b", Tensor::zeros({cfg.classes}));
  return mp;
}

/// One-dimensional temporal encoding: column vector with entry i equal to
/// i/(N-1) (0 for N = 1). Strictly increasing for N >= 2.
inline Tensor temporal_encoding(int n) {
  if (n < 1) throw ValidationError("temporal_encoding: N must be >= 1");
  Tensor t({n, 1});
  for (int i = 0; i < n; ++i) t.data[i] = n == 1 ? 0.0 : static_cast<double>(i) / (n - 1);
  return t;
}

/// Trailing input positions that can influence one output position of the
/// conv stack: 1 + sum over layers of dilation * (kernel - 1).
inline int receptive_field(const ModelConfig& cfg) {
  int rf = 1;
  for (int d : cfg.dilations) rf += d * (cfg.kernel_size - 1);
  return rf;
}

struct BoundBlock {
  std::vector<AttentionHeadVars> heads;
  Var wo, ln1_gain, ln1_bias, ln2_gain, ln2_bias;
  Var mlp_w1, mlp_b1, mlp_w2, mlp_b2;
};

/// Params watched on a tape, plus the constant temporal-encoding node.
/// Build once per tape and reuse across the samples of a batch.
struct BoundModel {
  ModelConfig cfg;
  std::vector<std::array<Var, 2>> conv;  // {w, b}
  Var conv_norm_gain, conv_norm_bias;
  std::vector<BoundBlock> blocks;
  Var dense_w, dense_b, out_w, out_b;
  Var temporal;
};

namespace detail {

template <typename Watch>
BoundModel bind_model_impl(Tape& tape, const ModelConfig& cfg,
                           const std::vector<ConvLayerParams>& conv, const Param& cng,
                           const Param& cnb, const std::vector<TransformerBlockParams>& blocks,
                           const Param& dw, const Param& db, const Param& ow, const Param& ob,
                           Watch&& watch) {
  BoundModel bm;
  bm.cfg = cfg;
  for (const ConvLayerParams& c : conv) bm.conv.push_back({watch(c.w), watch(c.b)});
  bm.conv_norm_gain = watch(cng);
  bm.conv_norm_bias = watch(cnb);
  for (const TransformerBlockParams& b : blocks) {
    BoundBlock bb;
    for (const AttentionHeadParams& h : b.heads)
      bb.heads.push_back(AttentionHeadVars{watch(h.wq), watch(h.wk), watch(h.wv)});
    bb.wo = watch(b.wo);
    bb.ln1_gain = watch(b.ln1_gain);
    bb.ln1_bias = watch(b.ln1_bias);
    bb.ln2_gain = watch(b.ln2_gain);
    bb.ln2_bias = watch(b.ln2_bias);
    bb.mlp_w1 = watch(b.mlp_w1);
    bb.mlp_b1 = watch(b.mlp_b1);
    bb.mlp_w2 = watch(b.mlp_w2);
    bb.mlp_b2 = watch(b.mlp_b2);
    bm.blocks.push_back(std::move(bb));
  }
  bm.dense_w = watch(dw);
  bm.dense_b = watch(db);
  bm.out_w = watch(ow);
  bm.out_b = watch(ob);
  bm.temporal = tape.input(temporal_encoding(cfg.window));
  return bm;
}

}  // namespace detail

/// Trainable binding: gradients accumulate into the params.
inline BoundModel bind_model(Tape& tape, ModelParams& mp) {
  return detail::bind_model_impl(
      tape, mp.cfg, mp.conv, mp.conv_norm_gain, mp.conv_norm_bias, mp.blocks, mp.dense_w,
      mp.dense_b, mp.out_w, mp.out_b,
      [&tape](const Param& p) { return tape.watch(const_cast<Param&>(p)); });
}

/// Read-only binding for evaluation; backward is forbidden on the tape.
inline BoundModel bind_model_read_only(Tape& tape, const ModelParams& mp) {
  return detail::bind_model_impl(
      tape, mp.cfg, mp.conv, mp.conv_norm_gain, mp.conv_norm_bias, mp.blocks, mp.dense_w,
      mp.dense_b, mp.out_w, mp.out_b,
      [&tape](const Param& p) { return tape.watch_read_only(p); });
}

/// Per-block, per-head [N,N] attention matrices captured during a forward.
struct AttentionMaps {
  int blocks = 0;
  int heads = 0;
  std::vector<Tensor> maps;  // block-major order

  const Tensor& at(int block, int head) const { return maps[block * heads + head]; }
};

struct ModelOutput {
  Var probs;            // [1, classes]
  Var transformer_out;  // [window, d]
  AttentionMaps attention;
};

/// Full TransLOB pipeline on an existing tape:
/// [window,40] -> 5 causal convs with ReLU -> layer norm -> +temporal channel
/// [window,15] -> transformer blocks -> flatten (time-major) -> dense+ReLU ->
/// dropout (training only) -> affine -> softmax.
inline ModelOutput model_forward(Tape& tape, const BoundModel& m, const Tensor& x, bool training,
                                 Rng& dropout_rng) {
  const ModelConfig& cfg = m.cfg;
  require_shape(x, {cfg.window, cfg.input_features}, "model input");
  require_finite(x, "model input");

  Var h = tape.input(x);
  for (std::size_t l = 0; l < m.conv.size(); ++l)
    h = relu(conv1d_causal(h, m.conv[l][0], m.conv[l][1], cfg.dilations[l]));
  h = layer_norm(h, m.conv_norm_gain, m.conv_norm_bias);
  h = concat_cols({h, m.temporal});

  ModelOutput out;
  out.attention.blocks = cfg.blocks;
  out.attention.heads = cfg.heads;
  const double scale_factor = cfg.attention_scale();
  for (int b = 0; b < cfg.blocks; ++b) {
    const BoundBlock& blk = m.blocks[cfg.weights_shared ? 0 : b];
    MultiHeadResult mha = multi_head_attention(h, blk.heads, blk.wo, scale_factor);
    for (Tensor& w : mha.head_weights) out.attention.maps.push_back(std::move(w));
    Var z = layer_norm(add(mha.out, h), blk.ln1_gain, blk.ln1_bias);
    Var inner = relu(affine(z, blk.mlp_w1, blk.mlp_b1));
    Var mlp_out = affine(inner, blk.mlp_w2, blk.mlp_b2);
    h = layer_norm(add(mlp_out, z), blk.ln2_gain, blk.ln2_bias);
  }
  out.transformer_out = h;

  Var flat = reshape(h, {1, cfg.window * cfg.model_dim});
  Var dense = relu(affine(flat, m.dense_w, m.dense_b));
  dense = dropout(dense, cfg.dropout_rate, dropout_rng, training);
  Var logits = affine(dense, m.out_w, m.out_b);
  out.probs = softmax(logits);
  return out;
}

struct ForwardResult {
  Tensor probs;  // [classes]
  AttentionMaps maps;
};

/// Eval-mode forward (no dropout, deterministic, no writes to params).
inline ForwardResult forward(const ModelParams& mp, const Tensor& x) {
  Tape tape;
  BoundModel bm = bind_model_read_only(tape, mp);
  Rng unused(0);
  ModelOutput out = model_forward(tape, bm, x, /*training=*/false, unused);
  ForwardResult r;
  r.probs = Tensor({mp.cfg.classes}, out.probs.value().data);
  r.maps = std::move(out.attention);
  return r;
}

/// Eval-mode forward keeping only the attention matrices.
inline AttentionMaps extract_attention(const ModelParams& mp, const Tensor& x) {
  return forward(mp, x).maps;
}

}  // namespace translob
