// The AeroSense network: zero-padded set container with attention mask,
// weight-shared encoder MLP, masked multi-head self-attention with residual
// + layer norm, count-filtered pooling, and decoupled per-region decoders.
#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "aerosense/common.hpp"
#include "aerosense/features.hpp"
#include "aerosense/tensor.hpp"

namespace aerosense {

struct ModelConfig {
  int d_in = kStateDim;
  int n_max = 120;
  int d_model = 128;
  int heads = 4;
  std::vector<int> encoder_dims = {64, 128, 128};  // per-layer output widths; last == d_model
  int head_hidden = 64;
  double dropout_p = 0.1;
  int attention_blocks = 1;
  Pooling pooling = Pooling::Sum;
  bool masked_attention = true;
  bool decoupled_heads = true;
  double bn_momentum = 0.1;
  std::uint64_t init_seed = 1;

  int d_k() const { return d_model / heads; }

  void validate() const {
    if (d_in < 1) throw ConfigError("d_in must be >= 1");
    if (n_max < 1) throw ConfigError("n_max must be >= 1");
    if (d_model < 1 || heads < 1) throw ConfigError("d_model and heads must be >= 1");
    if (d_model % heads != 0) throw ConfigError("d_model must be divisible by heads");
    if (encoder_dims.empty()) throw ConfigError("encoder needs at least one layer");
    for (int w : encoder_dims)
      if (w < 1) throw ConfigError("encoder widths must be positive");
    if (encoder_dims.back() != d_model) throw ConfigError("last encoder width must equal d_model");
    if (head_hidden < 1) throw ConfigError("head_hidden must be >= 1");
    if (!(dropout_p >= 0.0 && dropout_p < 1.0)) throw ConfigError("dropout_p must be in [0, 1)");
    if (attention_blocks < 1) throw ConfigError("need at least one attention block");
  }
};

namespace detail {

inline Tensor xavier_uniform(std::mt19937_64& rng, int fan_in, int fan_out,
                             std::vector<int> shape) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> u(-limit, limit);
  Tensor t = Tensor::zeros(std::move(shape), true);
  for (double& v : t.values()) v = u(rng);
  return t;
}

}  // namespace detail

struct EncoderLayer {
  Tensor w, b, bn_gain, bn_bias;
  BatchNormState bn;
};

struct AttentionBlock {
  std::vector<Tensor> wq, wk, wv;  // one (d_model, d_k) matrix per head
  Tensor wo;                       // (heads * d_k, d_model)
  Tensor ln_gain, ln_bias;
};

struct DecoderHead {
  Tensor w1, b1, w2, b2;
};

struct ModelParams {
  ModelConfig cfg;
  std::vector<EncoderLayer> encoder;
  std::vector<AttentionBlock> blocks;
  DecoderHead head_ap, head_ar;  // used when decoupled
  DecoderHead head_shared;       // used when coupled (2-dim output)

  static ModelParams init(const ModelConfig& cfg) {
    cfg.validate();
    ModelParams p;
    p.cfg = cfg;
    std::mt19937_64 rng(cfg.init_seed);

    int prev = cfg.d_in;
    for (int width : cfg.encoder_dims) {
      EncoderLayer l;
      l.w = detail::xavier_uniform(rng, prev, width, {prev, width});
      l.b = Tensor::zeros({width}, true);
      l.bn_gain = Tensor::from({width}, std::vector<double>(static_cast<std::size_t>(width), 1.0), true);
      l.bn_bias = Tensor::zeros({width}, true);
      l.bn = BatchNormState::identity(width);
      p.encoder.push_back(std::move(l));
      prev = width;
    }

    const int dk = cfg.d_k();
    for (int bidx = 0; bidx < cfg.attention_blocks; ++bidx) {
      AttentionBlock blk;
      for (int h = 0; h < cfg.heads; ++h) {
        blk.wq.push_back(detail::xavier_uniform(rng, cfg.d_model, dk, {cfg.d_model, dk}));
        blk.wk.push_back(detail::xavier_uniform(rng, cfg.d_model, dk, {cfg.d_model, dk}));
        blk.wv.push_back(detail::xavier_uniform(rng, cfg.d_model, dk, {cfg.d_model, dk}));
      }
      blk.wo = detail::xavier_uniform(rng, cfg.heads * dk, cfg.d_model,
                                      {cfg.heads * dk, cfg.d_model});
      blk.ln_gain = Tensor::from(
          {cfg.d_model}, std::vector<double>(static_cast<std::size_t>(cfg.d_model), 1.0), true);
      blk.ln_bias = Tensor::zeros({cfg.d_model}, true);
      p.blocks.push_back(std::move(blk));
    }

    auto make_head = [&](int out_dim) {
      DecoderHead h;
      h.w1 = detail::xavier_uniform(rng, cfg.d_model, cfg.head_hidden,
                                    {cfg.d_model, cfg.head_hidden});
      h.b1 = Tensor::zeros({cfg.head_hidden}, true);
      h.w2 = detail::xavier_uniform(rng, cfg.head_hidden, out_dim, {cfg.head_hidden, out_dim});
      h.b2 = Tensor::zeros({out_dim}, true);
      return h;
    };
    if (cfg.decoupled_heads) {
      p.head_ap = make_head(1);
      p.head_ar = make_head(1);
    } else {
      p.head_shared = make_head(2);
    }
    return p;
  }

  std::vector<Tensor> trainable() {
    std::vector<Tensor> out;
    for (auto& l : encoder) {
      out.push_back(l.w);
      out.push_back(l.b);
      out.push_back(l.bn_gain);
      out.push_back(l.bn_bias);
    }
    for (auto& blk : blocks) {
      for (auto& t : blk.wq) out.push_back(t);
      for (auto& t : blk.wk) out.push_back(t);
      for (auto& t : blk.wv) out.push_back(t);
      out.push_back(blk.wo);
      out.push_back(blk.ln_gain);
      out.push_back(blk.ln_bias);
    }
    auto head = [&](DecoderHead& h) {
      if (!h.w1.defined()) return;
      out.push_back(h.w1);
      out.push_back(h.b1);
      out.push_back(h.w2);
      out.push_back(h.b2);
    };
    head(head_ap);
    head(head_ar);
    head(head_shared);
    return out;
  }

  ModelParams clone() const {
    auto copy_tensor = [](const Tensor& t) {
      if (!t.defined()) return Tensor();
      return Tensor::from(t.shape(), t.values(), t.requires_grad());
    };
    ModelParams c;
    c.cfg = cfg;
    for (const auto& l : encoder) {
      EncoderLayer n;
      n.w = copy_tensor(l.w);
      n.b = copy_tensor(l.b);
      n.bn_gain = copy_tensor(l.bn_gain);
      n.bn_bias = copy_tensor(l.bn_bias);
      n.bn = l.bn;
      c.encoder.push_back(std::move(n));
    }
    for (const auto& blk : blocks) {
      AttentionBlock n;
      for (const auto& t : blk.wq) n.wq.push_back(copy_tensor(t));
      for (const auto& t : blk.wk) n.wk.push_back(copy_tensor(t));
      for (const auto& t : blk.wv) n.wv.push_back(copy_tensor(t));
      n.wo = copy_tensor(blk.wo);
      n.ln_gain = copy_tensor(blk.ln_gain);
      n.ln_bias = copy_tensor(blk.ln_bias);
      c.blocks.push_back(std::move(n));
    }
    auto copy_head = [&](const DecoderHead& h) {
      DecoderHead n;
      n.w1 = copy_tensor(h.w1);
      n.b1 = copy_tensor(h.b1);
      n.w2 = copy_tensor(h.w2);
      n.b2 = copy_tensor(h.b2);
      return n;
    };
    c.head_ap = copy_head(head_ap);
    c.head_ar = copy_head(head_ar);
    c.head_shared = copy_head(head_shared);
    return c;
  }
};

// Fixed-size container X with additive mask and per-sample cardinalities.
struct PaddedBatch {
  int b = 0;
  int n_max = 0;
  int d_in = 0;
  std::vector<double> x;       // b * n_max * d_in, padding rows all-zero
  std::vector<int> counts;     // b
  std::vector<double> mask;    // b * n_max * n_max, 0 or -inf
  std::vector<double> labels;  // b * 2 (AP, AR)
};

inline PaddedBatch pad_batch(std::span<const SampleFeatures> samples, int n_max, int d_in) {
  PaddedBatch pb;
  pb.b = static_cast<int>(samples.size());
  pb.n_max = n_max;
  pb.d_in = d_in;
  pb.x.assign(static_cast<std::size_t>(pb.b) * n_max * d_in, 0.0);
  pb.mask.assign(static_cast<std::size_t>(pb.b) * n_max * n_max,
                 -std::numeric_limits<double>::infinity());
  pb.labels.assign(static_cast<std::size_t>(pb.b) * 2, 0.0);
  pb.counts.resize(static_cast<std::size_t>(pb.b));

  for (int s = 0; s < pb.b; ++s) {
    const SampleFeatures& f = samples[static_cast<std::size_t>(s)];
    if (f.count > n_max) {
      throw DataError("OVERFLOW: snapshot cardinality " + std::to_string(f.count) +
                      " exceeds N_max " + std::to_string(n_max));
    }
    if (f.x.size() != static_cast<std::size_t>(f.count) * static_cast<std::size_t>(d_in))
      throw DataError("sample feature width does not match d_in");
    pb.counts[static_cast<std::size_t>(s)] = f.count;
    std::copy(f.x.begin(), f.x.end(),
              pb.x.begin() + static_cast<std::size_t>(s) * n_max * d_in);
    for (int i = 0; i < f.count; ++i)
      for (int j = 0; j < f.count; ++j)
        pb.mask[(static_cast<std::size_t>(s) * n_max + static_cast<std::size_t>(i)) * n_max +
                static_cast<std::size_t>(j)] = 0.0;
    pb.labels[static_cast<std::size_t>(s) * 2] = f.y_ap;
    pb.labels[static_cast<std::size_t>(s) * 2 + 1] = f.y_ar;
  }
  return pb;
}

// Weight-shared encoder: Dropout(sigma(BN(W h + b))) per layer, applied
// row-wise to the flattened (rows, d_in) states. `row_valid` flags which rows
// feed the batch-norm statistics.
inline Tensor encode(Tape* tape, ModelParams& mp, const Tensor& x, bool train,
                     const std::vector<std::uint8_t>& row_valid, DropoutKey dkey = {}) {
  Tensor h = x;
  std::int64_t layer_counter = 0;
  for (auto& layer : mp.encoder) {
    Tensor a = add_rowvec(tape, matmul(tape, h, layer.w), layer.b);
    Tensor n = batch_norm(tape, a, layer.bn_gain, layer.bn_bias, layer.bn, train, &row_valid,
                          /*update_running=*/train, mp.cfg.bn_momentum);
    Tensor s = sigmoid(tape, n);
    DropoutKey k = dkey;
    k.layer = layer_counter++;
    h = dropout(tape, s, mp.cfg.dropout_p, k, train);
  }
  return h;
}

// One masked multi-head self-attention block with residual connection and
// layer normalization. `e2` is (B*n, d_model); `mask` is (B, n, n) additive.
inline Tensor masked_attention(Tape* tape, const ModelConfig& cfg, AttentionBlock& blk,
                               const Tensor& e2, const Tensor& mask, int b, int n,
                               std::vector<Tensor>* attention_out = nullptr) {
  const int dk = cfg.d_k();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dk));
  std::vector<Tensor> heads_out;
  heads_out.reserve(static_cast<std::size_t>(cfg.heads));
  for (int hd = 0; hd < cfg.heads; ++hd) {
    Tensor q = reshape(tape, matmul(tape, e2, blk.wq[static_cast<std::size_t>(hd)]), {b, n, dk});
    Tensor kk = reshape(tape, matmul(tape, e2, blk.wk[static_cast<std::size_t>(hd)]), {b, n, dk});
    Tensor v = reshape(tape, matmul(tape, e2, blk.wv[static_cast<std::size_t>(hd)]), {b, n, dk});
    Tensor logits = mul_scalar(tape, matmul_nt(tape, q, kk), scale);
    Tensor attn = masked_softmax(tape, logits, mask);
    if (attention_out) attention_out->push_back(attn);
    heads_out.push_back(matmul(tape, attn, v));
  }
  Tensor cat = concat_cols(tape, heads_out);  // (B, n, H*dk)
  Tensor cat2 = reshape(tape, cat, {b * n, cfg.heads * dk});
  Tensor proj = matmul(tape, cat2, blk.wo);
  Tensor res = add(tape, e2, proj);
  return layer_norm(tape, res, blk.ln_gain, blk.ln_bias);
}

// Decoupled (or shared-trunk) decoders mapping the pooled context to the two
// regional flow estimates; output columns are (AP, AR).
inline Tensor decode_heads(Tape* tape, ModelParams& mp, const Tensor& z) {
  auto run_head = [&](DecoderHead& hd) {
    Tensor hidden = sigmoid(tape, add_rowvec(tape, matmul(tape, z, hd.w1), hd.b1));
    return add_rowvec(tape, matmul(tape, hidden, hd.w2), hd.b2);
  };
  if (mp.cfg.decoupled_heads) {
    Tensor y_ap = run_head(mp.head_ap);
    Tensor y_ar = run_head(mp.head_ar);
    return concat_cols(tape, {y_ap, y_ar});
  }
  return run_head(mp.head_shared);
}

struct ForwardOutput {
  Tensor pred;                    // (B, 2), columns (AP, AR)
  std::vector<Tensor> attention;  // per block, per head: (B, n_eff, n_eff)
  int n_eff = 0;
};

// Full forward pass. With masked attention the computation runs over the row
// prefix [0, max(counts)); by the mask/pooling/BN contracts the remaining
// padding rows cannot influence any output or gradient, so this is exact.
// The mask-removal ablation intentionally lets padding rows participate, so
// it computes over the full container.
inline ForwardOutput forward(Tape* tape, ModelParams& mp, const PaddedBatch& pb, bool train,
                             DropoutKey dkey = {}) {
  const ModelConfig& cfg = mp.cfg;
  if (pb.d_in != cfg.d_in) throw DataError("batch d_in does not match model");
  if (pb.b < 1) throw DataError("empty batch");
  for (int c : pb.counts)
    if (c > pb.n_max) throw DataError("batch counts exceed container");

  const int b = pb.b;
  int n_eff = pb.n_max;
  if (cfg.masked_attention) {
    n_eff = 0;
    for (int c : pb.counts) n_eff = std::max(n_eff, c);
  }

  ForwardOutput out;
  Tensor z;
  if (n_eff == 0) {
    z = Tensor::zeros({b, cfg.d_model});
    out.n_eff = 0;
  } else {
    out.n_eff = n_eff;
    // slice the container prefix into the working tensors
    Tensor x = Tensor::zeros({b * n_eff, cfg.d_in});
    std::vector<std::uint8_t> row_valid(static_cast<std::size_t>(b) * n_eff, 0);
    for (int s = 0; s < b; ++s) {
      for (int i = 0; i < n_eff; ++i) {
        std::copy_n(pb.x.begin() + (static_cast<std::size_t>(s) * pb.n_max + i) * pb.d_in, cfg.d_in,
                    x.values().begin() + (static_cast<std::size_t>(s) * n_eff + i) * cfg.d_in);
        row_valid[static_cast<std::size_t>(s) * n_eff + i] =
            i < pb.counts[static_cast<std::size_t>(s)] ? 1 : 0;
      }
    }
    Tensor mask = Tensor::zeros({b, n_eff, n_eff});
    if (cfg.masked_attention) {
      for (int s = 0; s < b; ++s)
        for (int i = 0; i < n_eff; ++i)
          for (int j = 0; j < n_eff; ++j)
            mask.values()[(static_cast<std::size_t>(s) * n_eff + i) * n_eff + j] =
                pb.mask[(static_cast<std::size_t>(s) * pb.n_max + i) * pb.n_max + j];
    }

    Tensor e2 = encode(tape, mp, x, train, row_valid, dkey);
    for (auto& blk : mp.blocks)
      e2 = masked_attention(tape, cfg, blk, e2, mask, b, n_eff, &out.attention);

    Tensor e3 = reshape(tape, e2, {b, n_eff, cfg.d_model});
    z = pool_rows(tape, e3, pb.counts, cfg.pooling);
  }

  out.pred = decode_heads(tape, mp, z);
  return out;
}

// Multi-task objective: mean over the batch of the summed per-region Huber
// losses.
inline Tensor huber_loss(Tape* tape, const Tensor& pred, const PaddedBatch& pb, double delta) {
  Tensor labels = Tensor::from({pb.b, 2}, pb.labels);
  Tensor diff = sub(tape, pred, labels);
  Tensor h = huber(tape, diff, delta);
  return mul_scalar(tape, sum_all(tape, h), 1.0 / static_cast<double>(pb.b));
}

struct Prediction {
  double y_ap_hat = 0.0;
  double y_ar_hat = 0.0;
};

inline Prediction predict_one(ModelParams& mp, const SampleFeatures& f) {
  PaddedBatch pb = pad_batch(std::span<const SampleFeatures>(&f, 1), mp.cfg.n_max, mp.cfg.d_in);
  ForwardOutput fo = forward(nullptr, mp, pb, /*train=*/false);
  return {fo.pred.values()[0], fo.pred.values()[1]};
}

}  // namespace aerosense
