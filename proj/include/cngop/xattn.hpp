// cngop/xattn.hpp

// Copyright 2026  The cngop Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

// Sentence-level scorer that combines per-phoneme and per-frame features with
// cross-attention instead of a phoneme time alignment.
//
//   phonemes --proj--> +sinusoid --> [pre-norm cross-attention layer] x D
//   frames   --proj--------------------^ (keys/values, masked)
//   --> [pre-norm self-attention encoder layer] x E --> layer norm
//   --> single-head attention pooling --> ReLU layer --> softmax over classes
//
// Positional encoding is added on the phoneme side only, so a phoneme's
// cross-attention output depends on its allowed frames as an unordered set.

#pragma once

#include <Eigen/Dense>
#include <json.hpp>

#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "cngop/common.hpp"

namespace cngop {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::RowVectorXd;

struct ModelConfig {
  int d_model = 24;
  int n_heads = 8;
  int n_decoder_layers = 1;
  int n_encoder_layers = 2;
  int n_classes = 11;
  int phoneme_feat_dim = 1;
  int frame_feat_dim = 1;
  uint64_t seed = 0;

  int ffn_dim() const { return 4 * d_model; }

  void Validate() const {
    if (d_model <= 0 || n_heads <= 0 || d_model % n_heads != 0)
      throw Error("model config: d_model must be a positive multiple of n_heads");
    if (n_decoder_layers < 1) throw Error("model config: need at least one decoder layer");
    if (n_encoder_layers < 0) throw Error("model config: negative encoder layer count");
    if (n_classes < 2) throw Error("model config: n_classes must be at least 2");
    if (phoneme_feat_dim <= 0 || frame_feat_dim <= 0)
      throw Error("model config: feature dimensions must be positive");
  }
};

inline void to_json(nlohmann::json &j, const ModelConfig &c) {
  j = {{"d_model", c.d_model},
       {"n_heads", c.n_heads},
       {"n_decoder_layers", c.n_decoder_layers},
       {"n_encoder_layers", c.n_encoder_layers},
       {"n_classes", c.n_classes},
       {"phoneme_feat_dim", c.phoneme_feat_dim},
       {"frame_feat_dim", c.frame_feat_dim},
       {"seed", c.seed}};
}

inline void from_json(const nlohmann::json &j, ModelConfig &c) {
  ModelConfig d;
  c.d_model = j.value("d_model", d.d_model);
  c.n_heads = j.value("n_heads", d.n_heads);
  c.n_decoder_layers = j.value("n_decoder_layers", d.n_decoder_layers);
  c.n_encoder_layers = j.value("n_encoder_layers", d.n_encoder_layers);
  c.n_classes = j.value("n_classes", d.n_classes);
  c.phoneme_feat_dim = j.value("phoneme_feat_dim", d.phoneme_feat_dim);
  c.frame_feat_dim = j.value("frame_feat_dim", d.frame_feat_dim);
  c.seed = j.value("seed", d.seed);
}

/// All model parameters in one flat buffer with a named-tensor layout.
class Weights {
 public:
  enum class Kind { kWeight, kBias, kGain };

  struct Tensor {
    std::string name;
    int rows;
    int cols;
    std::size_t offset;
    Kind kind;
  };

  explicit Weights(const ModelConfig &config) : config_(config) {
    config_.Validate();
    const int d = config_.d_model;
    AddLinear("phone_proj", config_.phoneme_feat_dim, d);
    AddLinear("frame_proj", config_.frame_feat_dim, d);
    for (int l = 0; l < config_.n_decoder_layers; ++l)
      AddBlock("dec" + std::to_string(l));
    for (int l = 0; l < config_.n_encoder_layers; ++l)
      AddBlock("enc" + std::to_string(l));
    AddNorm("final_ln");
    Add("pool.w", d, 1, Kind::kWeight);
    Add("pool.b", 1, 1, Kind::kBias);
    AddLinear("head.l1", d, d);
    AddLinear("head.l2", d, config_.n_classes);
    data_.assign(size_, 0.0);
    for (const Tensor &t : tensors_)
      if (t.kind == Kind::kGain)
        std::fill_n(data_.begin() + static_cast<std::ptrdiff_t>(t.offset),
                    t.rows * t.cols, 1.0);
  }

  const ModelConfig &config() const { return config_; }
  const std::vector<Tensor> &tensors() const { return tensors_; }
  std::span<double> params() { return data_; }
  std::span<const double> params() const { return data_; }

  Eigen::Map<const Matrix> Get(const std::string &name) const {
    const Tensor &t = Find(name);
    return {data_.data() + t.offset, t.rows, t.cols};
  }

  Eigen::Map<Matrix> Mutable(const std::string &name) {
    const Tensor &t = Find(name);
    return {data_.data() + t.offset, t.rows, t.cols};
  }

  const Tensor &Find(const std::string &name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw Error("no weight tensor named '" + name + "'");
    return tensors_[it->second];
  }

 private:
  void Add(const std::string &name, int rows, int cols, Kind kind) {
    index_[name] = tensors_.size();
    tensors_.push_back({name, rows, cols, size_, kind});
    size_ += static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols);
  }
  void AddLinear(const std::string &p, int in, int out) {
    Add(p + ".W", in, out, Kind::kWeight);
    Add(p + ".b", 1, out, Kind::kBias);
  }
  void AddNorm(const std::string &p) {
    Add(p + ".g", 1, config_.d_model, Kind::kGain);
    Add(p + ".b", 1, config_.d_model, Kind::kBias);
  }
  void AddBlock(const std::string &p) {
    const int d = config_.d_model;
    AddNorm(p + ".ln_att");
    AddLinear(p + ".attn.q", d, d);
    AddLinear(p + ".attn.k", d, d);
    AddLinear(p + ".attn.v", d, d);
    AddLinear(p + ".attn.o", d, d);
    AddNorm(p + ".ln_ff");
    AddLinear(p + ".ff.l1", d, config_.ffn_dim());
    AddLinear(p + ".ff.l2", config_.ffn_dim(), d);
  }

  ModelConfig config_;
  std::vector<Tensor> tensors_;
  std::map<std::string, std::size_t> index_;
  std::vector<double> data_;
  std::size_t size_ = 0;
};

/// Glorot-uniform bound sqrt(6 / (fan_in + fan_out)).
inline double XavierBound(int fan_in, int fan_out) {
  return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
}

/// Deterministic in config.seed: weight matrices Glorot-uniform, biases 0,
/// layer-norm gains 1.
inline Weights InitWeights(const ModelConfig &config) {
  Weights w(config);
  std::mt19937_64 rng(config.seed);
  for (const Weights::Tensor &t : w.tensors()) {
    if (t.kind != Weights::Kind::kWeight) continue;
    std::uniform_real_distribution<double> dist(-XavierBound(t.rows, t.cols),
                                                XavierBound(t.rows, t.cols));
    for (double &v : w.Mutable(t.name).reshaped()) v = dist(rng);
  }
  return w;
}

inline nlohmann::json ToJson(const Weights &w) {
  nlohmann::json tensors = nlohmann::json::array();
  for (const Weights::Tensor &t : w.tensors()) {
    auto m = w.Get(t.name);
    std::vector<double> data(m.data(), m.data() + m.size());
    tensors.push_back({{"name", t.name}, {"shape", {t.rows, t.cols}}, {"data", data}});
  }
  return {{"config", w.config()}, {"tensors", tensors}};
}

inline Weights WeightsFromJson(const nlohmann::json &j) {
  try {
    Weights w(j.at("config").get<ModelConfig>());
    std::size_t seen = 0;
    for (const auto &jt : j.at("tensors")) {
      const std::string name = jt.at("name").get<std::string>();
      auto m = w.Mutable(name);
      auto shape = jt.at("shape").get<std::vector<int>>();
      auto data = jt.at("data").get<std::vector<double>>();
      if (shape.size() != 2 || shape[0] != m.rows() || shape[1] != m.cols() ||
          data.size() != static_cast<std::size_t>(m.size()))
        throw Error("weight tensor '" + name + "' has the wrong shape");
      std::copy(data.begin(), data.end(), m.data());
      ++seen;
    }
    if (seen != w.tensors().size()) throw Error("weights file is missing tensors");
    return w;
  } catch (const nlohmann::json::exception &e) {
    throw Error(std::string("malformed weights file: ") + e.what());
  }
}

/// n_phonemes x n_frames; true where a phoneme may attend to a frame.
struct AttentionMask {
  int rows = 0;
  int cols = 0;
  std::vector<unsigned char> allowed;

  bool Allowed(int i, int t) const { return allowed[static_cast<std::size_t>(i) * cols + t] != 0; }

  static AttentionMask Full(int rows, int cols) {
    return {rows, cols, std::vector<unsigned char>(static_cast<std::size_t>(rows) * cols, 1)};
  }
};

enum class MaskMode { kRestricted, kFull };

inline MaskMode ParseMaskMode(const std::string &name) {
  if (name == "restricted") return MaskMode::kRestricted;
  if (name == "full") return MaskMode::kFull;
  throw Error("unknown mask mode: " + name);
}

using FrameSpan = std::optional<std::pair<int64_t, int64_t>>;

/// Restricted: phoneme i attends to frames t_s..t_e (inclusive) of its word.
/// Words without a span leave their phonemes unrestricted.
inline AttentionMask BuildWordMask(const std::vector<int> &phoneme_word_index,
                                   const std::vector<FrameSpan> &word_spans,
                                   int num_frames, MaskMode mode) {
  if (num_frames <= 0) throw Error("attention mask needs at least one frame");
  const int n = static_cast<int>(phoneme_word_index.size());
  AttentionMask mask = AttentionMask::Full(n, num_frames);
  if (mode == MaskMode::kFull) return mask;
  for (int i = 0; i < n; ++i) {
    const int w = phoneme_word_index[i];
    if (w < 0 || w >= static_cast<int>(word_spans.size()))
      throw Error("phoneme " + std::to_string(i) + " maps to no word span");
    const FrameSpan &span = word_spans[w];
    if (!span) continue;
    if (span->first < 0 || span->second < span->first || span->second >= num_frames)
      throw Error("word span [" + std::to_string(span->first) + ", " +
                  std::to_string(span->second) + "] outside [0, " +
                  std::to_string(num_frames) + ")");
    for (int t = 0; t < num_frames; ++t)
      mask.allowed[static_cast<std::size_t>(i) * num_frames + t] =
          t >= span->first && t <= span->second;
  }
  return mask;
}

struct ScoreDistribution {
  std::vector<double> probs;
};

struct ForwardTrace {
  /// [decoder layer][head], each n x T.
  std::vector<std::vector<Matrix>> cross_attention;
  /// Phoneme states after the cross-attention layers, before the encoder.
  Matrix decoder_output;
  Matrix encoder_output;
  Eigen::VectorXd pool_weights;
};

namespace internal {

inline Matrix Linear(const Weights &w, const std::string &p, const Matrix &x) {
  Matrix y = x * w.Get(p + ".W");
  y.rowwise() += w.Get(p + ".b").row(0);
  return y;
}

inline Matrix LayerNorm(const Weights &w, const std::string &p, const Matrix &x) {
  constexpr double kEps = 1e-5;
  auto g = w.Get(p + ".g").row(0);
  auto b = w.Get(p + ".b").row(0);
  Matrix y(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double mean = x.row(i).mean();
    const double var = (x.row(i).array() - mean).square().mean();
    y.row(i) = ((x.row(i).array() - mean) / std::sqrt(var + kEps)).matrix();
    y.row(i) = y.row(i).cwiseProduct(g) + b;
  }
  return y;
}

/// Row-wise softmax over allowed columns; disallowed columns get exactly 0.
inline void MaskedSoftmaxRows(Matrix *scores, const AttentionMask *mask) {
  for (Eigen::Index i = 0; i < scores->rows(); ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (Eigen::Index t = 0; t < scores->cols(); ++t)
      if (!mask || mask->Allowed(static_cast<int>(i), static_cast<int>(t)))
        mx = std::max(mx, (*scores)(i, t));
    if (!std::isfinite(mx)) throw Error("attention row " + std::to_string(i) + " has no allowed frame");
    double sum = 0.0;
    for (Eigen::Index t = 0; t < scores->cols(); ++t) {
      double &s = (*scores)(i, t);
      s = (!mask || mask->Allowed(static_cast<int>(i), static_cast<int>(t))) ? std::exp(s - mx) : 0.0;
      sum += s;
    }
    scores->row(i) /= sum;
  }
}

inline Matrix MultiHeadAttention(const Weights &w, const std::string &p,
                                 const Matrix &queries, const Matrix &memory,
                                 const AttentionMask *mask, std::vector<Matrix> *weights_out) {
  const int heads = w.config().n_heads;
  const int dh = w.config().d_model / heads;
  const Matrix q = Linear(w, p + ".q", queries);
  const Matrix k = Linear(w, p + ".k", memory);
  const Matrix v = Linear(w, p + ".v", memory);
  Matrix concat(queries.rows(), w.config().d_model);
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  for (int h = 0; h < heads; ++h) {
    Matrix scores = q.middleCols(h * dh, dh) * k.middleCols(h * dh, dh).transpose() * scale;
    MaskedSoftmaxRows(&scores, mask);
    concat.middleCols(h * dh, dh) = scores * v.middleCols(h * dh, dh);
    if (weights_out) weights_out->push_back(std::move(scores));
  }
  return Linear(w, p + ".o", concat);
}

inline Matrix FeedForward(const Weights &w, const std::string &p, const Matrix &x) {
  return Linear(w, p + ".l2", Linear(w, p + ".l1", x).cwiseMax(0.0));
}

/// Pre-norm block: x + Attn(LN(x), memory); then + FFN(LN(.)). With no
/// memory it is self-attention.
inline Matrix Block(const Weights &w, const std::string &p, const Matrix &x,
                    const Matrix *memory, const AttentionMask *mask,
                    std::vector<Matrix> *weights_out) {
  const Matrix h = LayerNorm(w, p + ".ln_att", x);
  Matrix y = x + MultiHeadAttention(w, p + ".attn", h, memory ? *memory : h, mask, weights_out);
  return y + FeedForward(w, p + ".ff", LayerNorm(w, p + ".ln_ff", y));
}

inline std::vector<double> Softmax(const Eigen::VectorXd &z) {
  const double mx = z.maxCoeff();
  std::vector<double> out(static_cast<std::size_t>(z.size()));
  double sum = 0.0;
  for (Eigen::Index k = 0; k < z.size(); ++k) sum += (out[k] = std::exp(z(k) - mx));
  for (double &v : out) v /= sum;
  return out;
}

}  // namespace internal

/// Sinusoidal encoding, n x d.
inline Matrix PositionalEncoding(Eigen::Index n, int d) {
  Matrix pe(n, d);
  for (Eigen::Index pos = 0; pos < n; ++pos)
    for (int k = 0; k < d; ++k) {
      const double angle =
          static_cast<double>(pos) / std::pow(10000.0, static_cast<double>(2 * (k / 2)) / d);
      pe(pos, k) = k % 2 == 0 ? std::sin(angle) : std::cos(angle);
    }
  return pe;
}

inline ScoreDistribution Forward(const Weights &w, const Matrix &phoneme_feats,
                                 const Matrix &frame_feats, const AttentionMask &mask,
                                 ForwardTrace *trace = nullptr) {
  const ModelConfig &c = w.config();
  if (phoneme_feats.rows() == 0 || frame_feats.rows() == 0)
    throw Error("forward: empty phoneme or frame sequence");
  if (phoneme_feats.cols() != c.phoneme_feat_dim || frame_feats.cols() != c.frame_feat_dim)
    throw Error("forward: feature dimension does not match the model config");
  if (mask.rows != phoneme_feats.rows() || mask.cols != frame_feats.rows())
    throw Error("forward: mask shape does not match the inputs");

  Matrix x = internal::Linear(w, "phone_proj", phoneme_feats) +
             PositionalEncoding(phoneme_feats.rows(), c.d_model);
  const Matrix memory = internal::Linear(w, "frame_proj", frame_feats);
  for (int l = 0; l < c.n_decoder_layers; ++l) {
    std::vector<Matrix> attn;
    x = internal::Block(w, "dec" + std::to_string(l), x, &memory, &mask,
                        trace ? &attn : nullptr);
    if (trace) trace->cross_attention.push_back(std::move(attn));
  }
  if (trace) trace->decoder_output = x;
  for (int l = 0; l < c.n_encoder_layers; ++l)
    x = internal::Block(w, "enc" + std::to_string(l), x, nullptr, nullptr, nullptr);
  x = internal::LayerNorm(w, "final_ln", x);
  if (trace) trace->encoder_output = x;

  Eigen::VectorXd scores = x * w.Get("pool.w").col(0);
  scores.array() += w.Get("pool.b")(0, 0);
  const std::vector<double> alpha = internal::Softmax(scores);
  RowVector pooled = RowVector::Zero(c.d_model);
  for (Eigen::Index i = 0; i < x.rows(); ++i) pooled += alpha[i] * x.row(i);
  if (trace) trace->pool_weights = Eigen::Map<const Eigen::VectorXd>(alpha.data(), x.rows());

  Matrix hidden = internal::Linear(w, "head.l1", Matrix(pooled)).cwiseMax(0.0);
  Matrix logits = internal::Linear(w, "head.l2", hidden);
  return {internal::Softmax(logits.row(0).transpose())};
}

/// Mean of the class values under the distribution.
inline double ExpectedScore(const ScoreDistribution &dist,
                            const std::vector<double> &class_values) {
  if (class_values.size() != dist.probs.size())
    throw Error("expected score: class value count does not match the distribution");
  double s = 0.0;
  for (std::size_t k = 0; k < class_values.size(); ++k) s += dist.probs[k] * class_values[k];
  return s;
}

struct ScoreMetrics {
  std::optional<double> pcc;  // empty when either rounded vector is constant
  double mse = 0.0;
};

/// Rounds both vectors half away from zero, then Pearson correlation and
/// mean squared error.
inline ScoreMetrics RoundedPccMse(const std::vector<double> &hyp,
                                  const std::vector<double> &ref) {
  if (hyp.size() != ref.size() || hyp.size() < 2)
    throw Error("metrics need two equal-length vectors of at least 2 scores");
  const std::size_t n = hyp.size();
  std::vector<double> h(n), r(n);
  for (std::size_t i = 0; i < n; ++i) {
    h[i] = std::round(hyp[i]);
    r[i] = std::round(ref[i]);
  }
  ScoreMetrics m;
  double mh = 0, mr = 0;
  for (std::size_t i = 0; i < n; ++i) {
    m.mse += (h[i] - r[i]) * (h[i] - r[i]);
    mh += h[i];
    mr += r[i];
  }
  m.mse /= static_cast<double>(n);
  mh /= static_cast<double>(n);
  mr /= static_cast<double>(n);
  double cov = 0, vh = 0, vr = 0;
  for (std::size_t i = 0; i < n; ++i) {
    cov += (h[i] - mh) * (r[i] - mr);
    vh += (h[i] - mh) * (h[i] - mh);
    vr += (r[i] - mr) * (r[i] - mr);
  }
  if (vh > 0 && vr > 0) m.pcc = cov / std::sqrt(vh * vr);
  return m;
}

/// Central differences (L(w + eps) - L(w - eps)) / 2 eps per parameter.
/// Parameters are restored before returning.
inline std::vector<double> NumericalGradient(
    const std::function<double(std::span<const double>)> &loss, std::span<double> params,
    double epsilon = 1e-5) {
  auto eval = [&]() {
    const double v = loss(params);
    if (!std::isfinite(v)) throw Error("numerical gradient: loss is not finite");
    return v;
  };
  eval();
  std::vector<double> grad(params.size());
  for (std::size_t k = 0; k < params.size(); ++k) {
    const double saved = params[k];
    params[k] = saved + epsilon;
    const double up = eval();
    params[k] = saved - epsilon;
    const double down = eval();
    params[k] = saved;
    grad[k] = (up - down) / (2.0 * epsilon);
  }
  return grad;
}

struct TrainingExample {
  Matrix phoneme_feats;
  Matrix frame_feats;
  AttentionMask mask;
  int target = 0;
};

inline double CrossEntropy(const ScoreDistribution &dist, int target) {
  return -std::log(std::max(dist.probs.at(static_cast<std::size_t>(target)), 1e-300));
}

inline double MeanCrossEntropy(const Weights &w, const std::vector<TrainingExample> &data) {
  double total = 0.0;
  for (const TrainingExample &ex : data)
    total += CrossEntropy(Forward(w, ex.phoneme_feats, ex.frame_feats, ex.mask), ex.target);
  return total / static_cast<double>(data.size());
}

/// Plain gradient descent on mean cross-entropy with numerical gradients.
/// Returns the loss before every step plus the final loss.
inline std::vector<double> TrainNumerical(Weights *w, const std::vector<TrainingExample> &data,
                                          int steps, double learning_rate) {
  std::vector<double> history;
  Weights probe = *w;
  auto loss = [&](std::span<const double> params) {
    std::copy(params.begin(), params.end(), probe.params().begin());
    return MeanCrossEntropy(probe, data);
  };
  for (int s = 0; s < steps; ++s) {
    history.push_back(MeanCrossEntropy(*w, data));
    const std::vector<double> grad = NumericalGradient(loss, w->params());
    std::span<double> p = w->params();
    for (std::size_t k = 0; k < p.size(); ++k) p[k] -= learning_rate * grad[k];
  }
  history.push_back(MeanCrossEntropy(*w, data));
  return history;
}

}  // namespace cngop
