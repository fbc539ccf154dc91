#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "qualiteacher/image.hpp"
#include "qualiteacher/rng.hpp"
#include "qualiteacher/tensor.hpp"

namespace qualiteacher {

// ---------------------------------------------------------------------------
// Architecture and parameters
//
// Three-level encoder-decoder, widths 8 -> 16 -> 32 -> 16 -> 8, 3x3 kernels,
// SiLU activations, average-pool down / nearest up with additive skips. The
// score embedding (frequency encoding -> MLP) is mapped through the injection
// matrix W_inj and added at the bottleneck. The head predicts per-channel
// (r_up, r_down) and the output is
//     out = I * (1 - P - N) + P,   P = q(r_up), N = q(r_down), q(r) = r^2 / (1 + r^2)
// which stays in [0,1] and equals I exactly when the head is zero.

struct Architecture {
  int in_channels = 1;
  int freq_bands = 6;
  int embed_hidden = 32;

  static constexpr std::array<int, 3> kWidths = {8, 16, 32};
  static constexpr int bottleneck() { return kWidths[2]; }

  std::string describe() const {
    return "qualiteacher-restorer/1 in=" + std::to_string(in_channels) + " widths=8,16,32 bands=" +
           std::to_string(freq_bands) + " hidden=" + std::to_string(embed_hidden);
  }

  /// FNV-1a over describe(); stored in checkpoints to reject mismatched loads.
  std::uint64_t digest() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : describe()) {
      h ^= ch;
      h *= 0x100000001b3ULL;
    }
    return h;
  }

  friend bool operator==(const Architecture&, const Architecture&) = default;
};

enum ParamIndex : std::size_t {
  kEnc1W, kEnc1B, kEnc2W, kEnc2B, kEnc3W, kEnc3B,
  kDec2W, kDec2B, kDec1W, kDec1B, kHeadW, kHeadB,
  kEmbW1, kEmbB1, kEmbW2, kEmbB2, kInjectW,
  kParamCount
};

/// Parameters touched by the injection regularizer.
inline constexpr std::array<std::size_t, 1> kInjectionParams = {kInjectW};

struct ParamTensor {
  std::string name;
  std::vector<int> dims;
  std::vector<double> values;

  friend bool operator==(const ParamTensor&, const ParamTensor&) = default;
};

using ParamGrads = std::vector<std::vector<double>>;

class ModelParams {
public:
  ModelParams() = default;

  /// Zero-valued parameters with the architecture's layout.
  explicit ModelParams(const Architecture& arch) : arch_(arch) {
    const auto [w1, w2, w3] = Architecture::kWidths;
    const int cin = arch.in_channels, bands2 = 2 * arch.freq_bands, hid = arch.embed_hidden, cb = Architecture::bottleneck();
    tensors_.resize(kParamCount);
    auto def = [&](ParamIndex i, const char* name, std::vector<int> dims) {
      std::size_t n = 1;
      for (int d : dims) n *= static_cast<std::size_t>(d);
      tensors_[i] = ParamTensor{name, std::move(dims), std::vector<double>(n, 0.0)};
    };
    def(kEnc1W, "enc1.weight", {w1, cin, 3, 3});
    def(kEnc1B, "enc1.bias", {w1});
    def(kEnc2W, "enc2.weight", {w2, w1, 3, 3});
    def(kEnc2B, "enc2.bias", {w2});
    def(kEnc3W, "enc3.weight", {w3, w2, 3, 3});
    def(kEnc3B, "enc3.bias", {w3});
    def(kDec2W, "dec2.weight", {w2, w3, 3, 3});
    def(kDec2B, "dec2.bias", {w2});
    def(kDec1W, "dec1.weight", {w1, w2, 3, 3});
    def(kDec1B, "dec1.bias", {w1});
    def(kHeadW, "head.weight", {2 * cin, w1, 3, 3});
    def(kHeadB, "head.bias", {2 * cin});
    def(kEmbW1, "embed.fc1.weight", {hid, bands2});
    def(kEmbB1, "embed.fc1.bias", {hid});
    def(kEmbW2, "embed.fc2.weight", {cb, hid});
    def(kEmbB2, "embed.fc2.bias", {cb});
    def(kInjectW, "inject.weight", {cb, cb});
  }

  /// Fan-in scaled uniform weights U(-1/sqrt(fan_in), 1/sqrt(fan_in)); zero biases.
  static ModelParams initialized(const Architecture& arch, std::uint64_t seed) {
    ModelParams p(arch);
    Rng rng(derive_seed(seed, 0x1417));
    for (auto& t : p.tensors_) {
      if (t.dims.size() < 2) continue;
      std::size_t fan_in = 1;
      for (std::size_t d = 1; d < t.dims.size(); ++d) fan_in *= static_cast<std::size_t>(t.dims[d]);
      const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
      for (auto& v : t.values) v = rng.uniform(-bound, bound);
    }
    return p;
  }

  const Architecture& arch() const noexcept { return arch_; }
  std::vector<ParamTensor>& tensors() noexcept { return tensors_; }
  const std::vector<ParamTensor>& tensors() const noexcept { return tensors_; }
  ParamTensor& operator[](std::size_t i) { return tensors_[i]; }
  const ParamTensor& operator[](std::size_t i) const { return tensors_[i]; }
  std::vector<double>& values(std::size_t i) { return tensors_[i].values; }
  const std::vector<double>& values(std::size_t i) const { return tensors_[i].values; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& t : tensors_) n += t.values.size();
    return n;
  }

  bool same_layout(const ModelParams& o) const {
    if (tensors_.size() != o.tensors_.size()) return false;
    for (std::size_t i = 0; i < tensors_.size(); ++i)
      if (tensors_[i].dims != o.tensors_[i].dims) return false;
    return true;
  }

  ParamGrads zero_grads() const {
    ParamGrads g(tensors_.size());
    for (std::size_t i = 0; i < tensors_.size(); ++i) g[i].assign(tensors_[i].values.size(), 0.0);
    return g;
  }

  friend bool operator==(const ModelParams&, const ModelParams&) = default;

private:
  Architecture arch_{};
  std::vector<ParamTensor> tensors_;
};

// ---------------------------------------------------------------------------
// Score conditioning

/// [sin(2^0 pi s), cos(2^0 pi s), ..., sin(2^(L-1) pi s), cos(2^(L-1) pi s)]
inline std::vector<double> frequency_encode(double s, int bands) {
  if (!(s >= 0.0 && s <= 1.0)) throw std::invalid_argument("frequency_encode: score must lie in [0,1], got " + std::to_string(s));
  if (bands < 1) throw std::invalid_argument("frequency_encode: band count must be >= 1");
  std::vector<double> g(2 * static_cast<std::size_t>(bands));
  for (int l = 0; l < bands; ++l) {
    const double arg = std::ldexp(std::numbers::pi, l) * s;
    g[2 * l] = std::sin(arg);
    g[2 * l + 1] = std::cos(arg);
  }
  return g;
}

/// d gamma / d s
inline std::vector<double> frequency_encode_deriv(double s, int bands) {
  std::vector<double> g(2 * static_cast<std::size_t>(bands));
  for (int l = 0; l < bands; ++l) {
    const double f = std::ldexp(std::numbers::pi, l);
    g[2 * l] = f * std::cos(f * s);
    g[2 * l + 1] = -f * std::sin(f * s);
  }
  return g;
}

struct EmbedTrace {
  std::vector<double> gamma, hidden_pre, hidden, embedding;
};

inline EmbedTrace embed_score_traced(const ModelParams& p, double s) {
  const auto& arch = p.arch();
  EmbedTrace t;
  t.gamma = frequency_encode(s, arch.freq_bands);
  const int hid = arch.embed_hidden, in = 2 * arch.freq_bands, cb = Architecture::bottleneck();
  const auto& w1 = p.values(kEmbW1);
  const auto& b1 = p.values(kEmbB1);
  const auto& w2 = p.values(kEmbW2);
  const auto& b2 = p.values(kEmbB2);
  t.hidden_pre.resize(hid);
  t.hidden.resize(hid);
  for (int j = 0; j < hid; ++j) {
    double acc = b1[j];
    for (int i = 0; i < in; ++i) acc += w1[j * in + i] * t.gamma[i];
    t.hidden_pre[j] = acc;
    t.hidden[j] = ops::silu(acc);
  }
  t.embedding.resize(cb);
  for (int c = 0; c < cb; ++c) {
    double acc = b2[c];
    for (int j = 0; j < hid; ++j) acc += w2[c * hid + j] * t.hidden[j];
    t.embedding[c] = acc;
  }
  return t;
}

/// e_S = MLP(gamma(s)), one SiLU hidden layer.
inline std::vector<double> embed_score(const ModelParams& p, double s) { return embed_score_traced(p, s).embedding; }

/// d e_S / d s, one entry per embedding channel.
inline std::vector<double> embed_score_deriv(const ModelParams& p, double s) {
  const auto t = embed_score_traced(p, s);
  const auto& arch = p.arch();
  const int hid = arch.embed_hidden, in = 2 * arch.freq_bands, cb = Architecture::bottleneck();
  const auto dg = frequency_encode_deriv(s, arch.freq_bands);
  std::vector<double> dh(hid);
  for (int j = 0; j < hid; ++j) {
    double acc = 0.0;
    for (int i = 0; i < in; ++i) acc += p.values(kEmbW1)[j * in + i] * dg[i];
    dh[j] = acc * ops::silu_deriv(t.hidden_pre[j]);
  }
  std::vector<double> de(cb);
  for (int c = 0; c < cb; ++c) {
    double acc = 0.0;
    for (int j = 0; j < hid; ++j) acc += p.values(kEmbW2)[c * hid + j] * dh[j];
    de[c] = acc;
  }
  return de;
}

/// F'[c,i,j] = F[c,i,j] + (W e)[c], the same shift at every spatial position.
inline Tensor inject(const Tensor& features, const std::vector<double>& embedding, const std::vector<double>& weight) {
  const std::size_t cf = static_cast<std::size_t>(features.c);
  if (embedding.size() != cf || weight.size() != cf * cf) {
    throw std::invalid_argument("inject: feature channels (" + std::to_string(cf) + ") do not match embedding length (" +
                                std::to_string(embedding.size()) + ")");
  }
  Tensor out = features;
  for (std::size_t c = 0; c < cf; ++c) {
    double shift = 0.0;
    for (std::size_t k = 0; k < cf; ++k) shift += weight[c * cf + k] * embedding[k];
    double* plane = out.plane(static_cast<int>(c));
    for (std::size_t p = 0; p < out.plane_size(); ++p) plane[p] += shift;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Injection snapshot and its anchor penalty

class InjectionSnapshot {
public:
  InjectionSnapshot() = default;
  explicit InjectionSnapshot(const ModelParams& p) {
    for (std::size_t idx : kInjectionParams) weights_.push_back(p.values(idx));
  }
  explicit InjectionSnapshot(std::vector<std::vector<double>> weights) : weights_(std::move(weights)) {}

  bool empty() const noexcept { return weights_.empty(); }
  const std::vector<std::vector<double>>& weights() const noexcept { return weights_; }

  friend bool operator==(const InjectionSnapshot&, const InjectionSnapshot&) = default;

private:
  std::vector<std::vector<double>> weights_;
};

inline InjectionSnapshot snapshot_injection_weights(const ModelParams& p) { return InjectionSnapshot(p); }

/// 0.5 * sum_n ||W_n - W_n^init||_F^2; gradient (W_n - W_n^init) * scale accumulated into `grads`.
inline double injection_regularizer(const ModelParams& p, const InjectionSnapshot& snap, ParamGrads* grads = nullptr,
                                    double scale = 1.0) {
  if (snap.empty()) throw std::logic_error("injection_regularizer: no injection snapshot captured");
  if (snap.weights().size() != kInjectionParams.size()) throw std::invalid_argument("injection_regularizer: snapshot layout mismatch");
  double acc = 0.0;
  for (std::size_t n = 0; n < kInjectionParams.size(); ++n) {
    const auto& w = p.values(kInjectionParams[n]);
    const auto& w0 = snap.weights()[n];
    if (w.size() != w0.size()) throw std::invalid_argument("injection_regularizer: snapshot layout mismatch");
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double d = w[i] - w0[i];
      acc += d * d;
      if (grads != nullptr) (*grads)[kInjectionParams[n]][i] += scale * d;
    }
  }
  return 0.5 * acc;
}

// ---------------------------------------------------------------------------
// Forward / backward

struct ForwardTrace {
  bool valid = false;
  double score = 0.0;
  Tensor input;
  EmbedTrace embed;
  Tensor enc1_pre, enc1, pool1, enc2_pre, enc2, pool2, enc3_pre, enc3, injected;
  Tensor dec2_pre, dec2, up2, dec1_pre, dec1, up1, head;
  Image output;
};

inline void validate_restorer_input(const ModelParams& p, const Image& img, double s) {
  if (p.tensors().size() != kParamCount) throw std::logic_error("restorer: parameters are not initialized");
  if (img.height() % 4 != 0 || img.width() % 4 != 0 || img.height() < 4 || img.width() < 4) {
    throw std::invalid_argument("restorer: image dimensions must be positive multiples of 4, got " +
                                std::to_string(img.height()) + "x" + std::to_string(img.width()));
  }
  if (img.channels() != p.arch().in_channels) {
    throw std::invalid_argument("restorer: model expects " + std::to_string(p.arch().in_channels) + " channel(s), image has " +
                                std::to_string(img.channels()));
  }
  if (!(s >= 0.0 && s <= 1.0)) throw std::invalid_argument("restorer: conditioning score must lie in [0,1]");
}

namespace restorer_detail {

inline double qsq(double r) { return r * r / (1.0 + r * r); }
inline double qsq_deriv(double r) {
  const double d = 1.0 + r * r;
  return 2.0 * r / (d * d);
}

}  // namespace restorer_detail

inline ForwardTrace forward_traced(const ModelParams& p, const Image& img, double s) {
  validate_restorer_input(p, img, s);
  const auto [w1, w2, w3] = Architecture::kWidths;
  ForwardTrace t;
  t.score = s;
  t.input = to_tensor(img);
  t.embed = embed_score_traced(p, s);

  t.enc1_pre = ops::conv3x3(t.input, p.values(kEnc1W), p.values(kEnc1B), w1);
  t.enc1 = ops::silu(t.enc1_pre);
  t.pool1 = ops::avgpool2(t.enc1);
  t.enc2_pre = ops::conv3x3(t.pool1, p.values(kEnc2W), p.values(kEnc2B), w2);
  t.enc2 = ops::silu(t.enc2_pre);
  t.pool2 = ops::avgpool2(t.enc2);
  t.enc3_pre = ops::conv3x3(t.pool2, p.values(kEnc3W), p.values(kEnc3B), w3);
  t.enc3 = ops::silu(t.enc3_pre);
  t.injected = inject(t.enc3, t.embed.embedding, p.values(kInjectW));

  t.dec2_pre = ops::conv3x3(t.injected, p.values(kDec2W), p.values(kDec2B), w2);
  t.dec2 = ops::silu(t.dec2_pre);
  t.up2 = ops::upsample2(t.dec2);
  ops::add_inplace(t.up2, t.enc2);
  t.dec1_pre = ops::conv3x3(t.up2, p.values(kDec1W), p.values(kDec1B), w1);
  t.dec1 = ops::silu(t.dec1_pre);
  t.up1 = ops::upsample2(t.dec1);
  ops::add_inplace(t.up1, t.enc1);
  t.head = ops::conv3x3(t.up1, p.values(kHeadW), p.values(kHeadB), 2 * img.channels());

  const int c = img.channels();
  t.output = Image(img.height(), img.width(), c);
  const std::size_t np = t.input.plane_size();
  for (int k = 0; k < c; ++k) {
    const double* r_up = t.head.plane(k);
    const double* r_dn = t.head.plane(c + k);
    const double* in = t.input.plane(k);
    for (std::size_t q = 0; q < np; ++q) {
      const double up = restorer_detail::qsq(r_up[q]), dn = restorer_detail::qsq(r_dn[q]);
      t.output.data()[q * c + k] = in[q] * (1.0 - up - dn) + up;
    }
  }
  t.valid = true;
  return t;
}

/// Deterministic inference; no trace retained.
inline Image restore(const ModelParams& p, const Image& img, double s) { return forward_traced(p, img, s).output; }

/// Reverse pass: accumulates parameter gradients into `grads` and returns d loss / d input.
inline Image backward(const ModelParams& p, const ForwardTrace& t, const Image& grad_out, ParamGrads& grads) {
  if (!t.valid) throw std::logic_error("restorer backward called without a forward trace");
  if (!grad_out.same_shape(t.output)) throw std::invalid_argument("restorer backward: gradient shape mismatch");
  if (grads.size() != kParamCount) grads = p.zero_grads();
  const int c = t.output.channels();
  const std::size_t np = t.input.plane_size();

  Tensor g_head(2 * c, t.input.h, t.input.w);
  Tensor g_input(c, t.input.h, t.input.w);
  for (int k = 0; k < c; ++k) {
    const double* r_up = t.head.plane(k);
    const double* r_dn = t.head.plane(c + k);
    const double* in = t.input.plane(k);
    double* gu = g_head.plane(k);
    double* gd = g_head.plane(c + k);
    double* gi = g_input.plane(k);
    for (std::size_t q = 0; q < np; ++q) {
      const double go = grad_out.data()[q * c + k];
      const double up = restorer_detail::qsq(r_up[q]), dn = restorer_detail::qsq(r_dn[q]);
      gu[q] = go * (1.0 - in[q]) * restorer_detail::qsq_deriv(r_up[q]);
      gd[q] = -go * in[q] * restorer_detail::qsq_deriv(r_dn[q]);
      gi[q] = go * (1.0 - up - dn);
    }
  }

  Tensor g_up1(t.up1.c, t.up1.h, t.up1.w);
  ops::conv3x3_backward(t.up1, p.values(kHeadW), g_head, grads[kHeadW], grads[kHeadB], &g_up1);
  // up1 = upsample(dec1) + enc1
  Tensor g_enc1 = g_up1;
  Tensor g_dec1_pre = ops::silu_backward(t.dec1_pre, ops::upsample2_backward(g_up1));
  Tensor g_up2(t.up2.c, t.up2.h, t.up2.w);
  ops::conv3x3_backward(t.up2, p.values(kDec1W), g_dec1_pre, grads[kDec1W], grads[kDec1B], &g_up2);
  // up2 = upsample(dec2) + enc2
  Tensor g_enc2 = g_up2;
  Tensor g_dec2_pre = ops::silu_backward(t.dec2_pre, ops::upsample2_backward(g_up2));
  Tensor g_injected(t.injected.c, t.injected.h, t.injected.w);
  ops::conv3x3_backward(t.injected, p.values(kDec2W), g_dec2_pre, grads[kDec2W], grads[kDec2B], &g_injected);

  // injected = enc3 + W_inj e  (broadcast)
  const int cb = Architecture::bottleneck();
  std::vector<double> g_shift(cb, 0.0);
  for (int k = 0; k < cb; ++k) {
    const double* g = g_injected.plane(k);
    double acc = 0.0;
    for (std::size_t q = 0; q < g_injected.plane_size(); ++q) acc += g[q];
    g_shift[k] = acc;
  }
  const auto& w_inj = p.values(kInjectW);
  const auto& e = t.embed.embedding;
  std::vector<double> g_e(cb, 0.0);
  for (int r = 0; r < cb; ++r)
    for (int k = 0; k < cb; ++k) {
      grads[kInjectW][r * cb + k] += g_shift[r] * e[k];
      g_e[k] += w_inj[r * cb + k] * g_shift[r];
    }
  // embedding MLP
  const int hid = p.arch().embed_hidden, in_dim = 2 * p.arch().freq_bands;
  std::vector<double> g_hidden(hid, 0.0);
  for (int k = 0; k < cb; ++k) {
    grads[kEmbB2][k] += g_e[k];
    for (int j = 0; j < hid; ++j) {
      grads[kEmbW2][k * hid + j] += g_e[k] * t.embed.hidden[j];
      g_hidden[j] += p.values(kEmbW2)[k * hid + j] * g_e[k];
    }
  }
  for (int j = 0; j < hid; ++j) {
    const double gp = g_hidden[j] * ops::silu_deriv(t.embed.hidden_pre[j]);
    grads[kEmbB1][j] += gp;
    for (int i = 0; i < in_dim; ++i) grads[kEmbW1][j * in_dim + i] += gp * t.embed.gamma[i];
  }

  Tensor g_enc3_pre = ops::silu_backward(t.enc3_pre, g_injected);
  Tensor g_pool2(t.pool2.c, t.pool2.h, t.pool2.w);
  ops::conv3x3_backward(t.pool2, p.values(kEnc3W), g_enc3_pre, grads[kEnc3W], grads[kEnc3B], &g_pool2);
  ops::add_inplace(g_enc2, ops::avgpool2_backward(g_pool2, t.enc2.h, t.enc2.w));
  Tensor g_enc2_pre = ops::silu_backward(t.enc2_pre, g_enc2);
  Tensor g_pool1(t.pool1.c, t.pool1.h, t.pool1.w);
  ops::conv3x3_backward(t.pool1, p.values(kEnc2W), g_enc2_pre, grads[kEnc2W], grads[kEnc2B], &g_pool1);
  ops::add_inplace(g_enc1, ops::avgpool2_backward(g_pool1, t.enc1.h, t.enc1.w));
  Tensor g_enc1_pre = ops::silu_backward(t.enc1_pre, g_enc1);
  ops::conv3x3_backward(t.input, p.values(kEnc1W), g_enc1_pre, grads[kEnc1W], grads[kEnc1B], &g_input);

  return to_image(g_input);
}

/// Stateful wrapper: forward() records the trace that backward() consumes.
class ConditionedRestorer {
public:
  explicit ConditionedRestorer(ModelParams params) : params_(std::move(params)) {}

  const ModelParams& params() const noexcept { return params_; }
  ModelParams& params() noexcept { return params_; }

  Image forward(const Image& img, double s) {
    trace_ = forward_traced(params_, img, s);
    return trace_.output;
  }

  struct Result {
    ParamGrads params;
    Image input;
  };

  Result backward(const Image& grad_out) const {
    if (!trace_.valid) throw std::logic_error("ConditionedRestorer::backward called before forward");
    Result r{params_.zero_grads(), {}};
    r.input = qualiteacher::backward(params_, trace_, grad_out, r.params);
    return r;
  }

  InjectionSnapshot snapshot_injection_weights() const { return InjectionSnapshot(params_); }

private:
  ModelParams params_;
  ForwardTrace trace_;
};

}  // namespace qualiteacher
