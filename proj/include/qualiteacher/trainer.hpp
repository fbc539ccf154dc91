#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <vector>

#include "qualiteacher/config.hpp"
#include "qualiteacher/image.hpp"
#include "qualiteacher/iqa.hpp"
#include "qualiteacher/losses.hpp"
#include "qualiteacher/pseudo_label.hpp"
#include "qualiteacher/restorer.hpp"
#include "qualiteacher/rng.hpp"
#include "qualiteacher/synthbench.hpp"

namespace qualiteacher {

// ---------------------------------------------------------------------------
// Optimizer and teacher update

struct AdamState {
  ParamGrads m;
  ParamGrads v;
  std::int64_t step = 0;

  friend bool operator==(const AdamState&, const AdamState&) = default;
};

inline AdamState make_adam_state(const ModelParams& p) { return {p.zero_grads(), p.zero_grads(), 0}; }

/// Decoupled weight decay followed by the bias-corrected adaptive-moment step.
inline void adamw_step(std::vector<std::vector<double>*> params, const ParamGrads& grads, AdamState& st, const OptimConfig& o) {
  if (params.size() != grads.size() || st.m.size() != grads.size()) throw std::invalid_argument("adamw_step: layout mismatch");
  ++st.step;
  const double bc1 = 1.0 - std::pow(o.beta1, static_cast<double>(st.step));
  const double bc2 = 1.0 - std::pow(o.beta2, static_cast<double>(st.step));
  for (std::size_t t = 0; t < params.size(); ++t) {
    auto& w = *params[t];
    const auto& g = grads[t];
    if (w.size() != g.size()) throw std::invalid_argument("adamw_step: layout mismatch");
    auto& m = st.m[t];
    auto& v = st.v[t];
    for (std::size_t i = 0; i < w.size(); ++i) {
      w[i] -= o.lr * o.weight_decay * w[i];
      m[i] = o.beta1 * m[i] + (1.0 - o.beta1) * g[i];
      v[i] = o.beta2 * v[i] + (1.0 - o.beta2) * g[i] * g[i];
      const double mh = m[i] / bc1, vh = v[i] / bc2;
      w[i] -= o.lr * mh / (std::sqrt(vh) + o.eps);
    }
  }
}

inline void adamw_step(ModelParams& p, const ParamGrads& grads, AdamState& st, const OptimConfig& o) {
  std::vector<std::vector<double>*> ptrs;
  for (auto& t : p.tensors()) ptrs.push_back(&t.values);
  adamw_step(std::move(ptrs), grads, st, o);
}

/// teacher <- alpha * teacher + (1 - alpha) * student, elementwise.
inline void ema_update(ModelParams& teacher, const ModelParams& student, double alpha) {
  if (!teacher.same_layout(student)) throw std::invalid_argument("ema_update: teacher and student layouts differ");
  for (std::size_t t = 0; t < teacher.tensors().size(); ++t) {
    auto& th = teacher.values(t);
    const auto& s = student.values(t);
    for (std::size_t i = 0; i < th.size(); ++i) th[i] = alpha * th[i] + (1.0 - alpha) * s[i];
  }
}

// ---------------------------------------------------------------------------
// Data streams. Every sample is a pure function of (seed, stream, index), so
// resuming needs no data-loader state.

struct Sample {
  Image clean;     // hidden for unpaired/eval samples; never used by training losses
  Image degraded;
};

inline constexpr std::uint64_t kPairedStream = 1;
inline constexpr std::uint64_t kUnpairedStream = 2;
inline constexpr std::uint64_t kEvalStream = 3;

inline Sample make_sample(std::uint64_t seed, std::uint64_t stream, std::uint64_t index, const DegradationRange& range,
                          const DataConfig& d, int channels) {
  const std::uint64_t base = derive_seed(derive_seed(seed, stream), index);
  Sample s;
  s.clean = generate_clean(base, d.height, d.width, channels);
  Rng rng(derive_seed(base, 0xDE6));
  s.degraded = degrade(s.clean, sample_degradation(range, rng));
  return s;
}

inline Sample paired_sample(const RunConfig& c, std::int64_t iteration, int slot) {
  return make_sample(c.data.seed, kPairedStream, static_cast<std::uint64_t>(iteration) * c.data.batch + slot, paired_range(),
                     c.data, c.model.in_channels);
}

inline std::vector<Sample> unpaired_pool(const RunConfig& c) {
  std::vector<Sample> pool;
  for (int i = 0; i < c.data.unpaired_pool; ++i)
    pool.push_back(make_sample(c.data.seed, kUnpairedStream, i, unpaired_range(), c.data, c.model.in_channels));
  return pool;
}

/// Held-out images from the unpaired degradation distribution.
inline std::vector<Sample> eval_set(const RunConfig& c) {
  std::vector<Sample> set;
  for (int i = 0; i < c.data.eval_count; ++i)
    set.push_back(make_sample(c.data.seed, kEvalStream, i, unpaired_range(), c.data, c.model.in_channels));
  return set;
}

// ---------------------------------------------------------------------------
// Training state and step

struct TrainerState {
  ModelParams student;
  ModelParams teacher;
  AdamState adam;
  InjectionSnapshot snapshot;
  std::int64_t iteration = 0;
  Rng rng;
  MemoryBank bank;
  std::int64_t pl_sets_generated = 0;
  std::int64_t pl_sets_accepted = 0;

  friend bool operator==(const TrainerState&, const TrainerState&) = default;
};

/// Iteration-0 state: random student, teacher an exact copy, snapshot of the initial injection weights.
inline TrainerState initial_state(const RunConfig& c) {
  TrainerState s;
  s.student = ModelParams::initialized(c.model, c.data.seed);
  s.teacher = s.student;
  s.adam = make_adam_state(s.student);
  s.snapshot = snapshot_injection_weights(s.student);
  s.rng = Rng(derive_seed(c.data.seed, 0x7A1));
  return s;
}

struct StepResult {
  LossBreakdown loss;
  double bank_mean = 0.0;
  int supervised_unpaired = 0;
  int accepted_sets = 0;
};

/// One mixed iteration: pseudo-labels -> dual drop -> bank -> student losses -> AdamW -> EMA.
/// Preference and cropped terms are always evaluated for reporting but only contribute gradient
/// once `iteration >= warmup`.
inline StepResult train_step(TrainerState& st, const RunConfig& c, const std::vector<Sample>& pool) {
  const IqaConfig& iqa = c.iqa;
  const int batch = c.data.batch;
  const bool preference_on = st.iteration >= c.loss.warmup;
  if (st.iteration == c.loss.warmup && c.loss.warmup > 0) st.snapshot = snapshot_injection_weights(st.student);

  StepResult out;
  ParamGrads grads = st.student.zero_grads();

  // unpaired ids and crop regions come from the state RNG
  std::vector<std::uint64_t> ids(batch);
  std::vector<CropRegion> regions(batch);
  for (int i = 0; i < batch; ++i) {
    ids[i] = static_cast<std::uint64_t>(st.rng.uniform_int(0, static_cast<int>(pool.size()) - 1));
    regions[i] = random_quarter_region(c.data.height, c.data.width, st.rng);
  }

  // (1)-(2) pseudo-labels, gating, supervision
  for (int i = 0; i < batch; ++i) {
    const auto pls = generate_pseudo_labels(st.teacher, pool[ids[i]].degraded, iqa, st.iteration);
    ++st.pl_sets_generated;
    if (dual_drop(pls, c.gating)) {
      ++st.pl_sets_accepted;
      ++out.accepted_sets;
      st.bank.gate_update(ids[i], {pls.begin(), pls.end()});
    }
  }
  std::vector<std::optional<Supervision>> sup(batch);
  for (int i = 0; i < batch; ++i) {
    sup[i] = select_supervision(st.bank, ids[i]);
    if (sup[i]) ++out.supervised_unpaired;
  }

  // (3)-(4) reconstruction terms over paired + supervised unpaired samples
  const int n_sup = batch + out.supervised_unpaired;
  const double rec_scale = c.loss.coeffs.rec / n_sup;
  const double per_scale = c.loss.coeffs.per / n_sup;
  auto supervise = [&](const Image& input, const Image& target, const WeightMap& wm, double s) {
    const ForwardTrace t = forward_traced(st.student, input, s);
    Image gy(t.output.height(), t.output.width(), t.output.channels());
    out.loss.rec += weighted_rec_loss(t.output, target, wm, &gy, rec_scale) / n_sup;
    out.loss.per += perceptual_proxy_loss(t.output, target, &gy, per_scale) / n_sup;
    backward(st.student, t, gy, grads);
  };
  for (int i = 0; i < batch; ++i) {
    const Sample p = paired_sample(c, st.iteration, i);
    supervise(p.degraded, p.clean, uniform_weight_map(c.data.height, c.data.width), c.loss.paired_score);
  }
  for (int i = 0; i < batch; ++i) {
    if (!sup[i]) continue;
    const Image& target = sup[i]->label->image;
    supervise(pool[ids[i]].degraded, target, blockwise_weight_map(target, iqa), sup[i]->condition);
  }

  // preference and cropped-consistency terms on the unpaired batch
  const double pref_scale = c.loss.coeffs.pref / batch;
  const double crop_scale = c.loss.coeffs.cropped / batch;
  int l2_count = 0;
  double l2_sum = 0.0;
  for (int i = 0; i < batch; ++i) {
    const Image& input = pool[ids[i]].degraded;
    const PseudoLabel* poorest = st.bank.worst(ids[i]);
    // each call adds the anchor gradient with weight w_pref / batch, i.e. once per step in total
    const PreferenceResult pr = preference_loss(st.student, input, poorest, c.loss.pref, st.snapshot, iqa,
                                                preference_on ? &grads : nullptr, pref_scale);
    out.loss.pref_l1 += pr.l1 / batch;
    if (!pr.l2_skipped) {
      l2_sum += pr.l2;
      ++l2_count;
    }
    out.loss.score_high += pr.score_high / batch;
    out.loss.score_low += pr.score_low / batch;
    const CroppedResult cr =
        cropped_consistency_loss(st.student, input, c.loss.pref.s_high, regions[i], iqa, preference_on ? &grads : nullptr, crop_scale);
    out.loss.cropped += cr.value / batch;
  }
  out.loss.pref_l2 = l2_count > 0 ? l2_sum / l2_count : 0.0;
  out.loss.pref_l2_skipped = l2_count == 0;
  out.loss.pref_reg = injection_regularizer(st.student, st.snapshot);
  out.loss.total = total_loss(out.loss, c.loss.coeffs);

  // (5) optimizer, (6) teacher
  st.iteration += 1;
  adamw_step(st.student, grads, st.adam, c.optim);
  ema_update(st.teacher, st.student, c.optim.ema_alpha);
  out.bank_mean = st.bank.mean_score();
  return out;
}

// ---------------------------------------------------------------------------
// Inference

inline constexpr int kBinCount = kMaxBin + 1;

/// Maps s onto the bin grid {0.0, 0.1, ..., 0.7}; throws if s is off-grid.
inline int grid_bin(double s) {
  const double scaled = s * 10.0;
  const double nearest = std::round(scaled);
  if (!(std::abs(scaled - nearest) < 1e-9) || nearest < 0 || nearest > kMaxBin)
    throw std::invalid_argument("score " + std::to_string(s) + " is not on the bin grid {0.0, 0.1, ..., 0.7}");
  return static_cast<int>(nearest);
}

inline Image infer(const ModelParams& p, const Image& img, double s = bin_condition(kMaxBin)) {
  return restore(p, img, bin_condition(grid_bin(s)));
}

struct SweepEntry {
  int bin = 0;
  Image image;
  double score = 0.0;
};

inline std::vector<SweepEntry> sweep(const ModelParams& p, const Image& img, const IqaConfig& cfg, const std::vector<int>& bins) {
  std::vector<SweepEntry> out;
  for (int b : bins) {
    if (b < 0 || b > kMaxBin) throw std::invalid_argument("sweep: bin " + std::to_string(b) + " outside 0..7");
    SweepEntry e{b, infer(p, img, bin_condition(b)), 0.0};
    e.score = ensemble_score(e.image, cfg);
    out.push_back(std::move(e));
  }
  return out;
}

inline std::vector<SweepEntry> sweep(const ModelParams& p, const Image& img, const IqaConfig& cfg) {
  std::vector<int> bins;
  for (int b = 0; b < kBinCount; ++b) bins.push_back(b);
  return sweep(p, img, cfg, bins);
}

}  // namespace qualiteacher
