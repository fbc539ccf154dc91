#pragma once

#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "qualiteacher/config.hpp"
#include "qualiteacher/run.hpp"
#include "qualiteacher/trainer.hpp"

namespace qualiteacher {

struct EvalOptions {
  double monotone_slack = 0.005;  // allowed drop between consecutive bins
  double separation_high = 0.7;
  double separation_low = 0.2;
};

struct EvalImage {
  double degraded_score = 0.0;
  std::array<double, kBinCount> bin_scores{};
  double psnr_degraded = 0.0;
  double psnr_bin7 = 0.0;
  double score_high = 0.0;
  double score_low = 0.0;
  bool monotonic = false;
};

struct EvalReport {
  std::array<double, kBinCount> bin_mean{};
  double degraded_mean = 0.0;
  double monotonic_fraction = 0.0;
  double psnr_bin7 = 0.0;
  double psnr_degraded = 0.0;
  double separation_fraction = 0.0;  // share of images with S(y_high) - S(y_low) > 0
  double mean_gap = 0.0;
  double acceptance_rate = 0.0;
  std::vector<std::pair<std::int64_t, double>> bank_mean_trajectory;
  std::vector<EvalImage> images;
};

/// True when scores never drop by more than `slack` from one bin to the next.
inline bool non_decreasing(const std::array<double, kBinCount>& s, double slack) {
  for (int b = 1; b < kBinCount; ++b)
    if (s[b] < s[b - 1] - slack) return false;
  return true;
}

inline EvalReport evaluate(const ModelParams& p, const std::vector<Sample>& set, const IqaConfig& iqa, const EvalOptions& opt = {}) {
  if (set.empty()) throw std::invalid_argument("evaluate: empty evaluation set");
  EvalReport rep;
  const double n = static_cast<double>(set.size());
  for (const auto& s : set) {
    EvalImage e;
    e.degraded_score = ensemble_score(s.degraded, iqa);
    const auto sw = sweep(p, s.degraded, iqa);
    for (int b = 0; b < kBinCount; ++b) e.bin_scores[b] = sw[b].score;
    e.psnr_degraded = psnr(s.degraded, s.clean);
    e.psnr_bin7 = psnr(sw[kMaxBin].image, s.clean);
    e.score_high = ensemble_score(restore(p, s.degraded, opt.separation_high), iqa);
    e.score_low = ensemble_score(restore(p, s.degraded, opt.separation_low), iqa);
    e.monotonic = non_decreasing(e.bin_scores, opt.monotone_slack);

    for (int b = 0; b < kBinCount; ++b) rep.bin_mean[b] += e.bin_scores[b] / n;
    rep.degraded_mean += e.degraded_score / n;
    rep.monotonic_fraction += (e.monotonic ? 1.0 : 0.0) / n;
    rep.psnr_bin7 += e.psnr_bin7 / n;
    rep.psnr_degraded += e.psnr_degraded / n;
    rep.separation_fraction += (e.score_high - e.score_low > 0.0 ? 1.0 : 0.0) / n;
    rep.mean_gap += (e.score_high - e.score_low) / n;
    rep.images.push_back(e);
  }
  return rep;
}

inline EvalReport evaluate(const TrainerState& st, const RunConfig& cfg, const EvalOptions& opt = {}) {
  EvalReport rep = evaluate(st.student, eval_set(cfg), cfg.iqa, opt);
  rep.acceptance_rate = st.pl_sets_generated == 0 ? 0.0 : static_cast<double>(st.pl_sets_accepted) / st.pl_sets_generated;
  return rep;
}

// ---------------------------------------------------------------------------
// Reward-hacking probe

/// Clean scene whose left and right halves are the same `height x width/2` texture,
/// so horizontally adjacent quadrants are content twins.
inline Image twin_scene(std::uint64_t seed, int height = 24, int width = 24) {
  if (width % 2 != 0) throw std::invalid_argument("twin_scene: width must be even");
  const Image half = generate_clean(seed, height, width / 2);
  Image out(height, width, half.channels());
  paste(out, half, {0, 0, width / 2, height});
  paste(out, half, {width / 2, 0, width / 2, height});
  return out;
}

struct PatchProbe {
  std::vector<double> gaps;  // |S1 - S2| per image
  double mean_gap = 0.0;
  double min_gap = 0.0;
  double max_gap = 0.0;
};

/// Cropped-consistency gap between a patched quadrant (restore, then crop) and its unpatched
/// content twin (crop, then restore) over `count` twin scenes. With `attack` false the same
/// regions are compared on the unpatched scene.
inline PatchProbe patch_probe(const RestoreFn& f, int count, std::uint64_t seed, const IqaConfig& cfg, bool attack = true,
                              int height = 24, int width = 24) {
  if (count < 1) throw std::invalid_argument("patch_probe: count must be positive");
  Rng rng(derive_seed(seed, 0xA77));
  PatchProbe p;
  p.min_gap = std::numeric_limits<double>::infinity();
  for (int i = 0; i < count; ++i) {
    const Image scene = twin_scene(derive_seed(seed, i), height, width);
    const PatchAttack atk = adversarial_patch_attack(scene, rng, attack ? 0.06 : 0.0);
    CropRegion twin = atk.patched;
    twin.x0 = atk.patched.x0 == 0 ? width - atk.patched.w : 0;
    const double gap = cropped_consistency(f, atk.image, bin_condition(kMaxBin), atk.patched, twin, cfg).value;
    p.gaps.push_back(gap);
    p.mean_gap += gap / count;
    p.min_gap = std::min(p.min_gap, gap);
    p.max_gap = std::max(p.max_gap, gap);
  }
  return p;
}

/// Bank-mean samples every `stride` iterations from a metrics log.
inline std::vector<std::pair<std::int64_t, double>> bank_trajectory(const std::vector<MetricsRow>& rows, std::int64_t stride = 100) {
  std::vector<std::pair<std::int64_t, double>> out;
  for (const auto& r : rows)
    if (r.iter % stride == 0) out.emplace_back(r.iter, r.bank_mean);
  return out;
}

/// `report.txt` (key = value) and `per_image.tsv`.
inline void write_report(const EvalReport& rep, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream kv(dir / "report.txt");
  if (!kv) throw std::runtime_error((dir / "report.txt").string() + ": cannot open for writing");
  kv << "images = " << rep.images.size() << '\n';
  kv << "degraded_mean_S = " << format_double(rep.degraded_mean) << '\n';
  for (int b = 0; b < kBinCount; ++b) kv << "bin" << b << "_mean_S = " << format_double(rep.bin_mean[b]) << '\n';
  kv << "monotonic_fraction = " << format_double(rep.monotonic_fraction) << '\n';
  kv << "psnr_degraded = " << format_double(rep.psnr_degraded) << '\n';
  kv << "psnr_bin7 = " << format_double(rep.psnr_bin7) << '\n';
  kv << "separation_fraction = " << format_double(rep.separation_fraction) << '\n';
  kv << "separation_mean_gap = " << format_double(rep.mean_gap) << '\n';
  kv << "dual_drop_acceptance = " << format_double(rep.acceptance_rate) << '\n';
  for (const auto& [it, v] : rep.bank_mean_trajectory) kv << "bank_mean_S@" << it << " = " << format_double(v) << '\n';

  std::ofstream tsv(dir / "per_image.tsv");
  if (!tsv) throw std::runtime_error((dir / "per_image.tsv").string() + ": cannot open for writing");
  tsv << "image\tdegraded_S";
  for (int b = 0; b < kBinCount; ++b) tsv << "\tS_bin" << b;
  tsv << "\tpsnr_degraded\tpsnr_bin7\tS_high\tS_low\tmonotonic\n";
  for (std::size_t i = 0; i < rep.images.size(); ++i) {
    const auto& e = rep.images[i];
    tsv << i << '\t' << format_double(e.degraded_score);
    for (double s : e.bin_scores) tsv << '\t' << format_double(s);
    tsv << '\t' << format_double(e.psnr_degraded) << '\t' << format_double(e.psnr_bin7) << '\t' << format_double(e.score_high) << '\t'
        << format_double(e.score_low) << '\t' << (e.monotonic ? 1 : 0) << '\n';
  }
}

}  // namespace qualiteacher
