#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <vector>

#include "qualiteacher/image.hpp"
#include "qualiteacher/iqa.hpp"
#include "qualiteacher/restorer.hpp"

namespace qualiteacher {

inline constexpr std::size_t kBankCapacity = 3;
inline constexpr int kMaxBin = 7;

struct PseudoLabel {
  Image image;
  int aug_id = 1;  // 1-based index into kAugmentations
  ScoreVector scores;
  double ensemble = 0.0;
  std::int64_t created_at = 0;

  friend bool operator==(const PseudoLabel& a, const PseudoLabel& b) {
    return a.image == b.image && a.aug_id == b.aug_id && a.ensemble == b.ensemble && a.created_at == b.created_at &&
           a.scores.normalized() == b.scores.normalized() && a.scores.a == b.scores.a && a.scores.b == b.scores.b &&
           a.scores.c == b.scores.c;
  }
};

struct DropThresholds {
  double tau1 = 0.02;  // across scorers, per augmentation
  double tau2 = 0.02;  // across augmentations, per scorer
};

/// Quality level floor(10 S), merged at the top into bin 7.
inline int score_bin(double s) {
  const int b = static_cast<int>(std::floor(10.0 * s));
  return std::clamp(b, 0, kMaxBin);
}

inline double bin_condition(int bin) { return static_cast<double>(bin) / 10.0; }

/// Ranking used by the bank: higher ensemble first, ties go to the newer label.
inline bool ranks_before(const PseudoLabel& a, const PseudoLabel& b) {
  if (a.ensemble != b.ensemble) return a.ensemble > b.ensemble;
  return a.created_at > b.created_at;
}

/// Labels the teacher produces under each augmentation, mapped back to the input frame.
inline std::array<PseudoLabel, 3> generate_pseudo_labels(const ModelParams& teacher, const Image& input, const IqaConfig& cfg,
                                                         std::int64_t iteration, double condition = bin_condition(kMaxBin)) {
  std::array<PseudoLabel, 3> out;
  for (std::size_t k = 0; k < kAugmentations.size(); ++k) {
    const Transform t = kAugmentations[k];
    PseudoLabel& pl = out[k];
    pl.image = invert_transform(restore(teacher, apply_transform(input, t), condition), t, input.height(), input.width());
    pl.aug_id = static_cast<int>(k) + 1;
    pl.scores = score_image(pl.image, cfg);
    pl.ensemble = ensemble(pl.scores);
    pl.created_at = iteration;
  }
  return out;
}

namespace pl_detail {

inline double population_variance(const std::array<double, 3>& v) {
  const double mean = (v[0] + v[1] + v[2]) / 3.0;
  double acc = 0.0;
  for (double x : v) acc += (x - mean) * (x - mean);
  return acc / 3.0;
}

}  // namespace pl_detail

struct DropDiagnostics {
  std::array<double, 3> scorer_variance{};        // per augmentation k, over scorers
  std::array<double, 3> augmentation_variance{};  // per scorer m, over augmentations
  bool accepted = false;
};

inline DropDiagnostics dual_drop_diagnostics(const std::array<PseudoLabel, 3>& pls, const DropThresholds& t) {
  DropDiagnostics d;
  std::array<std::array<double, 3>, 3> grid{};  // [k][m]
  for (int k = 0; k < 3; ++k) grid[k] = pls[k].scores.normalized();
  bool ok = true;
  for (int k = 0; k < 3; ++k) {
    d.scorer_variance[k] = pl_detail::population_variance(grid[k]);
    ok = ok && d.scorer_variance[k] < t.tau1;
  }
  for (int m = 0; m < 3; ++m) {
    d.augmentation_variance[m] = pl_detail::population_variance({grid[0][m], grid[1][m], grid[2][m]});
    ok = ok && d.augmentation_variance[m] < t.tau2;
  }
  d.accepted = ok;
  return d;
}

/// True when the whole augmented set survives both variance bounds.
inline bool dual_drop(const std::array<PseudoLabel, 3>& pls, const DropThresholds& t) {
  return dual_drop_diagnostics(pls, t).accepted;
}

/// Per-input top-3 store.
class MemoryBank {
public:
  const std::vector<PseudoLabel>& entries(std::uint64_t id) const {
    static const std::vector<PseudoLabel> kEmpty;
    const auto it = banks_.find(id);
    return it == banks_.end() ? kEmpty : it->second;
  }

  bool empty(std::uint64_t id) const { return entries(id).empty(); }

  /// bank <- top-3(bank U candidates)
  void gate_update(std::uint64_t id, const std::vector<PseudoLabel>& candidates) {
    if (candidates.empty()) return;
    auto& bank = banks_[id];
    bank.insert(bank.end(), candidates.begin(), candidates.end());
    std::stable_sort(bank.begin(), bank.end(), ranks_before);
    if (bank.size() > kBankCapacity) bank.resize(kBankCapacity);
  }

  /// Best banked label, or nothing when the input has no history.
  const PseudoLabel* best(std::uint64_t id) const {
    const auto& e = entries(id);
    return e.empty() ? nullptr : &e.front();
  }

  /// The poorest banked label.
  const PseudoLabel* worst(std::uint64_t id) const {
    const auto& e = entries(id);
    return e.empty() ? nullptr : &e.back();
  }

  std::size_t input_count() const { return banks_.size(); }
  const std::map<std::uint64_t, std::vector<PseudoLabel>>& all() const { return banks_; }
  std::map<std::uint64_t, std::vector<PseudoLabel>>& all() { return banks_; }

  double mean_score() const {
    double acc = 0.0;
    std::size_t n = 0;
    for (const auto& [id, bank] : banks_)
      for (const auto& pl : bank) {
        acc += pl.ensemble;
        ++n;
      }
    return n == 0 ? 0.0 : acc / static_cast<double>(n);
  }

  friend bool operator==(const MemoryBank&, const MemoryBank&) = default;

private:
  std::map<std::uint64_t, std::vector<PseudoLabel>> banks_;
};

struct Supervision {
  const PseudoLabel* label = nullptr;
  int bin = 0;
  double condition = 0.0;
};

/// Top label with its binned condition; empty when the bank holds nothing for `id`.
inline std::optional<Supervision> select_supervision(const MemoryBank& bank, std::uint64_t id) {
  const PseudoLabel* top = bank.best(id);
  if (top == nullptr) return std::nullopt;
  const int bin = score_bin(top->ensemble);
  return Supervision{top, bin, bin_condition(bin)};
}

}  // namespace qualiteacher
