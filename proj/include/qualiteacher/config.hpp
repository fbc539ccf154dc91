#pragma once

#include <charconv>
#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "qualiteacher/iqa.hpp"
#include "qualiteacher/losses.hpp"
#include "qualiteacher/pseudo_label.hpp"
#include "qualiteacher/restorer.hpp"

namespace qualiteacher {

struct OptimConfig {
  double lr = 5e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double weight_decay = 1e-4;
  double eps = 1e-8;
  int iterations = 2000;
  double ema_alpha = 0.998;
  int checkpoint_every = 500;
};

struct LossConfig {
  PreferenceParams pref{};
  LossCoefficients coeffs{};
  int warmup = 200;
  double paired_score = 0.7;  // condition used on paired (clean-target) steps
};

struct DataConfig {
  int height = 24;
  int width = 24;
  int batch = 8;
  int unpaired_pool = 256;
  int eval_count = 32;
  std::uint64_t seed = 1;
  std::string outdir = "run";
};

struct RunConfig {
  Architecture model{};
  IqaConfig iqa{};
  DropThresholds gating{};
  LossConfig loss{};
  OptimConfig optim{};
  DataConfig data{};
};

/// Raised for malformed or invalid configuration; carries every problem found.
class ConfigError : public std::runtime_error {
public:
  explicit ConfigError(std::vector<std::string> problems)
      : std::runtime_error(join(problems)), problems_(std::move(problems)) {}

  const std::vector<std::string>& problems() const noexcept { return problems_; }

private:
  static std::string join(const std::vector<std::string>& p) {
    std::string out = "invalid configuration:";
    for (const auto& s : p) out += "\n  " + s;
    return out;
  }
  std::vector<std::string> problems_;
};

namespace config_detail {

using Field = std::variant<double*, int*, std::uint64_t*, std::string*>;

inline std::vector<std::pair<std::string, Field>> fields(RunConfig& c) {
  return {
      {"model.in_channels", &c.model.in_channels},
      {"model.freq_bands", &c.model.freq_bands},
      {"model.embed_hidden", &c.model.embed_hidden},
      {"iqa.sharp_lap_gain", &c.iqa.sharp_lap_gain},
      {"iqa.sharp_range_gain", &c.iqa.sharp_range_gain},
      {"iqa.mscn_eps", &c.iqa.mscn_eps},
      {"iqa.dist_m2_ref", &c.iqa.dist_m2_ref},
      {"iqa.dist_m4_ref", &c.iqa.dist_m4_ref},
      {"iqa.dist_m4_weight", &c.iqa.dist_m4_weight},
      {"iqa.dist_gain", &c.iqa.dist_gain},
      {"iqa.struct_contrast_gain", &c.iqa.struct_contrast_gain},
      {"iqa.struct_w_contrast", &c.iqa.struct_w_contrast},
      {"iqa.struct_w_exposure", &c.iqa.struct_w_exposure},
      {"iqa.struct_w_balance", &c.iqa.struct_w_balance},
      {"iqa.struct_balance_gain", &c.iqa.struct_balance_gain},
      {"iqa.bounds_a_lo", &c.iqa.bounds_a.lo},
      {"iqa.bounds_a_hi", &c.iqa.bounds_a.hi},
      {"iqa.bounds_b_lo", &c.iqa.bounds_b.lo},
      {"iqa.bounds_b_hi", &c.iqa.bounds_b.hi},
      {"iqa.bounds_c_lo", &c.iqa.bounds_c.lo},
      {"iqa.bounds_c_hi", &c.iqa.bounds_c.hi},
      {"gating.tau1", &c.gating.tau1},
      {"gating.tau2", &c.gating.tau2},
      {"loss.beta", &c.loss.pref.beta},
      {"loss.delta", &c.loss.pref.delta},
      {"loss.s_high", &c.loss.pref.s_high},
      {"loss.s_low", &c.loss.pref.s_low},
      {"loss.w_rec", &c.loss.coeffs.rec},
      {"loss.w_per", &c.loss.coeffs.per},
      {"loss.w_pref", &c.loss.coeffs.pref},
      {"loss.w_cropped", &c.loss.coeffs.cropped},
      {"loss.warmup", &c.loss.warmup},
      {"loss.paired_score", &c.loss.paired_score},
      {"optim.lr", &c.optim.lr},
      {"optim.beta1", &c.optim.beta1},
      {"optim.beta2", &c.optim.beta2},
      {"optim.weight_decay", &c.optim.weight_decay},
      {"optim.eps", &c.optim.eps},
      {"optim.iterations", &c.optim.iterations},
      {"optim.ema_alpha", &c.optim.ema_alpha},
      {"optim.checkpoint_every", &c.optim.checkpoint_every},
      {"data.height", &c.data.height},
      {"data.width", &c.data.width},
      {"data.batch", &c.data.batch},
      {"data.unpaired_pool", &c.data.unpaired_pool},
      {"data.eval_count", &c.data.eval_count},
      {"data.seed", &c.data.seed},
      {"data.outdir", &c.data.outdir},
  };
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
bool parse_number(const std::string& text, T& out) {
  const char* first = text.data();
  const char* last = first + text.size();
  auto [ptr, ec] = std::from_chars(first, last, out);
  return ec == std::errc() && ptr == last;
}

inline bool assign(const Field& f, const std::string& text) {
  return std::visit(
      [&](auto* p) {
        using T = std::remove_pointer_t<decltype(p)>;
        if constexpr (std::is_same_v<T, std::string>) {
          *p = text;
          return true;
        } else {
          return parse_number(text, *p);
        }
      },
      f);
}

inline std::string format(const Field& f) {
  return std::visit(
      [](auto* p) -> std::string {
        using T = std::remove_pointer_t<decltype(p)>;
        if constexpr (std::is_same_v<T, std::string>) {
          return *p;
        } else {
          char buf[64];
          auto [end, ec] = std::to_chars(buf, buf + sizeof buf, *p);
          return std::string(buf, end);
        }
      },
      f);
}

}  // namespace config_detail

/// Checks value ranges; returns one message per offending key.
inline std::vector<std::string> validate(const RunConfig& c) {
  std::vector<std::string> bad;
  auto need = [&](bool ok, const char* key, const char* rule) {
    if (!ok) bad.push_back(std::string(key) + ": " + rule);
  };
  need(c.model.in_channels == 1 || c.model.in_channels == 3, "model.in_channels", "must be 1 or 3");
  need(c.model.freq_bands >= 1 && c.model.freq_bands <= 16, "model.freq_bands", "must be in [1, 16]");
  need(c.model.embed_hidden >= 1, "model.embed_hidden", "must be positive");
  need(c.iqa.mscn_eps > 0, "iqa.mscn_eps", "must be > 0");
  need(c.iqa.dist_m2_ref > 0, "iqa.dist_m2_ref", "must be > 0");
  need(c.iqa.dist_m4_ref > 0, "iqa.dist_m4_ref", "must be > 0");
  need(c.iqa.bounds_a.hi > c.iqa.bounds_a.lo, "iqa.bounds_a_hi", "must exceed iqa.bounds_a_lo");
  need(c.iqa.bounds_b.hi > c.iqa.bounds_b.lo, "iqa.bounds_b_hi", "must exceed iqa.bounds_b_lo");
  need(c.iqa.bounds_c.hi > c.iqa.bounds_c.lo, "iqa.bounds_c_hi", "must exceed iqa.bounds_c_lo");
  need(c.gating.tau1 > 0, "gating.tau1", "must be > 0");
  need(c.gating.tau2 > 0, "gating.tau2", "must be > 0");
  need(c.loss.pref.beta > 0, "loss.beta", "must be > 0");
  need(c.loss.pref.delta >= 0, "loss.delta", "must be >= 0");
  need(c.loss.pref.s_high >= 0 && c.loss.pref.s_high <= 1, "loss.s_high", "must be in [0, 1]");
  need(c.loss.pref.s_low >= 0 && c.loss.pref.s_low <= 1, "loss.s_low", "must be in [0, 1]");
  need(c.loss.pref.s_high > c.loss.pref.s_low, "loss.s_high", "must exceed loss.s_low");
  need(c.loss.coeffs.rec >= 0, "loss.w_rec", "must be >= 0");
  need(c.loss.coeffs.per >= 0, "loss.w_per", "must be >= 0");
  need(c.loss.coeffs.pref >= 0, "loss.w_pref", "must be >= 0");
  need(c.loss.coeffs.cropped >= 0, "loss.w_cropped", "must be >= 0");
  need(c.loss.warmup >= 0, "loss.warmup", "must be >= 0");
  need(c.loss.paired_score >= 0 && c.loss.paired_score <= 1, "loss.paired_score", "must be in [0, 1]");
  need(c.optim.lr > 0, "optim.lr", "must be > 0");
  need(c.optim.beta1 > 0 && c.optim.beta1 < 1, "optim.beta1", "must be in (0, 1)");
  need(c.optim.beta2 > 0 && c.optim.beta2 < 1, "optim.beta2", "must be in (0, 1)");
  need(c.optim.weight_decay >= 0, "optim.weight_decay", "must be >= 0");
  need(c.optim.eps > 0, "optim.eps", "must be > 0");
  need(c.optim.iterations >= 0, "optim.iterations", "must be >= 0");
  need(c.optim.ema_alpha > 0 && c.optim.ema_alpha < 1, "optim.ema_alpha", "must be in (0, 1)");
  need(c.optim.checkpoint_every >= 1, "optim.checkpoint_every", "must be >= 1");
  need(c.data.height >= 16 && c.data.height % 8 == 0, "data.height", "must be a multiple of 8, at least 16");
  need(c.data.width >= 16 && c.data.width % 8 == 0, "data.width", "must be a multiple of 8, at least 16");
  need(c.data.batch >= 1, "data.batch", "must be >= 1");
  need(c.data.unpaired_pool >= 1, "data.unpaired_pool", "must be >= 1");
  need(c.data.eval_count >= 1, "data.eval_count", "must be >= 1");
  return bad;
}

/// Parses `[section]` headers and `key = value` lines; '#' and ';' start comments.
/// Unknown keys, duplicates and malformed values are collected and reported together.
inline RunConfig parse_config_text(const std::string& text, const std::string& origin = "<config>") {
  RunConfig cfg;
  const auto table = config_detail::fields(cfg);
  std::map<std::string, config_detail::Field> lookup(table.begin(), table.end());
  std::map<std::string, int> seen;
  std::vector<std::string> problems;
  std::istringstream in(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find_first_of("#;");
    if (hash != std::string::npos) line.erase(hash);
    line = config_detail::trim(line);
    if (line.empty()) continue;
    const std::string where = origin + ":" + std::to_string(lineno);
    if (line.front() == '[') {
      if (line.back() != ']') {
        problems.push_back(where + ": malformed section header");
        continue;
      }
      section = config_detail::trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      problems.push_back(where + ": expected key = value");
      continue;
    }
    const std::string key = config_detail::trim(line.substr(0, eq));
    const std::string value = config_detail::trim(line.substr(eq + 1));
    const std::string full = section.empty() ? key : section + "." + key;
    const auto it = lookup.find(full);
    if (it == lookup.end()) {
      problems.push_back(where + ": unknown key " + full);
      continue;
    }
    if (const auto prev = seen.find(full); prev != seen.end()) {
      problems.push_back(where + ": duplicate key " + full + " (first set on line " + std::to_string(prev->second) + ")");
      continue;
    }
    seen[full] = lineno;
    if (!config_detail::assign(it->second, value)) problems.push_back(where + ": " + full + ": cannot parse value '" + value + "'");
  }
  if (!problems.empty()) throw ConfigError(problems);
  if (auto bad = validate(cfg); !bad.empty()) throw ConfigError(bad);
  return cfg;
}

inline RunConfig parse_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error(path + ": cannot open configuration file");
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_config_text(ss.str(), path);
}

/// QT_SEED, when set, replaces data.seed.
inline void apply_environment(RunConfig& cfg) {
  if (const char* s = std::getenv("QT_SEED"); s != nullptr && *s != '\0') {
    std::uint64_t v = 0;
    if (!config_detail::parse_number(std::string(s), v)) throw ConfigError({"QT_SEED: cannot parse value '" + std::string(s) + "'"});
    cfg.data.seed = v;
  }
}

/// Effective configuration, one `section.key = value` per line.
inline std::vector<std::string> describe_config(const RunConfig& cfg) {
  RunConfig copy = cfg;
  std::vector<std::string> out;
  for (const auto& [key, field] : config_detail::fields(copy)) out.push_back(key + " = " + config_detail::format(field));
  return out;
}

}  // namespace qualiteacher
