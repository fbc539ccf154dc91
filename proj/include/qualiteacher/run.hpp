#pragma once

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "qualiteacher/checkpoint.hpp"
#include "qualiteacher/config.hpp"
#include "qualiteacher/trainer.hpp"

namespace qualiteacher {

inline constexpr const char* kMetricsColumns =
    "iter\trec\tper\tpref_l1\tpref_l2\tpref_reg\tcropped\ttotal\tS_high\tS_low\tbank_mean_S";

struct MetricsRow {
  std::int64_t iter = 0;
  double rec = 0, per = 0, pref_l1 = 0, pref_l2 = 0, pref_reg = 0, cropped = 0, total = 0, s_high = 0, s_low = 0, bank_mean = 0;
};

inline std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

inline std::string format_metrics(const MetricsRow& r) {
  std::string s = std::to_string(r.iter);
  for (double v : {r.rec, r.per, r.pref_l1, r.pref_l2, r.pref_reg, r.cropped, r.total, r.s_high, r.s_low, r.bank_mean})
    s += "\t" + format_double(v);
  return s;
}

/// Parses the non-comment lines of a metrics log.
inline std::vector<MetricsRow> read_metrics(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error(path.string() + ": cannot open metrics log");
  std::vector<MetricsRow> rows;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty() || line.front() == '#') continue;
    std::istringstream in(line);
    MetricsRow r;
    in >> r.iter >> r.rec >> r.per >> r.pref_l1 >> r.pref_l2 >> r.pref_reg >> r.cropped >> r.total >> r.s_high >> r.s_low >> r.bank_mean;
    if (!in) throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": malformed metrics line");
    rows.push_back(r);
  }
  return rows;
}

struct TrainOptions {
  std::filesystem::path outdir = "run";
  std::optional<std::filesystem::path> resume;
  std::optional<std::int64_t> stop_after;  // halt (with a checkpoint) once this iteration is reached
  std::ostream* progress = nullptr;
};

struct TrainResult {
  TrainerState state;
  std::filesystem::path final_checkpoint;
  std::filesystem::path metrics;
  bool completed = false;
};

inline std::filesystem::path checkpoint_path(const std::filesystem::path& dir, std::int64_t iteration) {
  return dir / ("ckpt_" + std::to_string(iteration) + ".qtck");
}

/// Runs (or resumes) training up to optim.iterations, writing periodic checkpoints,
/// `final.qtck`, and `metrics.tsv` (config echo as '#' lines, then one line per iteration).
inline TrainResult train_loop(const RunConfig& cfg, const TrainOptions& opt) {
  namespace fs = std::filesystem;
  fs::create_directories(opt.outdir);
  TrainResult res;
  res.metrics = opt.outdir / "metrics.tsv";
  res.final_checkpoint = opt.outdir / "final.qtck";

  if (opt.resume) {
    res.state = load_checkpoint(*opt.resume);
    if (!(res.state.student.arch() == cfg.model))
      throw std::runtime_error(opt.resume->string() + ": checkpoint architecture does not match the configuration");
    if (res.state.iteration > cfg.optim.iterations)
      throw std::runtime_error(opt.resume->string() + ": checkpoint is past the configured iteration count");
  } else {
    res.state = initial_state(cfg);
  }
  TrainerState& st = res.state;

  // Keep the header and any lines up to the resume point; later lines belong to the abandoned tail.
  std::vector<std::string> kept;
  if (opt.resume && fs::exists(res.metrics)) {
    std::ifstream in(res.metrics);
    std::string line;
    while (std::getline(in, line)) {
      if (!line.empty() && line.front() != '#') {
        std::int64_t it = 0;
        std::from_chars(line.data(), line.data() + line.size(), it);
        if (it > st.iteration) continue;
      }
      kept.push_back(line);
    }
  } else {
    for (const auto& l : describe_config(cfg)) kept.push_back("# " + l);
    kept.push_back(std::string("# ") + kMetricsColumns);
  }
  std::ofstream log(res.metrics, std::ios::trunc);
  if (!log) throw std::runtime_error(res.metrics.string() + ": cannot open metrics log for writing");
  for (const auto& l : kept) log << l << '\n';
  log.flush();

  const auto pool = unpaired_pool(cfg);
  while (st.iteration < cfg.optim.iterations) {
    if (opt.stop_after && st.iteration >= *opt.stop_after) break;
    const StepResult r = train_step(st, cfg, pool);
    const MetricsRow row{st.iteration, r.loss.rec, r.loss.per, r.loss.pref_l1, r.loss.pref_l2, r.loss.pref_reg, r.loss.cropped,
                         r.loss.total, r.loss.score_high, r.loss.score_low, r.bank_mean};
    log << format_metrics(row) << '\n';
    if (!log) throw std::runtime_error(res.metrics.string() + ": write failed");
    if (st.iteration % cfg.optim.checkpoint_every == 0) {
      log.flush();
      save_checkpoint(checkpoint_path(opt.outdir, st.iteration), st);
    }
    if (opt.progress != nullptr && (st.iteration % 100 == 0 || st.iteration == cfg.optim.iterations))
      *opt.progress << "iter " << st.iteration << " total " << r.loss.total << " S_high " << r.loss.score_high << " S_low "
                    << r.loss.score_low << " bank " << r.bank_mean << '\n';
  }
  log.flush();
  res.completed = st.iteration >= cfg.optim.iterations;
  if (res.completed) {
    save_checkpoint(res.final_checkpoint, st);
  } else if (st.iteration % cfg.optim.checkpoint_every != 0) {
    save_checkpoint(checkpoint_path(opt.outdir, st.iteration), st);
  }
  return res;
}

}  // namespace qualiteacher
