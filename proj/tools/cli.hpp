#pragma once

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "qualiteacher/qualiteacher.hpp"

namespace qualiteacher::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kValidation = 2, kRuntime = 3 };

namespace fs = std::filesystem;

inline fs::path under(const fs::path& workdir, const fs::path& p) { return p.is_absolute() ? p : workdir / p; }

inline RunConfig load_run_config(const fs::path& workdir, const std::string& path) {
  RunConfig cfg = path.empty() ? RunConfig{} : parse_config(under(workdir, path).string());
  apply_environment(cfg);
  return cfg;
}

inline void print_scores(std::ostream& out, const ScoreVector& sv) {
  out << "raw_a\traw_b\traw_c\tnorm_a\tnorm_b_inv\tnorm_c\tS\n";
  out << format_double(sv.a) << '\t' << format_double(sv.b) << '\t' << format_double(sv.c) << '\t' << format_double(sv.a_norm)
      << '\t' << format_double(sv.b_norm) << '\t' << format_double(sv.c_norm) << '\t' << format_double(ensemble(sv)) << '\n';
}

/// Parses argv and runs one subcommand. stdout carries data, stderr diagnostics.
inline int dispatch(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Score-conditioned mean-teacher restoration at desk scale", "qualiteacher"};
  app.require_subcommand(1);
  std::string workdir_arg = ".";
  app.add_option("--workdir", workdir_arg, "Base directory for relative paths");

  std::string config_path, resume_path, ckpt, in_path, out_path, outdir, module, metrics_path;
  double score = 0.7;
  std::int64_t stop_after = -1;

  auto* train = app.add_subcommand("train", "Run (or resume) training");
  train->add_option("--config", config_path, "Configuration file")->required();
  train->add_option("--resume", resume_path, "Checkpoint to resume from");
  train->add_option("--stop-after", stop_after, "Stop once this iteration is reached (writes a checkpoint)");

  auto* infer_cmd = app.add_subcommand("infer", "Restore one image at a grid score");
  infer_cmd->add_option("--ckpt", ckpt, "Checkpoint")->required();
  infer_cmd->add_option("--in", in_path, "Input image")->required();
  infer_cmd->add_option("--score", score, "Conditioning score on the grid {0.0, ..., 0.7}");
  infer_cmd->add_option("--out", out_path, "Output image")->required();

  auto* sweep_cmd = app.add_subcommand("sweep", "Restore at every bin 0..7");
  sweep_cmd->add_option("--ckpt", ckpt, "Checkpoint")->required();
  sweep_cmd->add_option("--in", in_path, "Input image")->required();
  sweep_cmd->add_option("--outdir", outdir, "Directory for bin_<k> outputs")->required();

  auto* score_cmd = app.add_subcommand("score", "Print the three scorer outputs and the ensemble score");
  score_cmd->add_option("--in", in_path, "Input image")->required();
  score_cmd->add_option("--config", config_path, "Configuration file (for [iqa] overrides)");

  auto* bank_cmd = app.add_subcommand("bank-dump", "List banked pseudo-labels");
  bank_cmd->add_option("--ckpt", ckpt, "Checkpoint")->required();

  auto* grad_cmd = app.add_subcommand("gradcheck", "Run finite-difference gradient suites");
  grad_cmd->add_option("--module", module, "Restrict to one module")->check(CLI::IsMember(gradcheck_modules()));

  auto* eval_cmd = app.add_subcommand("evaluate", "Score-sweep evaluation on the held-out set");
  eval_cmd->add_option("--ckpt", ckpt, "Checkpoint")->required();
  eval_cmd->add_option("--config", config_path, "Configuration used for training");
  eval_cmd->add_option("--outdir", outdir, "Directory for report.txt and per_image.tsv")->required();
  eval_cmd->add_option("--metrics", metrics_path, "Metrics log for the bank trajectory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << (e.get_exit_code() == 0 ? "" : std::string(e.what()) + "\n") << app.help();
    return kUsage;
  }

  const fs::path workdir = workdir_arg;
  try {
    if (*train) {
      const RunConfig cfg = load_run_config(workdir, config_path);
      TrainOptions opt;
      opt.outdir = under(workdir, cfg.data.outdir);
      if (!resume_path.empty()) opt.resume = under(workdir, resume_path);
      if (stop_after >= 0) opt.stop_after = stop_after;
      opt.progress = &err;
      const TrainResult r = train_loop(cfg, opt);
      out << (r.completed ? r.final_checkpoint : checkpoint_path(opt.outdir, r.state.iteration)).string() << '\n';
    } else if (*infer_cmd) {
      const TrainerState st = load_checkpoint(under(workdir, ckpt));
      const Image img = load_image(under(workdir, in_path));
      save_image(infer(st.student, img, score), under(workdir, out_path));
    } else if (*sweep_cmd) {
      const TrainerState st = load_checkpoint(under(workdir, ckpt));
      const Image img = load_image(under(workdir, in_path));
      const fs::path dir = under(workdir, outdir);
      fs::create_directories(dir);
      out << "bin\tS\tfile\n";
      for (const auto& e : sweep(st.student, img, IqaConfig{})) {
        const fs::path file = dir / ("bin_" + std::to_string(e.bin) + (img.channels() == 1 ? ".pgm" : ".ppm"));
        save_image(e.image, file);
        out << e.bin << '\t' << format_double(e.score) << '\t' << file.string() << '\n';
      }
    } else if (*score_cmd) {
      const RunConfig cfg = load_run_config(workdir, config_path);
      print_scores(out, score_image(load_image(under(workdir, in_path)), cfg.iqa));
    } else if (*bank_cmd) {
      const TrainerState st = load_checkpoint(under(workdir, ckpt));
      out << "input_id\taug_id\tcreated_at\ta_norm\tb_inv_norm\tc_norm\tS\ts_bin\n";
      for (const auto& [id, labels] : st.bank.all())
        for (const auto& pl : labels)
          out << id << '\t' << pl.aug_id << '\t' << pl.created_at << '\t' << format_double(pl.scores.a_norm) << '\t'
              << format_double(pl.scores.b_norm) << '\t' << format_double(pl.scores.c_norm) << '\t' << format_double(pl.ensemble)
              << '\t' << score_bin(pl.ensemble) << '\n';
    } else if (*grad_cmd) {
      bool all = true;
      for (const auto& r : run_gradchecks(module)) {
        out << r.name << '\t' << r.checks << '\t' << format_double(r.worst) << '\t' << (r.passed ? "PASS" : "FAIL") << '\n';
        all = all && r.passed;
      }
      return all ? kOk : kRuntime;
    } else if (*eval_cmd) {
      const RunConfig cfg = load_run_config(workdir, config_path);
      const TrainerState st = load_checkpoint(under(workdir, ckpt));
      EvalReport rep = evaluate(st, cfg);
      if (!metrics_path.empty()) rep.bank_mean_trajectory = bank_trajectory(read_metrics(under(workdir, metrics_path)));
      const fs::path dir = under(workdir, outdir);
      write_report(rep, dir);
      std::ifstream kv(dir / "report.txt");
      out << kv.rdbuf();
    }
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kValidation;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << '\n';
    return kValidation;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kRuntime;
  }
  return kOk;
}

}  // namespace qualiteacher::cli
