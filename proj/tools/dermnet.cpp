// dermnet — skin-lesion classification pipeline CLI.
//
// Subcommands: prepare, train, resume, evaluate, augment-preview,
// gen-synthetic. A single JSON run config drives everything; a handful of
// flags override it (flags win). Every command echoes its resolved config and
// a run_status.json into the output directory and exits nonzero on any error,
// printing one machine-readable JSON line to stderr.

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "dermnet/pipeline.hpp"

namespace {

struct CommonFlags {
  std::string config_path;
  std::string out_override;
  std::optional<std::uint64_t> seed_split, seed_augment, seed_init;
  std::optional<int> workers;
};

void add_common(CLI::App* cmd, CommonFlags& f, bool config_required = true) {
  auto* opt = cmd->add_option("--config", f.config_path, "run config JSON");
  if (config_required) opt->required();
  cmd->add_option("--out", f.out_override, "output directory (overrides config)");
  cmd->add_option("--seed-split", f.seed_split, "split seed override");
  cmd->add_option("--seed-augment", f.seed_augment, "augment seed override");
  cmd->add_option("--seed-init", f.seed_init, "parameter init seed override");
  cmd->add_option("--workers", f.workers, "worker thread count override");
}

dermnet::RunConfig resolve_config(const CommonFlags& f) {
  dermnet::RunConfig cfg = dermnet::load_run_config(f.config_path);
  if (!f.out_override.empty()) cfg.output_dir = f.out_override;
  if (f.seed_split) cfg.split_seed = *f.seed_split;
  if (f.seed_augment) cfg.augment.seed = *f.seed_augment;
  if (f.seed_init) cfg.network.seed = *f.seed_init;
  if (f.workers) cfg.workers = *f.workers;
  return cfg;
}

void print_error_line(const dermnet::Error& e) {
  dermnet::json j{{"error", dermnet::err_name(e.kind)}, {"message", e.what()}};
  if (!e.file.empty()) j["file"] = e.file;
  if (e.line >= 0) j["line"] = e.line;
  std::cerr << j.dump() << std::endl;
}

/// Locks the output dir, echoes the config, runs the command body, and
/// records the outcome; on error the status file says what failed.
template <typename Fn>
int run_guarded(const dermnet::RunConfig& cfg, const std::string& command, Fn&& body) {
  using namespace dermnet;
  std::optional<OutputLock> lock;
  try {
    lock.emplace(cfg.output_dir);
    echo_config(cfg);
    RunStatus st = body();
    write_run_status(cfg.output_dir, st);
    std::cout << command << ": ok" << std::endl;
    return 0;
  } catch (const Error& e) {
    print_error_line(e);
    if (lock) {
      RunStatus st;
      st.command = command;
      st.status = "error";
      st.error = {{"error", err_name(e.kind)}, {"message", e.what()}};
      try {
        write_run_status(cfg.output_dir, st);
      } catch (...) {
      }
    }
    return 1;
  } catch (const std::exception& e) {
    std::cerr << dermnet::json{{"error", "Internal"}, {"message", e.what()}}.dump()
              << std::endl;
    return 1;
  }
}

}  // namespace

int main(int argc, char** argv) {
  using namespace dermnet;
  CLI::App app{"skin-lesion classification pipeline"};
  app.require_subcommand(1);

  CommonFlags prep_f, train_f, resume_f, eval_f, prev_f;
  std::string checkpoint_path, listing_path, preview_image_id;
  int preview_n = 8;

  auto* prepare = app.add_subcommand("prepare", "split, cap, and weigh the dataset");
  add_common(prepare, prep_f);

  auto* train = app.add_subcommand("train", "phase-1 training with early stopping");
  add_common(train, train_f);

  auto* resume = app.add_subcommand("resume", "continue from the best checkpoint");
  add_common(resume, resume_f);
  resume->add_option("--checkpoint", checkpoint_path, "checkpoint to resume from")
      ->required();

  auto* evaluate = app.add_subcommand("evaluate", "metrics for a checkpoint + listing");
  add_common(evaluate, eval_f);
  evaluate->add_option("--checkpoint", checkpoint_path, "checkpoint to evaluate")
      ->required();
  evaluate->add_option("--listing", listing_path, "listing CSV (image_id,label_code)")
      ->required();

  auto* preview = app.add_subcommand("augment-preview", "sample augmentations of one image");
  add_common(preview, prev_f);
  preview->add_option("--image-id", preview_image_id, "image id to augment")->required();
  preview->add_option("-n,--count", preview_n, "number of samples");

  // gen-synthetic has no run config; it writes a dataset directory.
  std::string gen_out;
  std::string gen_counts = "1200,450,300,150,100,60,40";
  std::uint64_t gen_seed = 0;
  int gen_size = 100;
  auto* gen = app.add_subcommand("gen-synthetic", "write a synthetic shape dataset");
  gen->add_option("--out", gen_out, "dataset directory")->required();
  gen->add_option("--counts", gen_counts, "7 comma-separated class counts");
  gen->add_option("--seed", gen_seed, "generator seed");
  gen->add_option("--image-size", gen_size, "square image side in pixels");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      SyntheticConfig scfg;
      const auto fields = csv_split(gen_counts);
      if (fields.size() != 7)
        raise(Err::BadConfig, "--counts needs exactly 7 values");
      for (std::size_t i = 0; i < 7; ++i)
        scfg.counts[i] = std::stoll(fields[i]);
      scfg.seed = gen_seed;
      scfg.height = scfg.width = gen_size;
      const std::string manifest = gen_synthetic(gen_out, scfg);
      std::cout << "gen-synthetic: wrote " << manifest << std::endl;
      return 0;
    }
  } catch (const Error& e) {
    print_error_line(e);
    return 1;
  }

  try {
    if (prepare->parsed()) {
      const RunConfig cfg = resolve_config(prep_f);
      return run_guarded(cfg, "prepare", [&] { return cmd_prepare(cfg); });
    }
    if (train->parsed()) {
      const RunConfig cfg = resolve_config(train_f);
      return run_guarded(cfg, "train", [&] { return cmd_train(cfg); });
    }
    if (resume->parsed()) {
      const RunConfig cfg = resolve_config(resume_f);
      return run_guarded(cfg, "resume",
                         [&] { return cmd_resume(cfg, checkpoint_path); });
    }
    if (evaluate->parsed()) {
      const RunConfig cfg = resolve_config(eval_f);
      return run_guarded(
          cfg, "evaluate",
          [&] { return cmd_evaluate(cfg, checkpoint_path, listing_path); });
    }
    if (preview->parsed()) {
      const RunConfig cfg = resolve_config(prev_f);
      return run_guarded(cfg, "augment-preview", [&] {
        return cmd_augment_preview(cfg, preview_image_id, preview_n);
      });
    }
  } catch (const Error& e) {
    print_error_line(e);
    return 1;
  } catch (const std::exception& e) {
    std::cerr << dermnet::json{{"error", "Internal"}, {"message", e.what()}}.dump()
              << std::endl;
    return 1;
  }
  return 2;
}
