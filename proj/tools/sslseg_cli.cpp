// sslseg: command-line front end for data generation, the training stages,
// evaluation, gradient checking and the experiment matrix.

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "sslseg/config.hpp"
#include "sslseg/dataset.hpp"
#include "sslseg/errors.hpp"
#include "sslseg/eval.hpp"
#include "sslseg/network.hpp"
#include "sslseg/objectives.hpp"
#include "sslseg/simd.hpp"
#include "sslseg/synth.hpp"
#include "sslseg/trainer.hpp"

namespace fs = std::filesystem;
using namespace sslseg;

namespace {

enum class Level { error, warn, info, debug };
Level g_level = Level::info;

void log(Level lvl, const std::string& msg) {
  static const char* names[] = {"error", "warn", "info", "debug"};
  if (lvl > g_level) return;
  std::cerr << "[" << names[static_cast<int>(lvl)] << "] " << msg << '\n';
}

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = ".";
  std::string log_level = "info";
  std::string isa;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config, "Experiment config (JSON)");
  app->add_option("--seed", c.seed, "Seed; overrides the config's seed list");
  app->add_option("--out", c.out, "Output directory");
  app->add_option("--log-level", c.log_level, "error, warn, info or debug")
      ->check(CLI::IsMember({"error", "warn", "info", "debug"}));
  app->add_option("--isa", c.isa, "Kernel variant (scalar or avx2)")->check(CLI::IsMember({"scalar", "avx2"}));
}

ExperimentConfig setup(const Common& c) {
  if (c.log_level == "error") g_level = Level::error;
  else if (c.log_level == "warn") g_level = Level::warn;
  else if (c.log_level == "debug") g_level = Level::debug;
  else g_level = Level::info;
  if (c.isa == "scalar") simd::set_isa(simd::Isa::scalar);
  if (c.isa == "avx2") simd::set_isa(simd::Isa::avx2);
  ExperimentConfig cfg = c.config.empty() ? ExperimentConfig{} : load_config(c.config);
  if (c.config.empty()) cfg.validate();
  if (c.seed) cfg.seeds = {*c.seed};
  fs::create_directories(c.out);
  log(Level::debug, "kernels: " + std::string(simd::isa_name(simd::active_isa())));
  return cfg;
}

StageOptions stage_options(const ExperimentConfig& cfg, const fs::path& out, const std::string& log_name,
                           int stop_after, const std::optional<Checkpoint>& resume) {
  StageOptions o;
  o.seed = cfg.seeds.front();
  o.stop_after = stop_after;
  o.resume = resume ? &*resume : nullptr;
  o.log_path = out / log_name;
  return o;
}

void save_stage(const StageResult& r, const fs::path& out, const std::string& name) {
  save_checkpoint(r.model, out / (name + ".ckpt"));
  save_checkpoint(r.state, out / (name + ".state"));
  const auto& last = r.log.empty() ? LogRow{} : r.log.back();
  log(Level::info, name + ": " + std::to_string(last.iteration) + " iterations, final loss " +
                       std::to_string(last.loss) + (r.complete ? "" : " (stopped early)"));
}

void write_report(const DiceReport& rep, const fs::path& path) {
  std::ofstream f(path);
  f << "volume";
  for (std::size_t c = 0; c < rep.per_class.size(); ++c) f << ",dsc_c" << c + 1;
  f << ",mean_dsc\n";
  f.precision(10);
  for (const auto& v : rep.volumes) {
    f << v.id;
    for (double d : v.per_class) f << ',' << d;
    f << ',' << v.mean << '\n';
  }
  f << "mean";
  for (double d : rep.per_class) f << ',' << d;
  f << ',' << rep.mean << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Contrastive pre-training for volumetric segmentation"};
  app.require_subcommand(1);

  Common common;
  int stop_after = -1;
  std::string resume_path, encoder_path, pretrained_path, checkpoint_path;
  bool dump_plan = false;
  int threads = 1;

  auto* gen = app.add_subcommand("gen-data", "Synthesize the phantom dataset and write a manifest");
  add_common(gen, common);

  auto* pg = app.add_subcommand("pretrain-global", "Pre-train encoder + g1 with the global loss");
  auto* pl = app.add_subcommand("pretrain-local", "Pre-train the partial decoder + g2 with the local loss");
  auto* jp = app.add_subcommand("joint-pretrain", "Pre-train with L_g + lambda_l * L_l");
  auto* ft = app.add_subcommand("finetune", "Fine-tune the full network on labelled volumes");
  for (auto* s : {pg, pl, jp, ft}) {
    add_common(s, common);
    s->add_option("--stop-after", stop_after, "Stop after this many iterations (for resuming later)");
    s->add_option("--resume", resume_path, "Training state (.state) to continue from")->check(CLI::ExistingFile);
  }
  pg->add_flag("--dump-plan", dump_plan, "Print the first batch plan and exit");
  pl->add_flag("--dump-plan", dump_plan, "Print the first region plan and exit");
  pl->add_option("--encoder", encoder_path, "Checkpoint holding a pre-trained encoder")
      ->required()
      ->check(CLI::ExistingFile);
  ft->add_option("--pretrained", pretrained_path, "Pre-trained checkpoint; random init when omitted")
      ->check(CLI::ExistingFile);

  auto* ev = app.add_subcommand("evaluate", "Dice of a model checkpoint on the test split");
  add_common(ev, common);
  ev->add_option("--checkpoint", checkpoint_path, "Model checkpoint")->required()->check(CLI::ExistingFile);

  auto* gc = app.add_subcommand("gradcheck", "Compare analytic and finite-difference gradients");
  add_common(gc, common);

  auto* rm = app.add_subcommand("run-matrix", "Run every arm x train size x seed and write matrix.csv");
  add_common(rm, common);
  rm->add_option("--threads", threads, "Seeds run concurrently")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    const ExperimentConfig cfg = setup(common);
    const fs::path out = common.out;
    std::optional<Checkpoint> resume;
    if (!resume_path.empty()) resume = load_checkpoint(resume_path);

    if (*gen) {
      PhantomSpec spec = cfg.dataset.phantom;
      if (common.seed) spec.seed = *common.seed;
      auto all = generate_dataset(spec);
      const auto n_pre = static_cast<std::size_t>(std::min<int>(cfg.dataset.n_pre, spec.num_volumes));
      std::vector<Volume> pre(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(n_pre));
      std::vector<Volume> test(all.begin() + static_cast<std::ptrdiff_t>(n_pre), all.end());
      write_manifest(out, pre, test);
      log(Level::info, "wrote " + std::to_string(all.size()) + " volumes and " + (out / "manifest.json").string());
      return 0;
    }
    if (*gc) {
      bool ok = true;
      for (const auto& s : standard_grad_checks(cfg.seeds.front())) {
        const auto& w = s.report.entries[s.report.worst];
        std::printf("%-13s entries=%zu max_rel_error=%.3e worst=%s[%zu] %s\n", s.name.c_str(),
                    s.report.entries.size(), s.report.max_rel_error, w.parameter.c_str(), w.index,
                    s.report.passed ? "PASS" : "FAIL");
        ok = ok && s.report.passed;
      }
      return ok ? 0 : 4;
    }

    const Dataset data = load_dataset(cfg);
    log(Level::info, "dataset: " + std::to_string(data.pre.size()) + " pre-training, " +
                         std::to_string(data.test.size()) + " test volumes");

    if (*pg) {
      if (dump_plan) {
        Rng rng = Rng::derive(cfg.seeds.front(), static_cast<std::uint64_t>(Stream::global));
        std::cout << to_string(sample_global_batch(cfg, cfg.global_strategy, data, rng).plan);
        return 0;
      }
      save_stage(pretrain_global(cfg, data, stage_options(cfg, out, "pretrain_global.csv", stop_after, resume)), out,
                 "pretrain_global");
    } else if (*pl) {
      if (dump_plan) {
        Rng rng = Rng::derive(cfg.seeds.front(), static_cast<std::uint64_t>(Stream::local));
        std::cout << to_string(sample_local_batch(cfg, cfg.local_strategy, data, rng).plan);
        return 0;
      }
      const Checkpoint enc = load_checkpoint(encoder_path);
      save_stage(pretrain_local(cfg, data, enc, stage_options(cfg, out, "pretrain_local.csv", stop_after, resume)),
                 out, "pretrain_local");
    } else if (*jp) {
      save_stage(joint_pretrain(cfg, data, stage_options(cfg, out, "joint_pretrain.csv", stop_after, resume)), out,
                 "joint_pretrain");
    } else if (*ft) {
      std::optional<Checkpoint> pre;
      if (!pretrained_path.empty()) pre = load_checkpoint(pretrained_path);
      const Split split = sample_split(cfg.dataset.n_pre, cfg.dataset.n_tr, cfg.dataset.n_vl,
                                       stream_seed(cfg.seeds.front(), Stream::split));
      auto r = finetune(cfg, data, split, pre ? &*pre : nullptr,
                        stage_options(cfg, out, "finetune.csv", stop_after, resume));
      save_stage(r, out, "finetune");
      log(Level::info, "best validation DSC " + std::to_string(r.best_val_dice) + " at iteration " +
                           std::to_string(r.best_iteration));
    } else if (*ev) {
      const DiceReport rep = evaluate(load_checkpoint(checkpoint_path), data.test, cfg.seeds.front());
      write_report(rep, out / "dice.csv");
      std::printf("mean_dsc %.6f\n", rep.mean);
    } else if (*rm) {
      MatrixOptions mo;
      mo.threads = threads;
      mo.out_dir = out;
      mo.progress = [](const std::string& m) { log(Level::info, m); };
      const auto t0 = std::chrono::steady_clock::now();
      const ExperimentMatrix m = run_matrix(cfg, data, mo);
      std::cout << m.csv();
      log(Level::info, "matrix finished in " +
                           std::to_string(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()) +
                           " s");
    }
    return 0;
  } catch (const Error& e) {
    log(Level::error, e.what());
    return e.exit_code();
  } catch (const std::exception& e) {
    log(Level::error, e.what());
    return 1;
  }
}
