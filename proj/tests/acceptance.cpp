// Acceptance harness: one PASS/FAIL line per criterion.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "oracles.hpp"
#include "sslseg/checkpoint.hpp"
#include "sslseg/dataset.hpp"
#include "sslseg/errors.hpp"
#include "sslseg/eval.hpp"
#include "sslseg/objectives.hpp"
#include "sslseg/trainer.hpp"

using namespace sslseg;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

DatasetLayout layout(int volumes, int depth, int S) {
  DatasetLayout l;
  l.depths.assign(static_cast<std::size_t>(volumes), depth);
  l.partitions = S;
  return l;
}

// 1. Loss-oracle equivalence.
Outcome oracle_equivalence() {
  const auto t0 = Clock::now();
  double worst = 0;
  for (std::uint64_t s = 0; s < 100; ++s) {
    const auto e = oracle::random_case(0xacce55 + s);
    worst = std::max({worst, e.global, e.local});
  }
  const double t = seconds_since(t0);
  return {worst < 1e-10 && t < 10.0, "max_rel_error=" + fmt("%.3e", worst) + " runtime_s=" + fmt("%.2f", t)};
}

// 2. Closed-form spot checks.
Outcome closed_forms() {
  const LossConfig cfg{0.1};
  const std::vector<double> x{1, 0}, y{0, 1};
  double worst_equal = 0;
  for (int n : {1, 4, 18, 38}) {
    const std::vector<double> u{0.6, 0.8};
    const std::vector<std::span<const double>> negs(static_cast<std::size_t>(n), std::span<const double>(u));
    worst_equal = std::max(worst_equal, std::abs(global_pair_loss(u, u, negs, cfg) - std::log1p(n)));
  }
  const double minus = std::abs(global_pair_loss(x, x, {y}, cfg) - std::log1p(std::exp(-10.0)));
  const double plus = std::abs(global_pair_loss(x, y, {x}, cfg) - std::log1p(std::exp(10.0)));
  return {worst_equal < 1e-12 && minus < 1e-9 && plus < 1e-9,
          "equal_logit_err=" + fmt("%.1e", worst_equal) + " e-10_err=" + fmt("%.1e", minus) +
              " e+10_err=" + fmt("%.1e", plus)};
}

// 3. Gradient checks.
Outcome gradient_checks() {
  const auto t0 = Clock::now();
  bool ok = true;
  std::string detail;
  for (const auto& c : standard_grad_checks(1)) {
    ok = ok && c.report.passed && c.report.entries.size() >= 200 && c.report.max_rel_error < 1e-4;
    detail += c.name + "=" + fmt("%.2e", c.report.max_rel_error) + "/" + std::to_string(c.report.entries.size()) + " ";
  }
  const double t = seconds_since(t0);
  return {ok && t < 120.0, detail + "runtime_s=" + fmt("%.2f", t)};
}

// 4. Set-cardinality properties.
Outcome cardinalities() {
  long checks = 0, failures = 0;
  auto expect = [&](bool b) {
    ++checks;
    if (!b) ++failures;
  };
  for (int m = 1; m <= 4; ++m) {
    for (int S = 2; S <= 6; ++S) {
      Rng r1(static_cast<std::uint64_t>(m * 31 + S)), r2(static_cast<std::uint64_t>(m * 31 + S));
      const auto l = layout(6, 12, S);
      const auto gdm = compose_global_GDminus(l, m, r1);
      const auto gd = compose_global_GD(l, m, r2);
      expect(gdm.positives.size() == static_cast<std::size_t>(3 * m * S));
      expect(gd.positives.size() == static_cast<std::size_t>(3 * m * S + 2 * (m * (m - 1) / 2) * S));
      for (const auto* plan : {&gdm, &gd}) {
        for (std::size_t p = 0; p < plan->positives.size(); ++p) {
          const auto& neg = plan->negatives_of[p];
          expect(neg.size() == static_cast<std::size_t>(3 * m * (S - 1)));
          const int s = plan->items[static_cast<std::size_t>(plan->positives[p].first)].partition;
          for (int k : neg) expect(plan->items[static_cast<std::size_t>(k)].partition != s);
          expect(std::find(neg.begin(), neg.end(), plan->positives[p].first) == neg.end());
          expect(std::find(neg.begin(), neg.end(), plan->positives[p].second) == neg.end());
        }
      }
      if (m == 1) expect(gd == gdm);
      // G^R with N = 3mS images.
      Rng r3(static_cast<std::uint64_t>(m * 131 + S));
      const int N = 3 * m * S;
      const auto gr = compose_global_GR(layout(6, 12, S), N, r3);
      for (const auto& neg : gr.negatives_of) expect(neg.size() == static_cast<std::size_t>(2 * N - 2));
    }
  }
  for (int A = 2; A <= 16; ++A) {
    Rng rng(static_cast<std::uint64_t>(A));
    const auto grid = make_region_grid(16, 16, 4, 4, A, rng);
    const auto lr = compose_local_LR(2, grid);
    expect(lr.positives.size() == static_cast<std::size_t>(2 * A));
    for (const auto& neg : lr.negatives_of) expect(neg.size() == static_cast<std::size_t>(2 * (A - 1)));
    const auto ld = compose_local_LD({{0, 0}, {1, 0}}, grid);
    for (std::size_t p = 0; p < ld.positives.size(); ++p) {
      const bool cross = ld.positives[p].map_a / 3 != ld.positives[p].map_b / 3;
      expect(ld.negatives_of[p].size() == static_cast<std::size_t>((cross ? 4 : 2) * (A - 1)));
    }
  }
  return {failures == 0, std::to_string(checks) + " checks, " + std::to_string(failures) + " failures"};
}

// 5. Invariance suite.
Outcome invariances() {
  Rng rng(5);
  double scale_g = 0, scale_l = 0, perm = 0;
  for (int trial = 0; trial < 10; ++trial) {
    const auto plan = compose_global_GD(layout(4, 10, 3), 3, rng);
    Matrix reps(static_cast<int>(plan.items.size()), 8);
    for (double& v : reps.data) v = rng.normal();
    const double base = global_loss(reps, plan, LossConfig{});
    const auto grid = make_region_grid(8, 8, 4, 2, 8, rng);
    const auto rplan = compose_local_LD({{0, 0}, {1, 0}, {2, 1}, {0, 1}}, grid);
    FeatureMaps maps(rplan.num_maps, 4, 8, 8);
    for (double& v : maps.data) v = rng.normal();
    const double lbase = local_loss(maps, rplan, LossConfig{});
    for (double c : {0.1, 3.7, 100.0}) {
      Matrix r2 = reps;
      for (double& v : r2.data) v *= c;
      scale_g = std::max(scale_g, std::abs(global_loss(r2, plan, LossConfig{}) - base));
      FeatureMaps m2 = maps;
      for (double& v : m2.data) v *= c;
      scale_l = std::max(scale_l, std::abs(local_loss(m2, rplan, LossConfig{}) - lbase));
    }
    auto p2 = plan;
    for (auto& n : p2.negatives_of) rng.shuffle(n);
    perm = std::max(perm, std::abs(global_loss(reps, p2, LossConfig{}) - base));
    auto rp2 = rplan;
    for (auto& n : rp2.negatives_of) rng.shuffle(n);
    for (auto& n : rp2.negatives_of_reversed) rng.shuffle(n);
    perm = std::max(perm, std::abs(local_loss(maps, rp2, LossConfig{}) - lbase));
  }
  bool dice_ok = true;
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<std::uint8_t> p(200), g(200), pp(200), gg(200);
    for (auto& v : p) v = static_cast<std::uint8_t>(rng.below_int(4));
    for (auto& v : g) v = static_cast<std::uint8_t>(rng.below_int(4));
    std::vector<std::uint8_t> perm_map{0, 1, 2, 3};
    rng.shuffle(perm_map);
    for (std::size_t i = 0; i < 200; ++i) {
      pp[i] = perm_map[p[i]];
      gg[i] = perm_map[g[i]];
    }
    for (int c = 0; c < 4; ++c)
      dice_ok = dice_ok && dice(p, g, c) == dice(pp, gg, perm_map[static_cast<std::size_t>(c)]) &&
                dice(p, g, c) == dice(g, p, c);
  }
  return {scale_g < 1e-10 && scale_l < 1e-10 && perm < 1e-12 && dice_ok,
          "scale_g=" + fmt("%.1e", scale_g) + " scale_l=" + fmt("%.1e", scale_l) + " perm=" + fmt("%.1e", perm) +
              " dice_relabel=" + (dice_ok ? "exact" : "broken")};
}

ExperimentConfig small_stage_config() {
  ExperimentConfig c = desk_config();
  c.dataset.phantom.num_volumes = 8;
  c.dataset.n_pre = 6;
  c.dataset.n_ts = 2;
  c.iterations = 10;
  c.finetune_iterations = 10;
  c.validation_interval = 5;
  c.seeds = {7};
  return c;
}

StageOptions with_seed(std::uint64_t s) {
  StageOptions o;
  o.seed = s;
  return o;
}

// 6. Determinism and checkpointing.
Outcome determinism() {
  const auto cfg = small_stage_config();
  const Dataset data = load_dataset(cfg);
  const Split split = sample_split(cfg.dataset.n_pre, 1, 1, 7);
  std::vector<std::string> bad;
  auto same = [](const Checkpoint& a, const Checkpoint& b) { return encode_checkpoint(a) == encode_checkpoint(b); };

  const auto g1 = pretrain_global(cfg, data, with_seed(7)), g2 = pretrain_global(cfg, data, with_seed(7));
  if (!same(g1.model, g2.model) || !same(g1.state, g2.state)) bad.push_back("global-repeat");
  const auto l1 = pretrain_local(cfg, data, g1.model, with_seed(7));
  const auto l2 = pretrain_local(cfg, data, g2.model, with_seed(7));
  if (!same(l1.model, l2.model)) bad.push_back("local-repeat");
  const auto f1 = finetune(cfg, data, split, &l1.model, with_seed(7));
  const auto f2 = finetune(cfg, data, split, &l2.model, with_seed(7));
  if (!same(f1.model, f2.model)) bad.push_back("finetune-repeat");

  auto resumed = [&](const std::function<StageResult(const StageOptions&)>& stage, int cut) {
    StageOptions first = with_seed(7);
    first.stop_after = cut;
    const auto part = stage(first);
    const Checkpoint restored = decode_checkpoint(encode_checkpoint(part.state));
    StageOptions second = with_seed(7);
    second.resume = &restored;
    return stage(second);
  };
  if (!same(resumed([&](const StageOptions& o) { return pretrain_global(cfg, data, o); }, 4).model, g1.model))
    bad.push_back("global-resume");
  if (!same(resumed([&](const StageOptions& o) { return pretrain_local(cfg, data, g1.model, o); }, 3).model,
            l1.model))
    bad.push_back("local-resume");
  if (!same(resumed([&](const StageOptions& o) { return finetune(cfg, data, split, &l1.model, o); }, 7).model,
            f1.model))
    bad.push_back("finetune-resume");
  const auto j1 = joint_pretrain(cfg, data, with_seed(7));
  if (!same(resumed([&](const StageOptions& o) { return joint_pretrain(cfg, data, o); }, 5).model, j1.model))
    bad.push_back("joint-resume");

  std::string detail = "global/local/finetune repeat + global/local/finetune/joint resume";
  if (!bad.empty()) {
    detail += "; mismatched:";
    for (const auto& b : bad) detail += " " + b;
  }
  return {bad.empty(), detail};
}

std::map<std::string, double> read_summary(const fs::path& csv) {
  std::ifstream in(csv);
  if (!in) throw DataError("cannot read " + csv.string());
  std::string line;
  std::getline(in, line);
  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    for (std::string f; std::getline(ss, f, ',');) header.push_back(f);
  }
  const auto col = static_cast<std::size_t>(std::find(header.begin(), header.end(), "mean_dsc") - header.begin());
  std::map<std::string, double> out;
  while (std::getline(in, line)) {
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string x; std::getline(ss, x, ',');) f.push_back(x);
    if (f.size() > col && f[2] == "summary") out[f[0]] = std::stod(f[col]);
  }
  return out;
}

// 7. Directional end-to-end ordering.
Outcome ordering(const std::string& reuse_csv, const fs::path& out_dir) {
  std::map<std::string, double> mean;
  double runtime = 0;
  std::string source;
  if (!reuse_csv.empty()) {
    mean = read_summary(reuse_csv);
    source = " (from " + reuse_csv + ")";
  } else {
    const auto cfg = desk_config();
    const Dataset data = load_dataset(cfg);
    MatrixOptions mo;
    mo.threads = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
    mo.out_dir = out_dir;
    const auto t0 = Clock::now();
    const auto m = run_matrix(cfg, data, mo);
    runtime = seconds_since(t0);
    for (const auto& r : m.summaries) mean[r.arm] = r.mean_dsc;
  }
  for (const char* arm : {"random", "GR", "GD", "GD+LR"})
    if (!mean.count(arm)) return {false, std::string("missing arm ") + arm};
  const double r = mean["random"], gr = mean["GR"], gd = mean["GD"], gdlr = mean["GD+LR"];
  const bool ok = gdlr >= gd && gd >= gr && gr >= r && (gdlr - r) >= 0.02 && (reuse_csv.empty() ? runtime <= 2700 : true);
  return {ok, "random=" + fmt("%.4f", r) + " GR=" + fmt("%.4f", gr) + " GD=" + fmt("%.4f", gd) +
                  " GD+LR=" + fmt("%.4f", gdlr) + " gain=" + fmt("%.4f", gdlr - r) +
                  (reuse_csv.empty() ? " runtime_s=" + fmt("%.0f", runtime) : source)};
}

// 8. Stage-contract checks.
Outcome stage_contracts() {
  auto cfg = small_stage_config();
  const Dataset data = load_dataset(cfg);
  const auto g = pretrain_global(cfg, data, with_seed(3));
  const auto l = pretrain_local(cfg, data, g.model, with_seed(3));
  bool encoder_same = true;
  int compared = 0;
  for (const auto& [name, t] : g.model.tensors)
    if (name.rfind("enc", 0) == 0) {
      encoder_same = encoder_same && l.model.tensors.count(name) && l.model.tensors.at(name) == t;
      ++compared;
    }
  cfg.lambda_l = 0.0;
  double worst = 0;
  bool extra_zero = true;
  for (std::uint64_t s = 0; s < 3; ++s) {
    Network a(cfg.network, 100 + s), b(cfg.network, 100 + s);
    Rng ga(200 + s), gb(200 + s), lb(300 + s);
    const auto gg = global_step_gradients(a, cfg, data, ga);
    const auto jg = joint_step_gradients(b, cfg, data, gb, lb);
    for (const auto& [name, t] : gg.grads) {
      if (!jg.grads.count(name)) {
        worst = INFINITY;
        continue;
      }
      const auto& u = jg.grads.at(name);
      for (std::size_t i = 0; i < t.numel(); ++i) worst = std::max(worst, std::abs(t[i] - u[i]));
    }
    for (const auto& [name, t] : jg.grads)
      if (!gg.grads.count(name))
        for (std::size_t i = 0; i < t.numel(); ++i) extra_zero = extra_zero && t[i] == 0.0;
  }
  return {encoder_same && compared > 0 && worst <= 1e-10 && extra_zero,
          std::string("encoder_unchanged=") + (encoder_same ? "yes" : "no") + " (" + std::to_string(compared) +
              " tensors) joint_vs_global_max_abs=" + fmt("%.1e", worst)};
}

bool valid_log(const fs::path& p, int expected_rows) {
  std::ifstream in(p);
  std::string line;
  if (!std::getline(in, line) || line != kLogHeader) return false;
  int rows = 0;
  while (std::getline(in, line)) {
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string x; std::getline(ss, x, ',');) f.push_back(x);
    if (line.back() == ',') f.emplace_back();
    if (f.size() != 5 || std::stoi(f[0]) != rows + 1 || f[1].empty() || !std::isfinite(std::stod(f[1]))) return false;
    ++rows;
  }
  return rows == expected_rows;
}

// 9. Ablation-knob smoke runs.
Outcome ablation_smoke(const fs::path& dir) {
  struct Run {
    std::string name;
    std::function<void(ExperimentConfig&)> edit;
  };
  std::vector<Run> runs;
  for (int b : {40, 72})
    runs.push_back({"batch" + std::to_string(b), [b](ExperimentConfig& c) { c.batch_images = b; }});
  for (int S : {3, 4, 6})
    runs.push_back({"S" + std::to_string(S), [S](ExperimentConfig& c) {
                      c.partitions = S;
                      c.batch_images = 40;
                    }});
  for (int l = 1; l <= 5; ++l)
    runs.push_back({"l" + std::to_string(l), [l](ExperimentConfig& c) {
                      c.network.enc_blocks = 6;
                      c.network.base_channels = 2;
                      c.network.input_height = c.network.input_width = 128;
                      c.network.dec_blocks_pretrained = l;
                      c.dataset.phantom.shape = {12, 128, 128};
                    }});
  runs.push_back({"K1", [](ExperimentConfig& c) { c.region_size = 1; }});
  runs.push_back({"K3", [](ExperimentConfig& c) {
                    c.region_size = 3;
                    c.network.dec_blocks_pretrained = 2;
                  }});
  for (double t : {0.1, 0.5}) runs.push_back({"tau" + fmt("%g", t), [t](ExperimentConfig& c) { c.tau = t; }});
  for (double lam : {1.0, 10.0, 100.0, 1000.0})
    runs.push_back({"lambda" + fmt("%g", lam), [lam](ExperimentConfig& c) { c.lambda_l = lam; }});
  runs.push_back({"GDminus+LD", [](ExperimentConfig& c) {
                    c.global_strategy = GlobalStrategy::GDminus;
                    c.local_strategy = LocalStrategy::LD;
                  }});

  fs::remove_all(dir);
  fs::create_directories(dir);
  std::vector<std::string> failed;
  for (const auto& run : runs) {
    try {
      ExperimentConfig cfg = desk_config();
      cfg.iterations = 2;
      cfg.finetune_iterations = 2;
      cfg.validation_interval = 1;
      run.edit(cfg);
      cfg.validate();
      const Dataset data = load_dataset(cfg);
      const fs::path d = dir / run.name;
      fs::create_directories(d);
      auto opts = [&](const char* file) {
        StageOptions o;
        o.seed = 1;
        o.log_path = d / file;
        return o;
      };
      const bool joint = run.name.rfind("lambda", 0) == 0;
      Checkpoint pre;
      if (joint) {
        pre = joint_pretrain(cfg, data, opts("joint.csv")).model;
      } else {
        const auto g = pretrain_global(cfg, data, opts("global.csv"));
        pre = pretrain_local(cfg, data, g.model, opts("local.csv")).model;
      }
      const Split split = sample_split(cfg.dataset.n_pre, 1, 1, 1);
      finetune(cfg, data, split, &pre, opts("finetune.csv"));
      bool ok = valid_log(d / "finetune.csv", 2);
      if (joint) ok = ok && valid_log(d / "joint.csv", 2);
      else ok = ok && valid_log(d / "global.csv", 2) && valid_log(d / "local.csv", 2);
      if (!ok) failed.push_back(run.name + "(log)");
    } catch (const std::exception& e) {
      failed.push_back(run.name + "(" + e.what() + ")");
    }
  }
  std::string detail = std::to_string(runs.size()) + " configs";
  for (const auto& f : failed) detail += " FAILED:" + f;
  return {failed.empty(), detail};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::vector<int> only;
  std::string reuse_csv;
  std::string work = (fs::temp_directory_path() / "sslseg_acceptance").string();
  app.add_option("--only", only, "Criteria to run (default: all)")->delimiter(',')->check(CLI::Range(1, 9));
  app.add_option("--matrix-csv", reuse_csv, "Take criterion 7 from an existing matrix.csv instead of running it");
  app.add_option("--work-dir", work, "Directory for logs and the matrix output");
  CLI11_PARSE(app, argc, argv);

  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"loss-oracle equivalence", oracle_equivalence},
      {"closed-form spot checks", closed_forms},
      {"gradient checks", gradient_checks},
      {"set cardinalities", cardinalities},
      {"invariance suite", invariances},
      {"determinism and checkpointing", determinism},
      {"end-to-end ordering", [&] { return ordering(reuse_csv, fs::path(work) / "matrix"); }},
      {"stage contracts", stage_contracts},
      {"ablation-knob smoke", [&] { return ablation_smoke(fs::path(work) / "ablation"); }},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i + 1);
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    Outcome o;
    const auto t0 = Clock::now();
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    std::printf("criterion %d %s: %s  %s  [%.1fs]\n", id, criteria[i].first, o.pass ? "PASS" : "FAIL",
                o.detail.c_str(), seconds_since(t0));
    std::fflush(stdout);
    failures += o.pass ? 0 : 1;
  }
  return failures == 0 ? 0 : 1;
}
