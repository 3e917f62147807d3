#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <fstream>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>
#include <tuple>

#include "json.hpp"
#include "sslseg/errors.hpp"
#include "sslseg/eval.hpp"
#include "sslseg/trainer.hpp"

namespace sslseg {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

[[noreturn]] void rethrow_with_context(const std::string& context) {
  try {
    throw;
  } catch (const ConfigError& e) {
    throw ConfigError(context + ": " + e.what());
  } catch (const DataError& e) {
    throw DataError(context + ": " + e.what());
  } catch (const NumericError& e) {
    throw NumericError(context + ": " + e.what());
  } catch (const std::exception& e) {
    throw Error(context + ": " + e.what());
  }
}

struct Timed {
  Checkpoint model;
  double seconds = 0.0;
};

// All arms of one seed, sharing pre-training stages between arms.
std::vector<MatrixRow> run_seed(const ExperimentConfig& cfg, const Dataset& data, std::uint64_t seed,
                                const MatrixOptions& opts) {
  std::map<GlobalStrategy, Timed> global_cache;
  std::map<std::pair<GlobalStrategy, LocalStrategy>, Timed> local_cache;
  auto stage_opts = [&](const std::string& name) {
    StageOptions o;
    o.seed = seed;
    if (!opts.out_dir.empty()) o.log_path = opts.out_dir / ("log_" + name + "_seed" + std::to_string(seed) + ".csv");
    return o;
  };
  auto note = [&](const std::string& msg) {
    if (opts.progress) opts.progress("seed " + std::to_string(seed) + ": " + msg);
  };
  std::vector<MatrixRow> rows;
  for (const auto& arm : cfg.arms) {
    ExperimentConfig acfg = cfg;
    acfg.global_strategy = arm.global;
    acfg.local_strategy = arm.local;
    const Timed* global = nullptr;
    const Timed* local = nullptr;
    std::string stage;
    try {
      if (arm.global != GlobalStrategy::none) {
        stage = "pretrain_global";
        auto it = global_cache.find(arm.global);
        if (it == global_cache.end()) {
          note("global pre-training " + to_string(arm.global));
          const auto t0 = Clock::now();
          auto r = pretrain_global(acfg, data, stage_opts("global_" + to_string(arm.global)));
          it = global_cache.emplace(arm.global, Timed{std::move(r.model), seconds_since(t0)}).first;
        }
        global = &it->second;
      }
      if (arm.local != LocalStrategy::none) {
        stage = "pretrain_local";
        const auto key = std::make_pair(arm.global, arm.local);
        auto it = local_cache.find(key);
        if (it == local_cache.end()) {
          note("local pre-training " + to_string(arm.local) + " on " + to_string(arm.global));
          const auto t0 = Clock::now();
          auto r = pretrain_local(acfg, data, global->model,
                                  stage_opts("local_" + to_string(arm.global) + "_" + to_string(arm.local)));
          it = local_cache.emplace(key, Timed{std::move(r.model), seconds_since(t0)}).first;
        }
        local = &it->second;
      }
      for (int n_tr : cfg.train_sizes) {
        stage = "finetune";
        note("fine-tuning arm " + arm.name + " n_tr=" + std::to_string(n_tr));
        const auto t0 = Clock::now();
        const Split split = sample_split(cfg.dataset.n_pre, n_tr, cfg.dataset.n_vl, stream_seed(seed, Stream::split));
        const Checkpoint* pre = local ? &local->model : global ? &global->model : nullptr;
        auto ft = finetune(acfg, data, split, pre,
                           stage_opts("finetune_" + arm.name + "_ntr" + std::to_string(n_tr)));
        stage = "evaluate";
        const DiceReport rep = evaluate(ft.model, data.test, seed);
        MatrixRow row;
        row.arm = arm.name;
        row.n_tr = n_tr;
        row.seed = std::to_string(seed);
        row.dsc = rep.per_class;
        row.mean_dsc = rep.mean;
        row.wallclock_s = seconds_since(t0) + (global ? global->seconds : 0.0) + (local ? local->seconds : 0.0);
        rows.push_back(std::move(row));
      }
    } catch (...) {
      rethrow_with_context("arm '" + arm.name + "' seed " + std::to_string(seed) + " stage " + stage);
    }
  }
  return rows;
}

std::string csv_number(double v) {
  std::ostringstream os;
  os.precision(10);
  os << v;
  return os.str();
}

}  // namespace

std::string ExperimentMatrix::csv() const {
  std::ostringstream os;
  os << "arm,n_tr,seed";
  for (int c = 1; c < num_classes; ++c) os << ",dsc_c" << c;
  os << ",mean_dsc,mean_dsc_sd,wallclock_s\n";
  for (const auto* list : {&results, &summaries})
    for (const auto& r : *list) {
      os << r.arm << ',' << r.n_tr << ',' << r.seed;
      for (double d : r.dsc) os << ',' << csv_number(d);
      os << ',' << csv_number(r.mean_dsc) << ',' << csv_number(r.mean_dsc_sd) << ',' << csv_number(r.wallclock_s)
         << '\n';
    }
  return os.str();
}

const MatrixRow& ExperimentMatrix::summary(const std::string& arm, int n_tr) const {
  for (const auto& r : summaries)
    if (r.arm == arm && r.n_tr == n_tr) return r;
  throw ConfigError("no summary row for arm " + arm);
}

ExperimentMatrix run_matrix(const ExperimentConfig& cfg, const Dataset& data, const MatrixOptions& opts) {
  cfg.validate();
  if (cfg.arms.empty()) throw ConfigError("experiment matrix has no arms");
  for (const auto& a : cfg.arms)
    if (a.local != LocalStrategy::none && a.global == GlobalStrategy::none)
      throw ConfigError("arm '" + a.name + "': local pre-training needs a global stage before it");
  if (!opts.out_dir.empty()) std::filesystem::create_directories(opts.out_dir);

  const std::size_t n = cfg.seeds.size();
  std::vector<std::vector<MatrixRow>> per_seed(n);
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        per_seed[i] = run_seed(cfg, data, cfg.seeds[i], opts);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t threads = std::clamp<std::size_t>(static_cast<std::size_t>(std::max(opts.threads, 1)), 1, n);
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);

  ExperimentMatrix m;
  m.num_classes = cfg.network.num_classes;
  // Rows ordered by arm, train size, then seed, independent of completion order.
  for (const auto& arm : cfg.arms)
    for (int n_tr : cfg.train_sizes) {
      std::vector<const MatrixRow*> group;
      for (const auto& rows : per_seed)
        for (const auto& r : rows)
          if (r.arm == arm.name && r.n_tr == n_tr) group.push_back(&r);
      for (const auto* r : group) m.results.push_back(*r);
      MatrixRow s;
      s.arm = arm.name;
      s.n_tr = n_tr;
      s.seed = "summary";
      const double k = static_cast<double>(group.size());
      s.dsc.assign(static_cast<std::size_t>(cfg.network.num_classes - 1), 0.0);
      for (const auto* r : group) {
        for (std::size_t c = 0; c < s.dsc.size(); ++c) s.dsc[c] += r->dsc[c] / k;
        s.mean_dsc += r->mean_dsc / k;
        s.wallclock_s += r->wallclock_s;
      }
      double var = 0.0;
      for (const auto* r : group) var += (r->mean_dsc - s.mean_dsc) * (r->mean_dsc - s.mean_dsc);
      s.mean_dsc_sd = group.size() > 1 ? std::sqrt(var / (k - 1.0)) : 0.0;
      m.summaries.push_back(std::move(s));
    }

  if (!opts.out_dir.empty()) {
    std::ofstream(opts.out_dir / "matrix.csv") << m.csv();
    nlohmann::json meta = {
        {"reference_ordering",
         {{"dataset", "ACDC"},
          {"n_tr", 1},
          {"arms", {"random", "GR", "GD", "GD+LR"}},
          {"mean_dsc", {kReferenceOrdering[0], kReferenceOrdering[1], kReferenceOrdering[2], kReferenceOrdering[3]}}}},
        {"seeds", cfg.seeds},
        {"train_sizes", cfg.train_sizes},
    };
    std::ofstream(opts.out_dir / "matrix_meta.json") << meta.dump(2) << '\n';
  }
  return m;
}

}  // namespace sslseg
