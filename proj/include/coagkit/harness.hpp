#pragma once

// Experiment driver: runs a validated ExperimentConfig and returns the
// artifact bundle (CSV texts plus a JSON summary). Nothing here touches the
// filesystem except write_bundle.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <json.hpp>

#include "coalescent.hpp"
#include "config.hpp"
#include "deterministic.hpp"
#include "errors.hpp"
#include "io.hpp"
#include "measures.hpp"
#include "nonuniqueness.hpp"
#include "numeric.hpp"

namespace coagkit {

using json = nlohmann::json;

struct RunContext {
  std::uint64_t seed = 0;
  unsigned threads = 1;
};

struct RunOutput {
  json summary;
  std::vector<std::pair<std::string, std::string>> files;  // name, content
  std::vector<std::string> warnings;

  const std::string* file(const std::string& name) const {
    for (const auto& f : files)
      if (f.first == name) return &f.second;
    return nullptr;
  }
};

/// Runs fn(i) for i in [0, count) on up to `threads` workers and returns
/// the results in index order. If any call throws, the exception of the
/// lowest failing index is rethrown after all workers stop.
template <class T, class F>
std::vector<T> parallel_map(std::size_t count, unsigned threads, F&& fn) {
  std::vector<std::optional<T>> slots(count);
  std::vector<std::exception_ptr> errors(count);
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= count || failed.load()) return;
      try {
        slots[i].emplace(fn(i));
      } catch (...) {
        errors[i] = std::current_exception();
        failed.store(true);
      }
    }
  };
  const unsigned n = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(std::max<std::size_t>(count, 1))));
  if (n == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < n; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  std::vector<T> out;
  out.reserve(count);
  for (auto& s : slots) out.push_back(std::move(*s));
  return out;
}

struct MeanStderr {
  double mean = 0.0;
  double stderr_ = 0.0;
};

inline MeanStderr mean_stderr(const std::vector<double>& xs) {
  MeanStderr r;
  if (xs.empty()) return r;
  CompensatedSum s;
  for (double x : xs) s += x;
  const double n = static_cast<double>(xs.size());
  r.mean = s.value() / n;
  if (xs.size() > 1) {
    CompensatedSum v;
    for (double x : xs) v += (x - r.mean) * (x - r.mean);
    r.stderr_ = std::sqrt(v.value() / (n - 1) / n);
  }
  return r;
}

namespace detail {

constexpr std::uint64_t kSampleStreamBit = std::uint64_t{1} << 63;

inline std::uint64_t study_stream(std::size_t n_index, std::size_t replica) {
  return (static_cast<std::uint64_t>(n_index) << 32) | static_cast<std::uint64_t>(replica);
}

inline std::vector<double> scaled(const std::vector<double>& grid, double factor) {
  std::vector<double> out = grid;
  for (auto& t : out) t *= factor;
  return out;
}

/// n^-1 X as a measure, optionally multiplied by phi.
inline DiscreteMeasure rescaled(const DiscreteMeasure& x, double n, const SublinearFn* phi = nullptr) {
  std::vector<Atom> a;
  a.reserve(x.size());
  for (const auto& at : x.atoms()) a.push_back({at.mass, (phi ? (*phi)(at.mass) : 1.0) * at.weight / n});
  return DiscreteMeasure::make(a, x.epsilon());
}

inline std::string gnuplot_script(const std::string& kind) {
  std::string s = "set datafile separator ','\nset key autotitle columnhead\n";
  if (kind == "solve") {
    s += "set xlabel 't'\nplot 'diagnostics.csv' using 1:3 with lines title 'phi1', \\\n"
         "     'diagnostics.csv' using 1:5 with lines title 'lambda'\n";
  } else if (kind == "simulate" || kind == "couple") {
    s += "set xlabel 't'\nplot 'aggregate.csv' using 1:2:3 with yerrorbars title 'particles / n'\n";
  } else if (kind == "family") {
    s += "set xlabel 't'\nplot for [b=0:9] 'family_diagnostics.csv' using ($1==b ? $2 : 1/0):3 with lines "
         "title sprintf('B%d phi1', b)\n";
  } else if (kind == "nonuniq") {
    s += "set xlabel 't'\nset logscale y\n"
         "plot 'nonuniq_plus.csv' using ($2==2 ? $1 : 1/0):3 with lines title 'm+_2', \\\n"
         "     'nonuniq_minus.csv' using ($2==2 ? $1 : 1/0):3 with lines title 'm-_2'\n";
  } else if (kind == "converge") {
    s += "set logscale xy\nset xlabel 'n'\nplot 'convergence.csv' using 1:2:3 with yerrorbars title 'mean sup d0'\n";
  } else if (kind == "concentrate") {
    s += "set logscale y\nset xlabel 'n'\nplot 'concentration.csv' using 1:4 with linespoints title 'exceedance'\n";
  }
  return s;
}

inline json nullable(std::optional<double> v) { return v ? json(*v) : json(nullptr); }

} // namespace detail

// ---------------------------------------------------------------------------
// Studies
// ---------------------------------------------------------------------------

struct ConvergenceRow {
  std::size_t n = 0;
  std::size_t replicas = 0;
  double mean = 0.0;
  double stderr_ = 0.0;
};

struct ConvergenceResult {
  std::vector<ConvergenceRow> rows;
  std::optional<double> slope;  // log(mean) against log(n); absent for one n
  bool strictly_decreasing = true;
  bool significant_decrease = true;  // each step down by more than 3 stderr
  double reference_x_max = 0.0;
  double reference_lambda = 0.0;
  double d0_x_max = 0.0;
  int d0_levels = 0;
  std::vector<std::string> warnings;
};

inline std::string convergence_csv(const ConvergenceResult& r) {
  io::CsvWriter w({"n", "mean_sup_d0", "stderr", "replicas"});
  for (const auto& row : r.rows) {
    w << static_cast<double>(row.n) << row.mean << row.stderr_ << static_cast<double>(row.replicas);
    w.endrow();
  }
  return w.str();
}

/// For each n: replicas of sup over the grid of d0(phi X~n_s, phi mu_s)
/// with X~n_t = n^-1 X^n_{t/n}. The reference mu is the solution on an
/// interval B doubled until lambda^B(t_end) is below the configured
/// tolerance.
inline ConvergenceResult convergence_study(const ExperimentConfig& cfg, const RunContext& ctx) {
  if (!cfg.kernel || !cfg.initial) throw ConfigError("/kernel: convergence study needs kernel and initial");
  if (cfg.study.n_list.empty()) throw ConfigError("/study/n_list: must be non-empty");
  const auto& k = *cfg.kernel;
  const auto& phi = k.phi();
  const auto mu0 = cfg.initial->measure();
  ConvergenceResult res;

  double x_max = 16.0 * mu0.max_mass();
  std::optional<Trajectory> ref;
  for (int attempt = 0; attempt < 16; ++attempt) {
    auto tr = solve_truncated(mu0, k, phi, Truncation::interval(x_max), cfg.t_end, cfg.solver);
    if (tr.samples.back().lambda <= cfg.study.reference_lambda_tol) {
      ref = std::move(tr);
      break;
    }
    x_max *= 2;
  }
  if (!ref)
    throw NumericalFailure("reference solution: lambda^B(t_end) stays above " +
                           io::format_double(cfg.study.reference_lambda_tol) + " up to B = (0," +
                           io::format_double(x_max) + "]");
  res.reference_x_max = x_max;
  res.reference_lambda = ref->samples.back().lambda;
  res.d0_x_max = cfg.study.d0_x_max.value_or(x_max);
  res.d0_levels = cfg.study.d0_levels;
  const WeakMetricDict dict(res.d0_x_max, res.d0_levels);

  std::vector<DiscreteMeasure> ref_phi;
  for (const auto& s : ref->samples) ref_phi.push_back(reweight(s.mu, [&](double x) { return phi(x); }));
  const std::size_t grid_size = ref_phi.size();

  for (std::size_t ni = 0; ni < cfg.study.n_list.size(); ++ni) {
    const std::size_t n = cfg.study.n_list[ni];
    const double nd = static_cast<double>(n);
    const auto raw_grid = detail::scaled(cfg.grid, 1.0 / nd);
    auto sups = parallel_map<double>(cfg.replicas, ctx.threads, [&](std::size_t r) {
      const auto x0 = cfg.initial->particles(n, ctx.seed, detail::study_stream(ni, r) | detail::kSampleStreamBit);
      double sup = 0.0;
      std::size_t idx = 0;
      SimOptions opt;
      opt.grid = raw_grid;
      opt.stream = detail::study_stream(ni, r);
      opt.record_samples = false;
      opt.epsilon_mass = mu0.epsilon();
      opt.on_sample = [&](double, const DiscreteMeasure& x, double) {
        if (idx >= grid_size) throw InvariantViolation("sample-grid", "more snapshots than grid points");
        sup = std::max(sup, weak_distance_d0(detail::rescaled(x, nd, &phi), ref_phi[idx], dict));
        ++idx;
      };
      simulate_coalescent(x0, k, raw_grid.back(), ctx.seed, opt);
      if (idx != grid_size) throw InvariantViolation("sample-grid", "snapshot count differs from the grid");
      return sup;
    });
    const auto ms = mean_stderr(sups);
    res.rows.push_back({n, cfg.replicas, ms.mean, ms.stderr_});
  }

  for (std::size_t i = 1; i < res.rows.size(); ++i) {
    const auto& a = res.rows[i - 1];
    const auto& b = res.rows[i];
    if (!(b.mean < a.mean)) res.strictly_decreasing = false;
    if (!(a.mean - b.mean > 3 * std::hypot(a.stderr_, b.stderr_))) res.significant_decrease = false;
  }
  if (res.rows.size() >= 2) {
    std::vector<double> lx, ly;
    bool positive = true;
    for (const auto& row : res.rows) {
      lx.push_back(std::log(static_cast<double>(row.n)));
      ly.push_back(std::log(row.mean));
      positive = positive && row.mean > 0;
    }
    if (positive) res.slope = ols_slope(lx, ly);
    else res.warnings.push_back("a mean distance is zero; log-log slope omitted");
  }
  if (cfg.replicas < 2) res.warnings.push_back("one replica per n: standard errors are not available");
  return res;
}

struct ConcentrationRow {
  std::size_t n = 0;
  std::size_t replicas = 0;
  std::size_t exceedances = 0;
  double frequency = 0.0;
  double stderr_ = 0.0;
  double mean_deviation = 0.0;
};

struct ConcentrationResult {
  std::vector<ConcentrationRow> rows;
  double delta = 0.0;
  double mc_floor = 0.0;  // 1 / replicas
  double diameter = 0.0;  // 2 (<phi, mu0> + lambda0)
  bool non_increasing = true;
  bool zero_at_largest = false;
  std::optional<double> log_slope;  // d log(frequency) / dn over rows above the floor
  bool linear_decay = false;        // log_slope < 0
  bool trend_ok = false;
  std::vector<std::string> warnings;
};

inline std::string concentration_csv(const ConcentrationResult& r) {
  io::CsvWriter w({"n", "replicas", "exceedances", "frequency", "stderr", "mean_sup_deviation"});
  for (const auto& row : r.rows) {
    w << static_cast<double>(row.n) << static_cast<double>(row.replicas) << static_cast<double>(row.exceedances)
      << row.frequency << row.stderr_ << row.mean_deviation;
    w.endrow();
  }
  return w.str();
}

/// Empirical P(sup_s |X~B_s - mu^B_s| + |Lambda~B_s - lambda^B_s| > delta)
/// per n, in total variation, for an integer fixture and finite B.
inline ConcentrationResult concentration_study(const ExperimentConfig& cfg, const RunContext& ctx) {
  if (!cfg.kernel || !cfg.initial || cfg.truncations.size() != 1)
    throw ConfigError("/truncation: concentration study needs kernel, initial and one truncation");
  if (cfg.study.n_list.empty()) throw ConfigError("/study/n_list: must be non-empty");
  const auto& k = *cfg.kernel;
  const auto& phi = k.phi();
  const auto& b = cfg.truncations.front();
  const auto mu0 = cfg.initial->measure();
  ConcentrationResult res;
  res.delta = cfg.study.delta;
  res.mc_floor = 1.0 / static_cast<double>(cfg.replicas);

  const auto ref = solve_truncated(mu0, k, phi, b, cfg.t_end, cfg.solver);
  res.diameter = 2.0 * (ref.diagnostics.front().phi1 + ref.diagnostics.front().lambda);
  const std::size_t grid_size = ref.samples.size();
  const double eps = ref.samples.front().mu.epsilon();

  for (std::size_t ni = 0; ni < cfg.study.n_list.size(); ++ni) {
    const std::size_t n = cfg.study.n_list[ni];
    const double nd = static_cast<double>(n);
    const auto raw_grid = detail::scaled(cfg.grid, 1.0 / nd);
    auto sups = parallel_map<double>(cfg.replicas, ctx.threads, [&](std::size_t r) {
      const auto x0 = cfg.initial->particles(n, ctx.seed, detail::study_stream(ni, r) | detail::kSampleStreamBit);
      double sup = 0.0;
      std::size_t idx = 0;
      SimOptions opt;
      opt.grid = raw_grid;
      opt.stream = detail::study_stream(ni, r);
      opt.record_samples = false;
      opt.epsilon_mass = eps;
      opt.on_sample = [&](double, const DiscreteMeasure& x, double lambda) {
        if (idx >= grid_size) throw InvariantViolation("sample-grid", "more snapshots than grid points");
        const auto& s = ref.samples[idx];
        const double dev = total_variation(detail::rescaled(x, nd), s.mu) + std::abs(lambda / nd - s.lambda);
        sup = std::max(sup, dev);
        ++idx;
      };
      simulate_coupled(x0, k, b, raw_grid.back(), ctx.seed, opt);
      if (idx != grid_size) throw InvariantViolation("sample-grid", "snapshot count differs from the grid");
      return sup;
    });
    ConcentrationRow row;
    row.n = n;
    row.replicas = cfg.replicas;
    for (double s : sups)
      if (s > res.delta) ++row.exceedances;
    row.frequency = static_cast<double>(row.exceedances) / static_cast<double>(cfg.replicas);
    row.stderr_ = std::sqrt(row.frequency * (1 - row.frequency) / static_cast<double>(cfg.replicas));
    row.mean_deviation = mean_stderr(sups).mean;
    res.rows.push_back(row);
  }

  for (std::size_t i = 1; i < res.rows.size(); ++i)
    if (res.rows[i].frequency > res.rows[i - 1].frequency) res.non_increasing = false;
  res.zero_at_largest = res.rows.back().exceedances == 0;
  std::vector<double> xs, ys;
  for (const auto& row : res.rows)
    if (row.exceedances > 0) {
      xs.push_back(static_cast<double>(row.n));
      ys.push_back(std::log(row.frequency));
    }
  if (xs.size() >= 2) {
    res.log_slope = ols_slope(xs, ys);
    res.linear_decay = *res.log_slope < 0;
  }
  res.trend_ok = res.non_increasing && (res.zero_at_largest || res.linear_decay);

  bool below_floor = false;
  for (const auto& row : res.rows) below_floor = below_floor || row.exceedances == 0;
  if (below_floor)
    res.warnings.push_back("some exceedance frequencies are below the Monte-Carlo floor 1/replicas = " +
                           io::format_double(res.mc_floor) + "; more replicas are needed to resolve that tail");
  if (cfg.replicas < 100)
    res.warnings.push_back("fewer than 100 replicas: resolvable exceedance floor is " + io::format_double(res.mc_floor));
  return res;
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

namespace detail {

inline void run_solve(const ExperimentConfig& cfg, const RunContext& ctx, RunOutput& out, json& results) {
  const auto& k = *cfg.kernel;
  const auto& phi = k.phi();
  const auto mu0 = cfg.initial->measure();
  results["blowup_horizon"] = blowup_horizon(mu0, phi);
  auto emit = [&](const Trajectory& tr) {
    const auto rep = conservation_report(tr, phi, cfg.lambda_tol);
    if (cfg.output.trajectory) out.files.emplace_back("trajectory.csv", trajectory_csv(tr));
    out.files.emplace_back("diagnostics.csv", diagnostics_csv(tr.diagnostics));
    results["truncation"] = tr.b.to_json();
    results["solver"] = to_json(tr.meta);
    results["conservation"] = to_json(rep);
    const auto& last = tr.diagnostics.back();
    results["final"] = {{"t", last.t}, {"mass", last.mass}, {"phi1", last.phi1}, {"lambda", last.lambda}};
    if (!rep.phi_monotone)
      out.warnings.push_back("<phi,mu>+lambda increased by " + io::format_double(rep.max_phi_increase) +
                             " (relative) between samples; tighten solver tolerances");
  };
  if (cfg.truncations.size() == 1) {
    emit(solve_truncated(mu0, k, phi, cfg.truncations.front(), cfg.t_end, cfg.solver));
  } else {
    const auto ex = solve_exhaustion(mu0, k, phi, cfg.truncations, cfg.t_end, cfg.solver);
    if (!ex.monotone)
      throw InvariantViolation("truncation-monotonicity",
                               "atomwise excess " + io::format_double(ex.max_atom_violation) + ", phi excess " +
                                   io::format_double(ex.max_phi_violation));
    emit(ex.limit());
    io::CsvWriter w({"b", "t", "mass", "phi1", "lambda"});
    for (std::size_t i = 0; i < ex.runs.size(); ++i)
      for (const auto& d : ex.runs[i].diagnostics) {
        w << static_cast<double>(i) << d.t << d.mass << d.phi1 << d.lambda;
        w.endrow();
      }
    out.files.emplace_back("exhaustion.csv", w.str());
    json bs = json::array();
    for (const auto& b : cfg.truncations) bs.push_back(b.to_json());
    results["exhaustion"] = {{"truncations", bs},
                             {"monotone", ex.monotone},
                             {"max_atom_violation", ex.max_atom_violation},
                             {"max_phi_violation", ex.max_phi_violation},
                             {"cauchy_gap", ex.cauchy_gap}};
  }
  (void)ctx;
}

struct ReplicaStats {
  std::vector<double> count, phi1, lambda;  // per grid point, rescaled by n
  SimResult sim;                            // replica 0 keeps samples and events
};

inline void run_simulate(const ExperimentConfig& cfg, const RunContext& ctx, RunOutput& out, json& results,
                         bool coupled) {
  const auto& k = *cfg.kernel;
  const auto& phi = k.phi();
  const std::size_t n = cfg.initial->n;
  const double nd = static_cast<double>(n);
  const auto raw_grid = scaled(cfg.grid, 1.0 / nd);
  const Truncation b = coupled ? cfg.truncations.front() : Truncation::all();

  auto reps = parallel_map<ReplicaStats>(cfg.replicas, ctx.threads, [&](std::size_t r) {
    ReplicaStats st;
    const auto x0 = cfg.initial->particles(n, ctx.seed, r | kSampleStreamBit);
    SimOptions opt;
    opt.grid = raw_grid;
    opt.stream = r;
    opt.record_samples = r == 0;
    opt.record_events = r == 0 && cfg.output.events;
    opt.epsilon_mass = cfg.initial->epsilon_mass;
    opt.on_sample = [&](double, const DiscreteMeasure& x, double lambda) {
      st.count.push_back(x.norm() / nd);
      st.phi1.push_back(moment(x, [&](double m) { return phi(m); }) / nd);
      st.lambda.push_back(lambda / nd);
    };
    st.sim = simulate_coupled(x0, k, b, raw_grid.back(), ctx.seed, opt);
    const double m0 = st.sim.initial_total_mass, m1 = st.sim.final_total_mass;
    if (std::abs(m1 - m0) > 1e-9 * std::max(1.0, m0))
      throw InvariantViolation("mass-balance", "replica " + std::to_string(r) + ": particle plus leaked mass " +
                                                   io::format_double(m1) + " != initial " + io::format_double(m0));
    if (r != 0) st.sim.final_masses.clear();
    return st;
  });

  io::CsvWriter agg({"t", "mean_count", "stderr_count", "mean_phi1", "stderr_phi1", "mean_lambda"});
  for (std::size_t g = 0; g < cfg.grid.size(); ++g) {
    std::vector<double> c, p, l;
    for (const auto& st : reps) {
      c.push_back(st.count[g]);
      p.push_back(st.phi1[g]);
      l.push_back(st.lambda[g]);
    }
    const auto mc = mean_stderr(c), mp = mean_stderr(p), ml = mean_stderr(l);
    agg << cfg.grid[g] << mc.mean << mc.stderr_ << mp.mean << mp.stderr_ << ml.mean;
    agg.endrow();
  }
  out.files.emplace_back("aggregate.csv", agg.str());

  const auto& first = reps.front().sim;
  if (cfg.output.trajectory) {
    io::CsvWriter w({"t", "mass", "weight", "lambda"});
    for (std::size_t g = 0; g < first.samples.size(); ++g) {
      const auto& s = first.samples[g];
      for (const auto& a : s.mu.atoms()) {
        w << cfg.grid[g] << a.mass << a.weight / nd << s.lambda / nd;
        w.endrow();
      }
    }
    out.files.emplace_back("trajectory.csv", w.str());
  }
  if (cfg.output.events) out.files.emplace_back("events.csv", event_log_csv(rescale_events(first.log, nd)));

  std::size_t events = 0, merges = 0, leak_merges = 0, single_leaks = 0, proposals = 0;
  for (const auto& st : reps) {
    events += st.sim.events;
    merges += st.sim.merges;
    leak_merges += st.sim.leak_merges;
    single_leaks += st.sim.single_leaks;
    proposals += st.sim.proposals;
  }
  results["replicas"] = cfg.replicas;
  results["n"] = n;
  results["initial_particles_replica0"] = std::llround(reps.front().count.front() * nd);
  if (coupled) results["truncation"] = b.to_json();
  results["events"] = events;
  results["proposals"] = proposals;
  results["merges"] = merges;
  results["leak_merges"] = leak_merges;
  results["single_leaks"] = single_leaks;
  results["acceptance_rate"] = proposals > 0 ? static_cast<double>(events) / static_cast<double>(proposals) : 1.0;
  results["mass_balance_ok"] = true;
}

inline void run_family(const ExperimentConfig& cfg, const RunContext& ctx, RunOutput& out, json& results) {
  const auto& k = *cfg.kernel;
  const auto& phi = k.phi();
  const std::size_t n = cfg.initial->n;
  const double nd = static_cast<double>(n);
  const auto raw_grid = scaled(cfg.grid, 1.0 / nd);
  auto reps = parallel_map<FamilyResult>(cfg.replicas, ctx.threads, [&](std::size_t r) {
    const auto x0 = cfg.initial->particles(n, ctx.seed, r | kSampleStreamBit);
    SimOptions opt;
    opt.grid = raw_grid;
    opt.stream = r;
    opt.epsilon_mass = cfg.initial->epsilon_mass;
    auto fr = simulate_coupled_family(x0, k, cfg.truncations, raw_grid.back(), ctx.seed, opt);
    if (r != 0)
      for (auto& p : fr.paths) p.samples.clear();
    return fr;
  });
  std::size_t rounds = 0, checks = 0;
  double gap = std::numeric_limits<double>::infinity();
  for (const auto& fr : reps) {
    rounds += fr.rounds;
    checks += fr.checks;
    gap = std::min(gap, fr.min_order_gap);
  }
  const auto& first = reps.front();
  io::CsvWriter traj({"b", "t", "mass", "weight"});
  io::CsvWriter diag({"b", "t", "phi1", "lambda"});
  for (std::size_t bi = 0; bi < first.paths.size(); ++bi)
    for (std::size_t g = 0; g < first.paths[bi].samples.size(); ++g) {
      const auto& s = first.paths[bi].samples[g];
      for (const auto& a : s.mu.atoms()) {
        traj << static_cast<double>(bi) << cfg.grid[g] << a.mass << a.weight / nd;
        traj.endrow();
      }
      diag << static_cast<double>(bi) << cfg.grid[g] << moment(s.mu, [&](double m) { return phi(m); }) / nd
           << s.lambda / nd;
      diag.endrow();
    }
  if (cfg.output.trajectory) out.files.emplace_back("family.csv", traj.str());
  out.files.emplace_back("family_diagnostics.csv", diag.str());
  json bs = json::array();
  for (const auto& b : cfg.truncations) bs.push_back(b.to_json());
  results["truncations"] = bs;
  results["replicas"] = cfg.replicas;
  results["n"] = n;
  results["rounds"] = rounds;
  results["order_checks"] = checks;
  results["violations"] = 0;
  results["min_order_gap"] = std::isfinite(gap) ? json(gap) : json(nullptr);
}

inline json prop31_json(const Prop31Report& r) {
  return {{"parity_even", r.parity_even},
          {"lower_ok", r.lower_ok},
          {"upper_ok", r.upper_ok},
          {"worst_lower_margin", r.worst_lower_margin},
          {"worst_upper_margin", r.worst_upper_margin}};
}

/// Linear interpolation of series[k][index] at time t on grid `ts`.
inline double interpolate(const std::vector<double>& ts, const std::vector<std::vector<double>>& m, std::size_t index,
                          double t) {
  if (t <= ts.front()) return m.front()[index];
  for (std::size_t k = 1; k < ts.size(); ++k)
    if (t <= ts[k]) {
      const double w = (t - ts[k - 1]) / (ts[k] - ts[k - 1]);
      return (1 - w) * m[k - 1][index] + w * m[k][index];
    }
  return m.back()[index];
}

inline void run_nonuniq(const ExperimentConfig& cfg, const RunContext& ctx, RunOutput& out, json& results) {
  ChainOptions opt;
  opt.tol = cfg.nonuniq.tol;
  const int n_max = cfg.nonuniq.n_max;
  const auto lim = extract_limits(n_max, cfg.grid, opt);
  const auto& plus = lim.even_runs.back();
  const auto& minus = lim.odd_runs.back();
  out.files.emplace_back("nonuniq_plus.csv", chain_csv(plus));
  out.files.emplace_back("nonuniq_minus.csv", chain_csv(minus));
  io::CsvWriter g({"n", "gap_plus", "gap_minus"});
  for (int i = 0; i < n_max; ++i) {
    g << static_cast<double>(i + 1) << lim.gap_plus[static_cast<std::size_t>(i)]
      << lim.gap_minus[static_cast<std::size_t>(i)];
    g.endrow();
  }
  out.files.emplace_back("gap_certificate.csv", g.str());

  double min_plus2 = std::numeric_limits<double>::infinity();
  for (const auto& row : lim.m_plus) min_plus2 = std::min(min_plus2, row[1]);
  results["n_max"] = n_max;
  results["even_truncation"] = lim.even_truncation;
  results["odd_truncation"] = lim.odd_truncation;
  results["m_plus_2_min"] = min_plus2;
  if (cfg.t_end >= 1.0) {
    const double p1 = interpolate(lim.t, lim.m_plus, 1, 1.0), m1 = interpolate(lim.t, lim.m_minus, 1, 1.0);
    results["m_plus_2_at_1"] = p1;
    results["m_minus_2_at_1"] = m1;
    results["separation_at_1"] = p1 - m1;
  }
  results["separation_min"] = lim.separation_min;
  results["monotone_in_truncation"] = lim.monotone;
  results["worst_monotone_violation"] = lim.worst_monotone_violation;
  results["gap_certificate"] = {{"plus", lim.gap_plus}, {"minus", lim.gap_minus}};
  results["bounds_even"] = prop31_json(verify_prop31(plus));
  results["bounds_odd"] = prop31_json(verify_prop31(minus));
  ChainOptions dense = opt;
  dense.dense = true;
  const auto plus_dense = solve_chain(n_max, n_max, cfg.grid, dense);
  const auto minus_dense = solve_chain(n_max - 1, n_max, cfg.grid, dense);
  results["exponential_form_residual"] =
      std::max(exponential_form_residual(plus_dense), exponential_form_residual(minus_dense));
  if (cfg.nonuniq.x_alpha) {
    const auto rep = chain_mass_geometric(plus_dense, *cfg.nonuniq.x_alpha);
    io::CsvWriter w({"t", "mass_lower_bound", "certificate"});
    for (std::size_t i = 0; i < rep.t.size(); ++i) {
      w << rep.t[i] << rep.mass[i] << rep.certificate[i];
      w.endrow();
    }
    out.files.emplace_back("nonuniq_mass.csv", w.str());
    results["mass"] = {{"x_alpha", *cfg.nonuniq.x_alpha}, {"mass0", rep.mass0},         {"n_cut", rep.n_cut},
                       {"conserved", rep.conserved},      {"halving_ok", rep.halving_ok},
                       {"worst_halving_ratio", rep.worst_halving_ratio}};
    if (!rep.conserved)
      out.warnings.push_back("mass deficit exceeds the a-priori certificate; raise n_max");
  }
  (void)ctx;
}

} // namespace detail

/// Runs one experiment. The summary embeds the config, its hash and the
/// seed and is checked against the summary schema before it is returned.
inline RunOutput run(const ExperimentConfig& cfg, const RunContext& ctx) {
  RunOutput out;
  json results = json::object();
  const std::string& kind = cfg.kind;
  if (kind == "solve") {
    detail::run_solve(cfg, ctx, out, results);
  } else if (kind == "simulate" || kind == "couple") {
    detail::run_simulate(cfg, ctx, out, results, kind == "couple");
  } else if (kind == "family") {
    detail::run_family(cfg, ctx, out, results);
  } else if (kind == "nonuniq") {
    detail::run_nonuniq(cfg, ctx, out, results);
  } else if (kind == "converge") {
    const auto r = convergence_study(cfg, ctx);
    out.files.emplace_back("convergence.csv", convergence_csv(r));
    results["rows"] = json::array();
    for (const auto& row : r.rows)
      results["rows"].push_back({{"n", row.n}, {"mean", row.mean}, {"stderr", row.stderr_}, {"replicas", row.replicas}});
    results["slope"] = detail::nullable(r.slope);
    results["strictly_decreasing"] = r.strictly_decreasing;
    results["significant_decrease"] = r.significant_decrease;
    results["reference"] = {{"x_max", r.reference_x_max}, {"lambda_t_end", r.reference_lambda}};
    results["d0"] = {{"x_max", r.d0_x_max}, {"levels", r.d0_levels}};
    out.warnings.insert(out.warnings.end(), r.warnings.begin(), r.warnings.end());
  } else if (kind == "concentrate") {
    const auto r = concentration_study(cfg, ctx);
    out.files.emplace_back("concentration.csv", concentration_csv(r));
    results["rows"] = json::array();
    for (const auto& row : r.rows)
      results["rows"].push_back({{"n", row.n},
                                 {"replicas", row.replicas},
                                 {"exceedances", row.exceedances},
                                 {"frequency", row.frequency},
                                 {"stderr", row.stderr_},
                                 {"mean_sup_deviation", row.mean_deviation}});
    results["delta"] = r.delta;
    results["mc_floor"] = r.mc_floor;
    results["diameter"] = r.diameter;
    results["non_increasing"] = r.non_increasing;
    results["zero_at_largest"] = r.zero_at_largest;
    results["log_slope"] = detail::nullable(r.log_slope);
    results["linear_decay"] = r.linear_decay;
    results["trend_ok"] = r.trend_ok;
    out.warnings.insert(out.warnings.end(), r.warnings.begin(), r.warnings.end());
  } else {
    throw ConfigError("/kind: unknown experiment kind '" + kind + "'");
  }

  if (cfg.output.plot) out.files.emplace_back("plot.gp", detail::gnuplot_script(kind));
  json files = json::array();
  for (const auto& f : out.files) files.push_back(f.first);
  files.push_back("summary.json");
  out.summary = {{"schema_version", kConfigSchemaVersion},
                 {"tool", {{"name", "coagkit"}, {"version", kToolVersion}}},
                 {"kind", kind},
                 {"seed", ctx.seed},
                 {"config_hash", cfg.hash},
                 {"config", cfg.raw},
                 {"results", results},
                 {"files", files},
                 {"warnings", out.warnings}};
  const auto issues = summary_schema().validate(out.summary);
  if (!issues.empty()) throw InvariantViolation("summary-schema", format_issues(issues));
  return out;
}

/// Writes every file of the bundle plus summary.json into `dir`.
inline void write_bundle(const RunOutput& out, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error("cannot create output directory " + dir.string() + ": " + ec.message());
  for (const auto& [name, content] : out.files) io::write_file(dir / name, content);
  io::write_file(dir / "summary.json", out.summary.dump(2) + "\n");
}

} // namespace coagkit
