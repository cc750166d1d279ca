// One PASS/FAIL line per acceptance criterion. Exit status 0 only if all pass.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numbers>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "cli.hpp"
#include "mcascade/mcascade.hpp"
#include "oracles.hpp"

namespace {

namespace fs = std::filesystem;
namespace cli = mcascade::cli;
namespace inv = mcascade::invariants;
using mcascade::derive_stream_id;
using mcascade::Stream;
using mcascade::Vertex;
using mcascade::WeightLaw;

const WeightLaw kBoundary = WeightLaw::boundary_gaussian();

int threads() { return static_cast<int>(std::max(1U, std::thread::hardware_concurrency())); }

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// 1 -------------------------------------------------------------------------

Outcome exact_invariants() {
  cli::CheckSet checks;
  int samples = 0;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Stream rng(derive_stream_id(seed, {101}));
    const auto r = mcascade::simulate_tree(kBoundary, 12, rng);
    for (double beta : {0.5, 1.5, 3.0}) {
      const auto t = mcascade::partition_table(r, beta, 4);
      checks.merge(inv::z_additivity(t, r));
      checks.merge(inv::partition_of_unity(t));
      checks.merge(inv::free_energy_bounds(t));
      for (const std::set<int>& f : {std::set<int>{1}, {1, 2}, {2, 4}, {1, 3, 4}}) {
        checks.merge(inv::fourier_routes(mcascade::fourier_coeff(t, r, f)));
      }
    }
    mcascade::LimitConfig cfg;
    cfg.k = 4;
    cfg.leaf_depth = 12;
    Stream lrng(derive_stream_id(seed, {102}));
    const auto s = mcascade::build_limit_sample(kBoundary, cfg, lrng);
    checks.merge(inv::field_recursion(s.field));
    checks.merge(inv::interval_tiling(s.intervals));
    for (double beta : {1.5, 2.0, 4.0}) {
      checks.merge(inv::i_additivity(mcascade::compute_I(s, beta)));
      checks.merge(inv::limit_partition_of_unity(mcascade::limit_prob(s, beta)));
    }
    for (const auto& c : inv::rn_identities(s, 1.5, 2.2, 4.0, 50)) checks.merge(c);
    ++samples;
  }
  std::string worst;
  bool tolerances = true;
  for (const auto& [name, c] : checks.by_name) {
    worst += fmt(" %s=%.2g", name.c_str(), c.worst);
    tolerances = tolerances && c.tolerance <= inv::kExactTolerance;
  }
  return {checks.all_passed() && tolerances && checks.by_name.size() == 10,
          fmt("%d samples, %zu invariants;", samples, checks.by_name.size()) + worst};
}

// 2 -------------------------------------------------------------------------

Outcome alpha_solver() {
  double worst = 0.0;
  const double a = mcascade::solve_alpha(WeightLaw::gaussian(2.0 * std::sqrt(2.0 * std::numbers::ln2)));
  worst = std::fabs(a - 0.5);
  for (double beta : {1.5, 2.0, 4.0}) {
    const double b = mcascade::solve_alpha(mcascade::tilt(kBoundary, beta));
    worst = std::max(worst, std::fabs(b - 1.0 / beta));
  }
  return {worst < 1e-8, fmt("max |alpha - expected| = %.2e", worst)};
}

// 3 -------------------------------------------------------------------------

Outcome boundary_normalization() {
  std::vector<WeightLaw> laws{WeightLaw::gaussian(1.5), WeightLaw::gaussian(2.0), WeightLaw::gaussian(3.0),
                              WeightLaw::two_point(2.8, 0.1, 1.0 / 3.0)};
  oracles::LawGenerator gen(303);
  for (int i = 0; i < 40; ++i) laws.push_back(gen.strong_law());
  double worst = 0.0;
  int strong = 0;
  for (const auto& law : laws) {
    if (mcascade::classify_disorder(law).cls != mcascade::Disorder::strong) continue;
    ++strong;
    const auto w = mcascade::x_to_w(law, mcascade::solve_alpha(law));
    const auto [r0, r1] = mcascade::boundary_residuals(w);
    worst = std::max({worst, std::fabs(r0), std::fabs(r1)});
  }
  return {strong == static_cast<int>(laws.size()) && worst < 1e-8,
          fmt("%d strong laws, max residual %.2e", strong, worst)};
}

// 4 -------------------------------------------------------------------------

Outcome dichotomy() {
  std::string detail = "median M_n at beta 0.5:";
  bool weak_ok = true;
  double strong_m20 = 0.0;
  for (int n : {4, 8, 12, 16, 20}) {
    const auto e = cli::run_finite(kBoundary, n, {0.5, 1.5}, 200, 404, 0, threads());
    const double med = mcascade::stats::median(e.column(0, &cli::FiniteRecord::m));
    weak_ok = weak_ok && med >= 0.3 && med <= 3.0;
    detail += fmt(" n%d=%.3f", n, med);
    if (n == 20) strong_m20 = mcascade::stats::median(e.column(1, &cli::FiniteRecord::m));
  }
  detail += fmt("; median M_20 at beta 1.5 = %.2e", strong_m20);
  return {weak_ok && strong_m20 < 0.01, detail};
}

// 5 -------------------------------------------------------------------------

Outcome aidekon_shi() {
  // sigma^2 = E W^2 e^{-W} / E e^{-W} for W = beta_c N + beta_c^2, by Simpson.
  const double bc = mcascade::kBetaCritical;
  auto w = [bc](double z) { return bc * z + bc * bc; };
  const double z0 = oracles::gaussian_simpson([&](double z) { return std::exp(-w(z)); });
  const double z2 = oracles::gaussian_simpson([&](double z) { return w(z) * w(z) * std::exp(-w(z)); });
  const double sigma_sq = z2 / z0;
  const double target = std::sqrt(2.0 / (std::numbers::pi * sigma_sq));
  std::map<int, std::vector<double>> ratios;
  for (int n : {12, 16, 20}) {
    const auto e = cli::run_finite(kBoundary, n, {1.0}, 260, 505, 0, threads());
    for (const auto& r : e.rows) {
      if (r.d > 0.0 && ratios[n].size() < 200) ratios[n].push_back(std::sqrt(double(n)) * r.w / r.d);
    }
  }
  bool enough = true;
  for (const auto& [n, v] : ratios) enough = enough && v.size() == 200;
  const auto trace = mcascade::stats::convergence_trace(ratios, target);
  std::string detail = fmt("sigma^2=%.6f target=%.4f;", sigma_sq, target);
  for (const auto& p : trace.points) detail += fmt(" n%d median=%.4f dev=%.4f", p.n, p.median, p.deviation);
  const double rel = trace.points.back().deviation / target;
  detail += fmt("; n20 relative deviation %.3f (limit 0.25), non-increasing=%s", rel,
                trace.monotone_approach ? "yes" : "no");
  return {enough && rel <= 0.25 && trace.monotone_approach, detail};
}

// 6 -------------------------------------------------------------------------

Outcome stable_tails() {
  const auto finite = cli::run_finite(kBoundary, 20, {2.0}, 500, 606, 0, threads());
  const auto hf = mcascade::stats::hill_index(finite.column(0, &cli::FiniteRecord::scaled_z));
  mcascade::LimitConfig cfg;
  cfg.k = 0;
  cfg.beta_min = 2.0;
  cli::LimitOptions opt;
  opt.betas = {2.0};
  const auto limit = cli::run_limit(kBoundary, cfg, opt, 500, 607, threads());
  const auto hl = mcascade::stats::hill_index(limit.root_i(0));
  return {std::fabs(hf.index - 0.5) <= 0.15 && std::fabs(hl.index - 0.5) <= 0.15,
          fmt("Hill scaled Z_20 = %.3f, Hill I(root) = %.3f (target 0.5 +- 0.15)", hf.index, hl.index)};
}

// 7 -------------------------------------------------------------------------

Outcome finite_dimensional() {
  constexpr int replicas = 500;
  int below = 0;
  std::string detail = "KS:";
  const double crit = mcascade::stats::ks_critical_value(replicas, replicas, 0.01);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto finite = cli::run_finite(kBoundary, 20, {1.5}, replicas, 700 + seed, 1, threads());
    mcascade::LimitConfig cfg;
    cfg.k = 1;
    cli::LimitOptions opt;
    opt.betas = {1.5};
    const auto pilot = cli::run_limit(kBoundary, cfg, opt, replicas, 800 + seed, threads());
    cfg.theta = cli::calibrated_theta(finite, pilot, 0, 1.0);
    const auto limit = cli::run_limit(kBoundary, cfg, opt, replicas, 800 + seed, threads());
    std::vector<double> fm;
    for (const auto& r : finite.rows) fm.push_back(r.masses.at(Vertex(1, 0).heap_index()));
    const auto ks = mcascade::stats::ks_two_sample(fm, limit.mass_column(0, Vertex(1, 0)));
    below += ks.statistic < crit;
    detail += fmt(" %.3f", ks.statistic);
  }
  detail += fmt(" (critical %.3f); %d/10 below", crit, below);
  return {below >= 8, detail};
}

// 8 -------------------------------------------------------------------------

Outcome superposability() {
  const double a = -std::log(0.3), b = -std::log(0.7);
  int passed = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    std::vector<double> min_d, min_m, cnt_d, cnt_m;
    auto below0 = [](const mcascade::DecoratedPPP& p) {
      return static_cast<double>(std::count_if(p.x.begin(), p.x.end(), [](double x) { return x < 0.0; }));
    };
    for (std::uint64_t r = 0; r < 500; ++r) {
      Stream rng(derive_stream_id(900 + seed, {r}));
      const auto direct = mcascade::sample_ppp(1.0, 1.5, 1e-2, {}, rng);
      const auto p1 = mcascade::sample_ppp(1.0, 1.5, 1e-2, {}, rng);
      const auto p2 = mcascade::sample_ppp(1.0, 1.5, 1e-2, {}, rng);
      const auto merged = mcascade::merge_shifted(p1, a, p2, b);
      min_d.push_back(direct.x.front());
      min_m.push_back(merged.x.front());
      cnt_d.push_back(below0(direct));
      cnt_m.push_back(below0(merged));
    }
    passed += !mcascade::stats::ks_two_sample(min_d, min_m).reject_at_1pct &&
              !mcascade::stats::ks_two_sample(cnt_d, cnt_m).reject_at_1pct;
  }
  return {passed >= 9, fmt("%d/10 seeds pass both KS tests at 1%%", passed)};
}

// 9 -------------------------------------------------------------------------

Outcome tv_continuity() {
  constexpr int samples = 200;
  const double h = 0.2;
  int smaller = 0;
  mcascade::LimitConfig cfg;
  cfg.k = 2;
  for (std::uint64_t r = 0; r < samples; ++r) {
    Stream rng(derive_stream_id(1000, {r}));
    const auto s = mcascade::build_limit_sample(kBoundary, cfg, rng);
    const std::vector<double> coarse{2.0 - h / 2, 2.0 + h / 2}, fine{2.0 - h / 4, 2.0 + h / 4};
    smaller += mcascade::tv_continuity_probe(s, fine)[0] < mcascade::tv_continuity_probe(s, coarse)[0];
  }
  return {smaller >= 0.95 * samples, fmt("%d/%d samples shrink when the step halves", smaller, samples)};
}

// 10 ------------------------------------------------------------------------

std::map<std::string, std::string> contents(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    std::ifstream is(e.path(), std::ios::binary);
    std::ostringstream ss;
    ss << is.rdbuf();
    out[fs::relative(e.path(), dir).string()] = ss.str();
  }
  return out;
}

Outcome determinism() {
  const fs::path root = fs::temp_directory_path() / "mcascade_acceptance_determinism";
  fs::remove_all(root);
  const std::vector<std::vector<std::string>> commands{
      {"classify", "--law", R"({"kind":"two_point","params":{"a":2.8,"b":0.1,"p":0.3333333333333333}})"},
      {"simulate", "--n", "6,10", "--replicas", "20", "--betas", "0.5,1.5", "--export"},
      {"limit", "--k", "2", "--N", "10", "--replicas", "10", "--betas", "1.5,2,3", "--export"},
      {"compare", "--n", "10", "--N", "10", "--replicas", "20"},
      {"fourier", "--n", "6", "--N", "8", "--replicas", "10", "--betas", "1.5"}};
  int identical = 0;
  std::string bad;
  for (const auto& base : commands) {
    std::vector<std::map<std::string, std::string>> runs;
    std::vector<std::string> stdouts;
    int run_index = 0;
    for (const std::string th : {"1", "1", "3"}) {
      const fs::path out = root / (base[0] + std::to_string(run_index++));
      auto args = base;
      args.insert(args.end(), {"--seed", "12345", "--threads", th, "--out", out.string()});
      std::ostringstream so, se;
      if (cli::run(args, so, se) != 0) bad += " " + base[0] + "(exit)";
      std::string text = so.str();
      // The trailer names the output directory, which differs by design.
      if (base[0] != "classify") text.clear();
      stdouts.push_back(text);
      runs.push_back(fs::exists(out) ? contents(out) : std::map<std::string, std::string>{});
    }
    const bool same = runs[0] == runs[1] && runs[0] == runs[2] && stdouts[0] == stdouts[1] &&
                      stdouts[0] == stdouts[2] && (base[0] == "classify" || !runs[0].empty());
    identical += same;
    if (!same) bad += " " + base[0];
  }
  fs::remove_all(root);
  return {identical == static_cast<int>(commands.size()) && bad.empty(),
          fmt("%d/%zu commands byte-identical across reruns and thread counts", identical, commands.size()) +
              (bad.empty() ? "" : "; differing:" + bad)};
}

}  // namespace

int main() {
  struct Criterion {
    int id;
    const char* name;
    double budget_s;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria{
      {1, "exact invariant suite", 60, exact_invariants},
      {2, "alpha solver", 1, alpha_solver},
      {3, "boundary normalization", 0, boundary_normalization},
      {4, "weak/strong dichotomy", 300, dichotomy},
      {5, "Aidekon-Shi ratio", 600, aidekon_shi},
      {6, "stable tails", 900, stable_tails},
      {7, "finite-dimensional convergence", 0, finite_dimensional},
      {8, "superposability", 0, superposability},
      {9, "TV continuity", 0, tv_continuity},
      {10, "determinism", 0, determinism},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const bool in_time = c.budget_s == 0 || secs <= c.budget_s;
    const bool pass = o.pass && in_time;
    failed += !pass;
    std::string timing = fmt("%.1fs", secs);
    if (c.budget_s > 0) timing += fmt(" of %.0fs budget", c.budget_s);
    std::printf("criterion %2d %-32s %s  [%s] %s\n", c.id, c.name, pass ? "PASS" : "FAIL", timing.c_str(),
                o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
