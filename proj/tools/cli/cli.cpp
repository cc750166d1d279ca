#include "cli.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <cstring>
#include <numbers>

#include <CLI11.hpp>

namespace mcascade::cli {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Configuration

namespace {

std::set<int> parse_set(const json& j) {
  std::set<int> s;
  for (const auto& v : j) s.insert(v.get<int>());
  return s;
}

template <typename T>
std::vector<T> scalar_or_list(const json& j) {
  if (j.is_array()) return j.get<std::vector<T>>();
  return {j.get<T>()};
}

}  // namespace

void validate(const RunConfig& c) {
  if (c.replicas < 1) throw UsageError("replicas must be >= 1");
  if (c.n.empty()) throw UsageError("n needs at least one depth");
  for (int n : c.n) {
    if (n < 1) throw UsageError("every n must be >= 1");
  }
  if (c.k < 0) throw UsageError("k must be >= 0");
  if (c.big_n < std::max(c.k, 1)) throw UsageError("N must be >= max(k, 1)");
  if (c.betas.empty()) throw UsageError("betas needs at least one value");
  for (double b : c.betas) {
    if (!(b > 0.0) || !std::isfinite(b)) throw UsageError("every beta must be positive");
  }
  if (!(c.theta > 0.0) || !std::isfinite(c.theta)) throw UsageError("theta must be positive");
  if (!(c.tail_tol > 0.0)) throw UsageError("tail_tol must be positive");
  if (c.threads < 1) throw UsageError("threads must be >= 1");
  if (c.genealogy_draws < 0) throw UsageError("genealogy_draws must be >= 0");
  if (c.depth_cap < 1) throw UsageError("depth_cap must be >= 1");
  for (const auto& f : c.fourier_sets) {
    if (!f.empty() && *f.begin() < 1) throw UsageError("Fourier indices must be positive");
  }
}

RunConfig config_from_json(const json& j, RunConfig c) {
  static const std::set<std::string> known{
      "law",   "n",          "k",           "N",           "betas",           "replicas",
      "seed",  "theta",      "decoration",  "tail_tol",    "fourier_sets",    "calibrate_theta",
      "export", "genealogy_draws", "depth_cap", "out",     "threads"};
  if (!j.is_object()) throw UsageError("configuration must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (!known.contains(key)) throw UsageError("unknown configuration key '" + key + "'");
  }
  try {
    if (j.contains("law")) c.law = WeightLaw::from_json(j["law"]);
    if (j.contains("n")) c.n = scalar_or_list<int>(j["n"]);
    if (j.contains("k")) c.k = j["k"].get<int>();
    if (j.contains("N")) c.big_n = j["N"].get<int>();
    if (j.contains("betas")) c.betas = scalar_or_list<double>(j["betas"]);
    if (j.contains("replicas")) c.replicas = j["replicas"].get<int>();
    if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("theta")) c.theta = j["theta"].get<double>();
    if (j.contains("decoration")) c.decoration = DecorationSpec::from_json(j["decoration"]);
    if (j.contains("tail_tol")) c.tail_tol = j["tail_tol"].get<double>();
    if (j.contains("fourier_sets")) {
      c.fourier_sets.clear();
      for (const auto& f : j["fourier_sets"]) c.fourier_sets.push_back(parse_set(f));
    }
    if (j.contains("calibrate_theta")) c.calibrate_theta = j["calibrate_theta"].get<bool>();
    if (j.contains("export")) c.export_binary = j["export"].get<bool>();
    if (j.contains("genealogy_draws")) c.genealogy_draws = j["genealogy_draws"].get<int>();
    if (j.contains("depth_cap")) c.depth_cap = j["depth_cap"].get<int>();
    if (j.contains("out")) c.out_dir = j["out"].get<std::string>();
    if (j.contains("threads")) c.threads = j["threads"].get<int>();
  } catch (const json::exception& e) {
    throw UsageError(std::string("malformed configuration: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  } catch (const DomainError& e) {
    throw UsageError(e.what());
  }
  validate(c);
  return c;
}

json canonical_config(const RunConfig& c) {
  json sets = json::array();
  for (const auto& f : c.fourier_sets) sets.push_back(std::vector<int>(f.begin(), f.end()));
  return {{"law", c.law.to_json()},
          {"n", c.n},
          {"k", c.k},
          {"N", c.big_n},
          {"betas", c.betas},
          {"replicas", c.replicas},
          {"seed", c.seed},
          {"theta", c.theta},
          {"decoration", c.decoration.to_json()},
          {"tail_tol", c.tail_tol},
          {"fourier_sets", sets},
          {"calibrate_theta", c.calibrate_theta},
          {"export", c.export_binary},
          {"genealogy_draws", c.genealogy_draws},
          {"depth_cap", c.depth_cap}};
}

std::string config_hash(const RunConfig& c) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : canonical_config(c).dump()) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// ---------------------------------------------------------------------------
// CSV

std::string format_double(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, res.ptr);
}

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"') out += '"';
    out += ch;
  }
  out += '"';
  return out;
}

std::string Cell::str() const {
  return std::visit(
      [](const auto& v) -> std::string {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, std::monostate>) {
          return "";
        } else if constexpr (std::is_same_v<T, double>) {
          return format_double(v);
        } else if constexpr (std::is_same_v<T, std::string>) {
          return csv_escape(v);
        } else {
          return std::to_string(v);
        }
      },
      v_);
}

CsvTable::CsvTable(const RunConfig& c, std::vector<std::string> columns)
    : prefix_{std::to_string(c.seed), config_hash(c), kVersion}, width_(columns.size()) {
  body_ = "seed,config_hash,version";
  for (const auto& col : columns) body_ += "," + csv_escape(col);
  body_ += "\r\n";
}

void CsvTable::row(std::vector<Cell> cells) {
  if (cells.size() != width_) throw Error("CSV row width mismatch");
  body_ += prefix_[0] + "," + prefix_[1] + "," + prefix_[2];
  for (const auto& cell : cells) body_ += "," + cell.str();
  body_ += "\r\n";
  ++rows_;
}

std::string CsvTable::str() const { return body_; }

std::vector<std::vector<std::string>> parse_csv(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool quoted = false;
  bool any = false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char ch = text[i];
    if (quoted) {
      if (ch == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field += ch;
      }
      continue;
    }
    if (ch == '"') {
      quoted = true;
      any = true;
    } else if (ch == ',') {
      row.push_back(std::move(field));
      field.clear();
      any = true;
    } else if (ch == '\r' || ch == '\n') {
      if (ch == '\r' && i + 1 < text.size() && text[i + 1] == '\n') ++i;
      row.push_back(std::move(field));
      field.clear();
      rows.push_back(std::move(row));
      row.clear();
      any = false;
    } else {
      field += ch;
      any = true;
    }
  }
  if (any || !field.empty()) {
    row.push_back(std::move(field));
    rows.push_back(std::move(row));
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Checks

void CheckSet::merge(const invariants::Check& c) {
  auto [it, inserted] = by_name.try_emplace(c.name, c);
  if (!inserted) {
    if (!(it->second.worst >= c.worst)) it->second.worst = c.worst;  // NaN propagates
    it->second.tolerance = std::min(it->second.tolerance, c.tolerance);
  }
}

void CheckSet::merge(const CheckSet& other) {
  for (const auto& [name, c] : other.by_name) merge(c);
}

bool CheckSet::all_passed() const {
  return std::all_of(by_name.begin(), by_name.end(),
                     [](const auto& kv) { return kv.second.passed(); });
}

std::vector<std::string> CheckSet::failures() const {
  std::vector<std::string> out;
  for (const auto& [name, c] : by_name) {
    if (!c.passed()) {
      out.push_back(name + ": worst " + format_double(c.worst) + " > tolerance " +
                    format_double(c.tolerance));
    }
  }
  return out;
}

json CheckSet::to_json() const {
  json out = json::array();
  for (const auto& [name, c] : by_name) {
    out.push_back({{"name", name},
                   {"worst", std::isfinite(c.worst) ? json(c.worst) : json(format_double(c.worst))},
                   {"tolerance", c.tolerance},
                   {"passed", c.passed()}});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Finite ensembles

std::vector<double> FiniteEnsemble::column(std::size_t beta_index,
                                           double FiniteRecord::*field) const {
  std::vector<double> out;
  out.reserve(rows.size() / std::max<std::size_t>(betas.size(), 1));
  for (std::size_t r = 0; r * betas.size() < rows.size(); ++r) out.push_back(at(r, beta_index).*field);
  return out;
}

FiniteEnsemble run_finite(const WeightLaw& law, int n, const std::vector<double>& betas,
                          int replicas, std::uint64_t seed, int mass_level, int threads, int cap,
                          const std::string& export_dir) {
  check_depth(n, cap);
  const int level = std::clamp(mass_level, 0, n);
  FiniteEnsemble e;
  e.n = n;
  e.betas = betas;
  e.rows.resize(static_cast<std::size_t>(replicas) * betas.size());
  std::vector<CheckSet> checks(static_cast<std::size_t>(replicas));
  if (!export_dir.empty()) fs::create_directories(export_dir);
  parallel_for(static_cast<std::size_t>(replicas), threads, [&](std::size_t r) {
    Stream rng(derive_stream_id(seed, {kTagFinite, static_cast<std::uint64_t>(n), r}));
    const CascadeRealization real = simulate_tree(law, n, rng, cap);
    if (!export_dir.empty()) {
      std::ofstream os(fs::path(export_dir) /
                           ("n" + std::to_string(n) + "_r" + std::to_string(r) + ".bin"),
                       std::ios::binary);
      write_realization(os, real);
    }
    const std::vector<double> h = energies(real);
    numerics::CompensatedSum w;
    for (double x : h) w += std::exp(-x);
    for (std::size_t b = 0; b < betas.size(); ++b) {
      const PartitionTable t = partition_table(real, betas[b], level);
      FiniteRecord& row = e.rows[r * betas.size() + b];
      row.replica = r;
      row.n = n;
      row.beta = betas[b];
      row.z = t.z;
      row.log_z = t.log_z;
      row.m = t.m;
      row.d = t.d;
      row.w = static_cast<double>(w.value());
      row.min_energy = t.min_energy;
      row.scaled_z = t.scaled_z;
      row.log_scaled_z = t.log_scaled_z;
      row.masses.assign(std::size_t{2} << level, 0.0);
      for (std::size_t i = 1; i < row.masses.size(); ++i) {
        row.masses[i] = vertex_measure(t, Vertex::from_heap(i));
      }
      checks[r].merge(invariants::z_additivity(t, real));
      checks[r].merge(invariants::partition_of_unity(t));
      checks[r].merge(invariants::free_energy_bounds(t));
    }
  });
  for (const auto& c : checks) e.checks.merge(c);
  return e;
}

// ---------------------------------------------------------------------------
// Limit ensembles

std::vector<double> LimitEnsemble::root_i(std::size_t beta_index) const {
  std::vector<double> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(s.i_values[beta_index][1]);
  return out;
}

std::vector<double> LimitEnsemble::mass_column(std::size_t beta_index, const Vertex& v) const {
  std::vector<double> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(s.masses[beta_index][v.heap_index()]);
  return out;
}

std::vector<double> NormalizedLaw::map_betas(const std::vector<double>& betas) const {
  std::vector<double> out;
  out.reserve(betas.size());
  for (double b : betas) out.push_back(b / alpha);
  return out;
}

NormalizedLaw limit_law(const WeightLaw& law) {
  NormalizedLaw out;
  if (law.form() == LawForm::energy) {
    if (!is_boundary_normalized(law)) {
      const auto [r0, r1] = boundary_residuals(law);
      throw UsageError("W-form law " + law.to_json().dump() +
                       " is not boundary-normalized (E e^{-W} - 1/2 = " + format_double(r0) +
                       ", E W e^{-W} = " + format_double(r1) +
                       "); give the X-form law instead to normalize it automatically");
    }
    out.law = law;
    out.note = {{"normalization", "none"}, {"alpha", 1.0}};
    return out;
  }
  const DisorderClass dc = classify_disorder(law);
  if (dc.cls == Disorder::weak) {
    throw UsageError("law " + law.to_json().dump() +
                     " is weakly disordered; the limit construction needs critical or strong disorder");
  }
  out.alpha = dc.cls == Disorder::strong ? solve_alpha(law) : 1.0;
  out.law = x_to_w(law, out.alpha);
  out.note = {{"normalization", "x_to_w"},
              {"alpha", out.alpha},
              {"source_law", law.to_json()},
              {"boundary_law", out.law.to_json()}};
  return out;
}

namespace {

json limit_meta(const LimitSample& s, const WeightLaw& law, std::uint64_t seed,
                std::uint64_t sample) {
  return {{"law", law.to_json()},
          {"k", s.k()},
          {"N", s.field.leaf_depth},
          {"theta", s.theta},
          {"strip_length", s.ppp.strip_length},
          {"beta_min", s.ppp.beta_min},
          {"tail_tol", s.ppp.tail_tol},
          {"tail_bound", s.ppp.tail_bound},
          {"centers", s.ppp.size()},
          {"resampled", s.field.resampled},
          {"seed", seed},
          {"sample", sample},
          {"version", kVersion}};
}

}  // namespace

LimitEnsemble run_limit(const WeightLaw& law, const LimitConfig& cfg, const LimitOptions& opt,
                        int replicas, std::uint64_t seed, int threads) {
  if (opt.betas.empty()) throw UsageError("limit constructions need at least one beta");
  for (double b : opt.betas) {
    if (!(b > 1.0)) {
      throw UsageError("limit constructions need every beta > 1 after normalization; got " +
                       format_double(b));
    }
  }
  LimitEnsemble e;
  e.betas = opt.betas;
  e.samples.resize(static_cast<std::size_t>(replicas));
  std::vector<CheckSet> checks(static_cast<std::size_t>(replicas));
  if (!opt.export_dir.empty()) fs::create_directories(opt.export_dir);
  std::vector<double> grid = opt.betas;
  std::sort(grid.begin(), grid.end());
  const int gdepth = opt.genealogy_depth < 0 ? cfg.k : std::min(opt.genealogy_depth, cfg.k);

  parallel_for(static_cast<std::size_t>(replicas), threads, [&](std::size_t s) {
    LimitRecord& rec = e.samples[s];
    rec.sample = s;
    LimitSample sample;
    for (std::size_t retry = 0;; ++retry) {
      Stream rng(retry == 0 ? derive_stream_id(seed, {kTagLimit, s})
                            : derive_stream_id(seed, {kTagLimit, s, retry}));
      sample = build_limit_sample(law, cfg, rng);
      rec.i_values.clear();
      bool degenerate = false;
      for (double b : opt.betas) {
        rec.i_values.push_back(compute_I(sample, b));
        if (!(rec.i_values.back()[1] > 0.0) || !std::isfinite(rec.i_values.back()[1])) {
          degenerate = true;
        }
      }
      if (!degenerate) break;
      if (retry >= 100) throw DegenerateSample("limit sample stayed degenerate after 100 retries");
      ++rec.degenerate_retries;
    }
    rec.theta = sample.theta;
    rec.d_root = sample.field.root();
    rec.centers = sample.ppp.size();
    rec.tail_bound = sample.ppp.tail_bound;
    rec.resampled = sample.field.resampled;
    rec.attempts = sample.field.attempts;

    CheckSet& cs = checks[s];
    cs.merge(invariants::field_recursion(sample.field));
    cs.merge(invariants::interval_tiling(sample.intervals));
    for (std::size_t b = 0; b < opt.betas.size(); ++b) {
      std::vector<double> mass = rec.i_values[b];
      const double root = mass[1];
      for (double& m : mass) m /= root;
      cs.merge(invariants::i_additivity(rec.i_values[b]));
      cs.merge(invariants::limit_partition_of_unity(mass));
      cs.merge(invariants::truncation_soundness(sample, opt.betas[b]));
      rec.masses.push_back(std::move(mass));
    }
    const double b1 = grid.front();
    for (const auto& c : invariants::rn_identities(sample, b1, b1 + 0.25, b1 + 0.5)) cs.merge(c);

    const std::size_t rn_count = std::min(opt.rn_centers, sample.ppp.size());
    for (std::size_t c = 0; c < rn_count; ++c) {
      for (std::size_t i = 0; i < opt.betas.size(); ++i) {
        for (std::size_t j = 0; j < opt.betas.size(); ++j) {
          if (i == j) continue;
          rec.rn.push_back({c, sample.ppp.t[c], sample.ppp.x[c], opt.betas[i], opt.betas[j],
                            rn_derivative(sample, sample.ppp.t[c], opt.betas[i], opt.betas[j],
                                          rec.i_values[i][1], rec.i_values[j][1])});
        }
      }
    }
    if (opt.tv && grid.size() >= 2) rec.tv = tv_continuity_probe(sample, grid);

    Stream g(derive_stream_id(seed, {kTagGenealogy, s}));
    for (double b : opt.betas) {
      if (opt.genealogy_draws > 0) {
        rec.genealogy.push_back(
            genealogy_sample(sample, b, gdepth, static_cast<std::size_t>(opt.genealogy_draws), g));
      }
      if (opt.pair_coincidence && cfg.k >= 1) {
        const auto pair = genealogy_sample(sample, b, 1, 2, g);
        rec.pair_hit.push_back(pair[0] == pair[1] ? 1 : 0);
      }
    }

    if (!opt.export_dir.empty()) {
      std::ofstream os(fs::path(opt.export_dir) / ("sample_" + std::to_string(s) + ".bin"),
                       std::ios::binary);
      write_limit_sample(os, sample, limit_meta(sample, law, seed, s));
    }
  });
  for (const auto& c : checks) e.checks.merge(c);
  return e;
}

double calibrated_theta(const FiniteEnsemble& finite, const LimitEnsemble& limit,
                        std::size_t beta_index, double theta0) {
  const auto fz = finite.column(beta_index, &FiniteRecord::scaled_z);
  const auto li = limit.root_i(beta_index);
  return calibrate_theta(fz, li, theta0, limit.betas[beta_index]);
}

// ---------------------------------------------------------------------------
// Binary limit samples

namespace {

template <typename T>
void put_array(std::ostream& os, const std::vector<T>& v) {
  detail::put_le<std::uint64_t>(os, v.size());
  for (const T& x : v) detail::put_le<T>(os, x);
}

template <typename T>
std::vector<T> get_array(std::istream& is) {
  const auto n = detail::get_le<std::uint64_t>(is);
  if (n > (std::uint64_t{1} << 36)) throw Error("corrupt limit-sample file: array too long");
  std::vector<T> v(n);
  for (T& x : v) x = detail::get_le<T>(is);
  return v;
}

}  // namespace

void write_limit_sample(std::ostream& os, const LimitSample& s, const json& meta) {
  os.write(kLimitMagic, sizeof kLimitMagic);
  detail::put_le<std::uint32_t>(os, kLimitVersion);
  const std::string text = meta.dump();
  detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(text.size()));
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  put_array(os, s.field.d);
  put_array(os, s.field.w);
  put_array(os, s.ppp.x);
  put_array(os, s.ppp.t);
  std::vector<std::uint64_t> offsets(s.ppp.deco_offsets.begin(), s.ppp.deco_offsets.end());
  put_array(os, offsets);
  put_array(os, s.ppp.deco_values);
  if (!os) throw Error("failed to write limit-sample file");
}

LimitSampleFile read_limit_sample(std::istream& is) {
  char magic[8];
  if (!is.read(magic, sizeof magic) || std::memcmp(magic, kLimitMagic, sizeof magic) != 0) {
    throw Error("not a limit-sample file (bad magic)");
  }
  if (detail::get_le<std::uint32_t>(is) != kLimitVersion) {
    throw Error("unsupported limit-sample file version");
  }
  const auto len = detail::get_le<std::uint32_t>(is);
  std::string text(len, '\0');
  if (!is.read(text.data(), len)) throw Error("truncated limit-sample header");
  LimitSampleFile f;
  f.meta = json::parse(text);
  f.d = get_array<double>(is);
  f.w = get_array<double>(is);
  f.x = get_array<double>(is);
  f.t = get_array<double>(is);
  f.deco_offsets = get_array<std::uint64_t>(is);
  f.deco_values = get_array<double>(is);
  return f;
}

// ---------------------------------------------------------------------------
// Commands

namespace {

json base_manifest(const RunConfig& c, const std::string& command) {
  return {{"schema", kManifestSchema},
          {"command", command},
          {"version", kVersion},
          {"seed", c.seed},
          {"config_hash", config_hash(c)},
          {"config", canonical_config(c)}};
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream os(p, std::ios::binary);
  os << text;
  if (!os) throw Error("failed to write " + p.string());
}

class Outputs {
 public:
  Outputs(const RunConfig& c, std::string command)
      : dir_(c.out_dir), command_(std::move(command)), manifest_(base_manifest(c, command_)) {
    fs::create_directories(dir_);
  }

  void add(const std::string& name, const CsvTable& table) {
    write_text(dir_ / name, table.str());
    files_.push_back(name);
  }
  void add_dir(const std::string& name) { files_.push_back(name + "/"); }
  json& manifest() { return manifest_; }
  fs::path dir() const { return dir_; }

  CommandResult finish(const CheckSet& checks) {
    CommandResult r;
    r.exit_code = checks.all_passed() ? kExitOk : kExitInvariant;
    manifest_["files"] = files_;
    manifest_["invariants"] = checks.to_json();
    manifest_["exit_code"] = r.exit_code;
    const std::string name = command_ + ".manifest.json";
    write_text(dir_ / name, manifest_.dump(2) + "\n");
    files_.push_back(name);
    r.manifest = manifest_;
    r.files = files_;
    return r;
  }

 private:
  fs::path dir_;
  std::string command_;
  json manifest_;
  std::vector<std::string> files_;
};

std::vector<int> sorted_depths(const std::vector<int>& ns) {
  std::vector<int> out = ns;
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

json hill_json(std::span<const double> xs) {
  if (xs.size() < 100) return nullptr;
  try {
    const auto h = stats::hill_index(xs);
    return {{"index", h.index}, {"ci_low", h.ci_low}, {"ci_high", h.ci_high}, {"k_used", h.k_used}};
  } catch (const Error&) {
    return nullptr;
  }
}

Cell json_cell(const json& j, const char* key) {
  return j.is_null() ? Cell() : Cell(j[key].get<double>());
}

std::string set_label(const std::set<int>& f) {
  std::string s;
  for (int j : f) s += (s.empty() ? "" : ",") + std::to_string(j);
  return s;
}

double mean(std::span<const double> xs) {
  numerics::CompensatedSum s;
  for (double x : xs) s += x;
  return static_cast<double>(s.value()) / static_cast<double>(xs.size());
}

double stderr_of_mean(std::span<const double> xs) {
  if (xs.size() < 2) return 0.0;
  const double mu = mean(xs);
  numerics::CompensatedSum s;
  for (double x : xs) s += (x - mu) * (x - mu);
  return std::sqrt(static_cast<double>(s.value()) / static_cast<double>(xs.size() - 1) /
                   static_cast<double>(xs.size()));
}

LimitConfig limit_config(const RunConfig& c, const std::vector<double>& betas, int k) {
  LimitConfig cfg;
  cfg.k = k;
  cfg.leaf_depth = c.big_n;
  cfg.theta = c.theta;
  cfg.beta_min = *std::min_element(betas.begin(), betas.end());
  cfg.tail_tol = c.tail_tol;
  cfg.decoration = c.decoration;
  cfg.depth_cap = c.depth_cap;
  return cfg;
}

}  // namespace

CommandResult cmd_classify(const RunConfig& c, std::ostream& out) {
  json r = base_manifest(c, "classify");
  const LawMoments m = compute_moments(c.law);
  const DisorderClass dc = classify_disorder(c.law);
  r["law"] = c.law.to_json();
  r["class"] = to_string(dc.cls);
  r["margin"] = dc.margin;
  r["mean_x"] = m.mean_x;
  r["x_log_x"] = m.x_log_x;
  r["sigma_sq"] = m.sigma_sq;
  r["lattice"] = c.law.is_lattice();
  r["alpha"] = nullptr;
  r["boundary_law"] = nullptr;
  r["residuals"] = nullptr;
  CheckSet checks;
  auto residuals = [&](const WeightLaw& w, bool enforce) {
    const auto [r0, r1] = boundary_residuals(w);
    r["residuals"] = {{"e_exp_minus_w_minus_half", r0}, {"e_w_exp_minus_w", r1}};
    if (enforce) {
      checks.merge({"boundary_normalization", std::max(std::fabs(r0), std::fabs(r1)), 1e-8});
    }
  };
  if (c.law.form() == LawForm::energy) {
    residuals(c.law, false);
    r["boundary_law"] = is_boundary_normalized(c.law) ? c.law.to_json() : json(nullptr);
  } else if (dc.cls != Disorder::weak) {
    const double alpha = dc.cls == Disorder::strong ? solve_alpha(c.law) : 1.0;
    const WeightLaw w = x_to_w(c.law, alpha);
    r["alpha"] = alpha;
    r["boundary_law"] = w.to_json();
    residuals(w, true);
  }
  r["invariants"] = checks.to_json();
  out << r.dump(2) << "\n";
  CommandResult res;
  res.exit_code = checks.all_passed() ? kExitOk : kExitInvariant;
  res.manifest = r;
  return res;
}

CommandResult cmd_simulate(const RunConfig& c) {
  Outputs out(c, "simulate");
  CsvTable rows(c, {"replica", "n", "beta", "Z", "M", "D", "min_energy", "scaled_Z", "log_Z"});
  CsvTable summary(c, {"n", "beta", "replicas", "median_M", "mean_M", "stderr_M",
                       "median_scaled_Z", "hill_scaled_Z", "hill_ci_low", "hill_ci_high"});
  const bool boundary = c.law.form() == LawForm::energy && is_boundary_normalized(c.law);
  std::map<int, std::vector<double>> ratios;
  std::map<int, std::size_t> discarded;
  CheckSet checks;
  const std::string export_dir = c.export_binary ? (out.dir() / "realizations").string() : "";
  for (int n : sorted_depths(c.n)) {
    const FiniteEnsemble e = run_finite(c.law, n, c.betas, c.replicas, c.seed, std::min(c.k, n),
                                        c.threads, c.depth_cap, export_dir);
    checks.merge(e.checks);
    for (const auto& row : e.rows) {
      rows.row({row.replica, n, row.beta, row.z, row.m, row.d, row.min_energy, row.scaled_z,
                row.log_z});
    }
    for (std::size_t b = 0; b < c.betas.size(); ++b) {
      const auto ms = e.column(b, &FiniteRecord::m);
      const auto sz = e.column(b, &FiniteRecord::scaled_z);
      const json hill = hill_json(sz);
      summary.row({n, c.betas[b], c.replicas, stats::median(ms), mean(ms), stderr_of_mean(ms),
                   stats::median(sz), json_cell(hill, "index"), json_cell(hill, "ci_low"),
                   json_cell(hill, "ci_high")});
    }
    if (boundary) {
      auto& v = ratios[n];
      for (std::size_t r = 0; r < static_cast<std::size_t>(c.replicas); ++r) {
        const FiniteRecord& row = e.at(r, 0);
        if (row.d > 0.0) {
          v.push_back(std::sqrt(static_cast<double>(n)) * row.w / row.d);
        } else {
          ++discarded[n];
        }
      }
    }
  }
  out.add("simulate.csv", rows);
  out.add("simulate_summary.csv", summary);
  if (c.export_binary) out.add_dir("realizations");

  json trace_note = "requires a boundary-normalized W law and at least two depths";
  const bool nonempty = std::all_of(ratios.begin(), ratios.end(),
                                    [](const auto& kv) { return !kv.second.empty(); });
  if (boundary && ratios.size() >= 2 && nonempty) {
    const double target = std::sqrt(2.0 / (std::numbers::pi * compute_moments(c.law).sigma_sq));
    const auto trace = stats::convergence_trace(ratios, target, stats::kBootstrapResamples, c.seed);
    CsvTable t(c, {"n", "median", "band_low", "band_high", "deviation", "count", "discarded",
                   "target", "monotone_approach"});
    for (const auto& p : trace.points) {
      t.row({p.n, p.median, p.band_low, p.band_high, p.deviation, p.count, discarded[p.n], target,
             trace.monotone_approach});
    }
    out.add("aidekon_shi.csv", t);
    trace_note = {{"target", target}, {"monotone_approach", trace.monotone_approach}};
  }
  out.manifest()["aidekon_shi"] = trace_note;
  return out.finish(checks);
}

CommandResult cmd_limit(const RunConfig& c) {
  const NormalizedLaw nl = limit_law(c.law);
  const std::vector<double> betas = nl.map_betas(c.betas);
  Outputs out(c, "limit");
  out.manifest()["normalization"] = nl.note;
  out.manifest()["betas_normalized"] = betas;
  LimitConfig cfg = limit_config(c, betas, c.k);
  CheckSet checks;
  if (c.calibrate_theta) {
    const int n = *std::max_element(c.n.begin(), c.n.end());
    const FiniteEnsemble f =
        run_finite(nl.law, n, {betas[0]}, c.replicas, c.seed, 0, c.threads, c.depth_cap);
    LimitOptions pre_opt;
    pre_opt.betas = {betas[0]};
    const LimitEnsemble pre = run_limit(nl.law, cfg, pre_opt, c.replicas, c.seed, c.threads);
    checks.merge(f.checks);
    checks.merge(pre.checks);
    cfg.theta = calibrated_theta(f, pre, 0, c.theta);
    out.manifest()["theta_calibration"] = {
        {"reference_beta", c.betas[0]}, {"n", n}, {"theta0", c.theta}, {"theta", cfg.theta}};
  }
  LimitOptions opt;
  opt.betas = betas;
  opt.genealogy_draws = c.genealogy_draws;
  opt.rn_centers = 5;
  opt.tv = true;
  if (c.export_binary) opt.export_dir = (out.dir() / "limit_samples").string();
  const LimitEnsemble e = run_limit(nl.law, cfg, opt, c.replicas, c.seed, c.threads);
  checks.merge(e.checks);

  CsvTable masses(c, {"sample", "beta", "vertex", "depth", "I", "mass"});
  CsvTable summary(c, {"sample", "beta", "theta", "D_root", "centers", "tail_bound", "resampled",
                       "attempts", "I_root", "max_mass"});
  CsvTable rn(c, {"sample", "center", "t", "x", "beta1", "beta2", "rn"});
  CsvTable tv(c, {"sample", "beta_left", "beta_right", "tv"});
  CsvTable gen(c, {"sample", "beta", "draw", "vertex"});
  std::vector<double> grid = c.betas;
  std::sort(grid.begin(), grid.end());
  const double a = nl.alpha;
  std::size_t retries = 0;
  for (const auto& s : e.samples) {
    retries += s.degenerate_retries;
    for (std::size_t b = 0; b < c.betas.size(); ++b) {
      const auto& iv = s.i_values[b];
      const auto& mv = s.masses[b];
      for (std::size_t i = 1; i < iv.size(); ++i) {
        const Vertex v = Vertex::from_heap(i);
        masses.row({s.sample, c.betas[b], v.path(), v.depth(), iv[i], mv[i]});
      }
      const auto level = limit_level_masses(mv, c.k);
      summary.row({s.sample, c.betas[b], s.theta, s.d_root, s.centers, s.tail_bound, s.resampled,
                   s.attempts, iv[1], *std::max_element(level.begin(), level.end())});
      if (b < s.genealogy.size()) {
        for (std::size_t d = 0; d < s.genealogy[b].size(); ++d) {
          gen.row({s.sample, c.betas[b], d, s.genealogy[b][d].path()});
        }
      }
    }
    for (const auto& r : s.rn) {
      rn.row({s.sample, r.center, r.t, r.x, r.beta1 * a, r.beta2 * a, r.rn});
    }
    for (std::size_t i = 0; i < s.tv.size(); ++i) {
      tv.row({s.sample, grid[i], grid[i + 1], s.tv[i]});
    }
  }
  out.add("limit_masses.csv", masses);
  out.add("limit_summary.csv", summary);
  out.add("limit_rn.csv", rn);
  out.add("limit_tv.csv", tv);
  out.add("limit_genealogy.csv", gen);
  CsvTable tails(c, {"beta", "samples", "hill_index", "ci_low", "ci_high"});
  json tail_json = json::array();
  for (std::size_t b = 0; b < c.betas.size(); ++b) {
    const json h = hill_json(e.root_i(b));
    tails.row({c.betas[b], c.replicas, json_cell(h, "index"), json_cell(h, "ci_low"),
               json_cell(h, "ci_high")});
    tail_json.push_back({{"beta", c.betas[b]}, {"hill", h}});
  }
  out.add("limit_tails.csv", tails);
  if (c.export_binary) out.add_dir("limit_samples");

  double max_bound = 0.0;
  std::size_t min_centers = std::numeric_limits<std::size_t>::max(), max_centers = 0;
  std::size_t resampled = 0;
  for (const auto& s : e.samples) {
    max_bound = std::max(max_bound, s.tail_bound);
    min_centers = std::min(min_centers, s.centers);
    max_centers = std::max(max_centers, s.centers);
    resampled += s.resampled;
  }
  out.manifest()["law"] = nl.law.to_json();
  out.manifest()["theta"] = cfg.theta;
  out.manifest()["beta_range"] = {grid.front(), grid.back()};
  out.manifest()["truncation"] = {{"tail_tol", c.tail_tol},
                                  {"max_tail_bound", max_bound},
                                  {"min_centers", min_centers},
                                  {"max_centers", max_centers}};
  out.manifest()["resampled_leaves"] = resampled;
  out.manifest()["degenerate_retries"] = retries;
  out.manifest()["tails"] = tail_json;
  return out.finish(checks);
}

CommandResult cmd_compare(const RunConfig& c) {
  if (c.law.is_lattice()) {
    throw UsageError("law " + c.law.to_json().dump() +
                     " is lattice (finitely supported); the limit theorem assumes a non-lattice "
                     "law, so finite-n versus limit comparisons are refused");
  }
  const NormalizedLaw nl = limit_law(c.law);
  const std::vector<double> betas = nl.map_betas(c.betas);
  Outputs out(c, "compare");
  out.manifest()["normalization"] = nl.note;
  out.manifest()["betas_normalized"] = betas;
  const int n = *std::max_element(c.n.begin(), c.n.end());
  const int k = std::max(c.k, 2);
  CheckSet checks;

  const FiniteEnsemble finite =
      run_finite(nl.law, n, betas, c.replicas, c.seed, 2, c.threads, c.depth_cap);
  checks.merge(finite.checks);
  LimitConfig cfg = limit_config(c, betas, k);
  LimitOptions opt;
  opt.betas = betas;
  opt.pair_coincidence = true;
  LimitEnsemble limit = run_limit(nl.law, cfg, opt, c.replicas, c.seed, c.threads);
  if (c.calibrate_theta) {
    checks.merge(limit.checks);
    cfg.theta = calibrated_theta(finite, limit, 0, c.theta);
    limit = run_limit(nl.law, cfg, opt, c.replicas, c.seed, c.threads);
    out.manifest()["theta_calibration"] = {
        {"reference_beta", c.betas[0]}, {"n", n}, {"theta0", c.theta}, {"theta", cfg.theta}};
  }
  checks.merge(limit.checks);
  out.manifest()["theta"] = cfg.theta;

  CsvTable tests(c, {"test", "beta", "vertex", "statistic", "p_approx", "reject_at_1pct",
                     "size_a", "size_b"});
  auto emit = [&](const std::string& name, double beta, const std::string& vertex,
                  const stats::TestResult& r) {
    tests.row({name, beta, vertex, r.statistic, r.p_approx, r.reject_at_1pct, r.sample_sizes.first,
               r.sample_sizes.second});
  };
  for (std::size_t b = 0; b < betas.size(); ++b) {
    for (int j = 1; j <= 2; ++j) {
      for (std::uint64_t code = 0; code < (std::uint64_t{1} << j); ++code) {
        const Vertex v(j, code);
        std::vector<double> fm;
        for (std::size_t r = 0; r < static_cast<std::size_t>(c.replicas); ++r) {
          fm.push_back(finite.at(r, b).masses[v.heap_index()]);
        }
        emit("ks_cylinder_mass_depth" + std::to_string(j), c.betas[b], v.path(),
             stats::ks_two_sample(fm, limit.mass_column(b, v)));
      }
    }
    std::size_t finite_hits = 0, limit_hits = 0;
    for (std::size_t r = 0; r < static_cast<std::size_t>(c.replicas); ++r) {
      Stream g(derive_stream_id(c.seed, {kTagFiniteGenealogy, r, b}));
      const double p = finite.at(r, b).masses[Vertex(1, 0).heap_index()];
      const bool first = g.uniform() < p;
      const bool second = g.uniform() < p;
      finite_hits += first == second ? 1 : 0;
      limit_hits += static_cast<std::size_t>(limit.samples[r].pair_hit[b]);
    }
    emit("genealogy_pair_coincidence", c.betas[b], "",
         stats::two_proportion_test(finite_hits, static_cast<std::size_t>(c.replicas), limit_hits,
                                    static_cast<std::size_t>(c.replicas)));
  }

  // Superposability of the center process: with e^{-a} + e^{-b} = 1, merging
  // shifted copies reproduces the law of a direct sample.
  const double shift_a = -std::log(0.3), shift_b = -std::log(0.7);
  std::vector<double> direct_min, merged_min, direct_count, merged_count;
  for (std::size_t i = 0; i < static_cast<std::size_t>(c.replicas); ++i) {
    Stream rs(derive_stream_id(c.seed, {kTagSuperposition, i}));
    const auto direct = sample_ppp(1.0, cfg.beta_min, c.tail_tol, c.decoration, rs);
    const auto pa = sample_ppp(1.0, cfg.beta_min, c.tail_tol, c.decoration, rs);
    const auto pb = sample_ppp(1.0, cfg.beta_min, c.tail_tol, c.decoration, rs);
    const auto merged = merge_shifted(pa, shift_a, pb, shift_b);
    auto count_below = [](const DecoratedPPP& p) {
      return static_cast<double>(std::upper_bound(p.x.begin(), p.x.end(), 0.0) - p.x.begin());
    };
    direct_min.push_back(direct.x.front());
    merged_min.push_back(merged.x.front());
    direct_count.push_back(count_below(direct));
    merged_count.push_back(count_below(merged));
  }
  emit("superposition_min_center", 0.0, "", stats::ks_two_sample(direct_min, merged_min));
  emit("superposition_count_below_0", 0.0, "", stats::ks_two_sample(direct_count, merged_count));
  out.add("compare_tests.csv", tests);

  CsvTable tails(c, {"ensemble", "beta", "samples", "hill_index", "ci_low", "ci_high"});
  for (std::size_t b = 0; b < betas.size(); ++b) {
    const json hf = hill_json(finite.column(b, &FiniteRecord::scaled_z));
    const json hl = hill_json(limit.root_i(b));
    tails.row({"finite_scaled_Z", c.betas[b], c.replicas, json_cell(hf, "index"),
               json_cell(hf, "ci_low"), json_cell(hf, "ci_high")});
    tails.row({"limit_I_root", c.betas[b], c.replicas, json_cell(hl, "index"),
               json_cell(hl, "ci_low"), json_cell(hl, "ci_high")});
  }
  out.add("compare_tails.csv", tails);
  out.manifest()["law"] = nl.law.to_json();
  out.manifest()["n"] = n;
  out.manifest()["k"] = k;
  out.manifest()["superposition_shifts"] = {shift_a, shift_b};
  return out.finish(checks);
}

CommandResult cmd_fourier(const RunConfig& c) {
  int level = 0;
  for (const auto& f : c.fourier_sets) {
    if (!f.empty()) level = std::max(level, *f.rbegin());
  }
  const auto depths = sorted_depths(c.n);
  if (level > depths.front()) {
    throw UsageError("max F = " + std::to_string(level) + " exceeds the stored depth n = " +
                     std::to_string(depths.front()));
  }
  Outputs out(c, "fourier");
  CsvTable rows(c, {"source", "F", "n", "beta", "replica", "value", "direct", "discrepancy"});
  CheckSet checks;
  const std::size_t nb = c.betas.size(), nf = c.fourier_sets.size();
  for (int n : depths) {
    std::vector<FourierCoefficient> coeff(static_cast<std::size_t>(c.replicas) * nb * nf);
    parallel_for(static_cast<std::size_t>(c.replicas), c.threads, [&](std::size_t r) {
      Stream rng(derive_stream_id(c.seed, {kTagFinite, static_cast<std::uint64_t>(n), r}));
      const CascadeRealization real = simulate_tree(c.law, n, rng, c.depth_cap);
      for (std::size_t b = 0; b < nb; ++b) {
        const PartitionTable t = partition_table(real, c.betas[b], level);
        for (std::size_t f = 0; f < nf; ++f) {
          coeff[(r * nb + b) * nf + f] = fourier_coeff(t, real, c.fourier_sets[f]);
        }
      }
    });
    for (std::size_t f = 0; f < nf; ++f) {
      for (std::size_t b = 0; b < nb; ++b) {
        for (std::size_t r = 0; r < static_cast<std::size_t>(c.replicas); ++r) {
          const auto& fc = coeff[(r * nb + b) * nf + f];
          checks.merge(invariants::fourier_routes(fc));
          rows.row({"finite", set_label(c.fourier_sets[f]), n, c.betas[b], r, fc.value, fc.direct,
                    fc.discrepancy()});
        }
      }
    }
  }

  json limit_note;
  std::string skip;
  NormalizedLaw nl;
  if (c.law.is_lattice()) {
    skip = "lattice law: the limit theorem assumes a non-lattice law";
  } else {
    try {
      nl = limit_law(c.law);
    } catch (const UsageError& e) {
      skip = e.what();
    }
  }
  const std::vector<double> betas = nl.map_betas(c.betas);
  if (skip.empty() && !std::all_of(betas.begin(), betas.end(), [](double b) { return b > 1.0; })) {
    skip = "limit analogue needs every normalized beta > 1";
  }
  if (skip.empty()) {
    LimitOptions opt;
    opt.betas = betas;
    const LimitEnsemble e =
        run_limit(nl.law, limit_config(c, betas, level), opt, c.replicas, c.seed, c.threads);
    checks.merge(e.checks);
    for (std::size_t f = 0; f < nf; ++f) {
      const auto& fs_ = c.fourier_sets[f];
      const int m = fs_.empty() ? 0 : *fs_.rbegin();
      for (std::size_t b = 0; b < nb; ++b) {
        for (const auto& s : e.samples) {
          numerics::CompensatedSum acc;
          for (std::uint64_t code = 0; code < (std::uint64_t{1} << m); ++code) {
            const Vertex v(m, code);
            acc += character(fs_, v) * s.masses[b][v.heap_index()];
          }
          rows.row({"limit", set_label(fs_), Cell(), c.betas[b], s.sample,
                    static_cast<double>(acc.value()), Cell(), Cell()});
        }
      }
    }
    limit_note = {{"k", level}, {"normalization", nl.note}, {"betas_normalized", betas}};
  } else {
    limit_note = {{"skipped", skip}};
  }
  out.add("fourier.csv", rows);
  out.manifest()["limit"] = limit_note;
  return out.finish(checks);
}

// ---------------------------------------------------------------------------
// Entry point

namespace {

json parse_json_flag(const std::string& name, const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw UsageError("--" + name + " is not valid JSON: " + e.what());
  }
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Simulation and verification of normalized multiplicative cascades", "mcascade"};
  app.require_subcommand(1);

  std::string config_path, law_text, decoration_text, fourier_text, out_dir;
  std::vector<int> ns;
  std::vector<double> betas;
  int k = 0, big_n = 0, replicas = 0, threads = 0, genealogy_draws = 0;
  std::uint64_t seed = 0;
  double theta = 0.0, tail_tol = 0.0;
  bool calibrate = false, export_binary = false;
  std::map<std::string, CLI::Option*> opts;

  const std::vector<std::pair<std::string, std::string>> commands{
      {"classify", "Disorder class, moments, alpha and boundary-normalization residuals (JSON)"},
      {"simulate", "Finite-depth replicas: Z, M, D, min energy, scaled Z, Aidekon-Shi trace"},
      {"limit", "Limit samples: cylinder masses, I values, RN derivatives, TV probe, genealogy"},
      {"compare", "Finite-n versus limit ensembles: KS tests, tail indices, superposability"},
      {"fourier", "Fourier coefficients of finite-n and limit cylinder measures"}};
  for (const auto& [name, help] : commands) {
    CLI::App* s = app.add_subcommand(name, help);
    auto add = [&](const std::string& flag, auto& var, const std::string& desc) {
      CLI::Option* o = s->add_option("--" + flag, var, desc);
      opts[name + "/" + flag] = o;
      return o;
    };
    add("config", config_path, "JSON configuration file; flags override it");
    add("seed", seed, "64-bit seed (required for compare)");
    add("threads", threads, "worker threads for replica parallelism")->check(CLI::PositiveNumber);
    add("out", out_dir, "output directory");
    add("law", law_text, R"(law JSON, e.g. {"kind":"boundary_gaussian","params":{}})");
    add("n", ns, "depth(s) n, comma separated")->delimiter(',');
    add("k", k, "stored vertex level / limit field depth");
    add("N", big_n, "depth of the D_infinity leaf approximation");
    add("betas", betas, "inverse temperature(s), comma separated")->delimiter(',');
    add("replicas", replicas, "replicas / limit samples");
    add("theta", theta, "strip scale theta");
    add("tail-tol", tail_tol, "Poisson series truncation tolerance");
    add("decoration", decoration_text, R"(decoration JSON {"atoms":[[0]],"weights":[1]})");
    add("fourier-sets", fourier_text, "character sets as JSON, e.g. [[],[1],[1,2]]");
    add("genealogy-draws", genealogy_draws, "genealogy draws per sample and beta");
    opts[name + "/calibrate-theta"] =
        s->add_flag("--calibrate-theta", calibrate, "calibrate theta against finite n");
    opts[name + "/export"] = s->add_flag("--export", export_binary, "write binary exports");
  }

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }
  const std::string command = app.get_subcommands().front()->get_name();
  auto given = [&](const std::string& flag) { return opts.at(command + "/" + flag)->count() > 0; };

  try {
    RunConfig c;
    if (given("config")) {
      std::ifstream is(config_path);
      if (!is) throw UsageError("cannot read config file " + config_path);
      json j;
      try {
        j = json::parse(is);
      } catch (const json::parse_error& e) {
        throw UsageError("config file " + config_path + " is not valid JSON: " + e.what());
      }
      c = config_from_json(j, c);
    }
    json overlay = json::object();
    if (given("law")) overlay["law"] = parse_json_flag("law", law_text);
    if (given("decoration")) overlay["decoration"] = parse_json_flag("decoration", decoration_text);
    if (given("fourier-sets")) overlay["fourier_sets"] = parse_json_flag("fourier-sets", fourier_text);
    if (given("seed")) overlay["seed"] = seed;
    if (given("threads")) overlay["threads"] = threads;
    if (given("out")) overlay["out"] = out_dir;
    if (given("n")) overlay["n"] = ns;
    if (given("k")) overlay["k"] = k;
    if (given("N")) overlay["N"] = big_n;
    if (given("betas")) overlay["betas"] = betas;
    if (given("replicas")) overlay["replicas"] = replicas;
    if (given("theta")) overlay["theta"] = theta;
    if (given("tail-tol")) overlay["tail_tol"] = tail_tol;
    if (given("genealogy-draws")) overlay["genealogy_draws"] = genealogy_draws;
    if (given("calibrate-theta")) overlay["calibrate_theta"] = calibrate;
    if (given("export")) overlay["export"] = export_binary;
    c = config_from_json(overlay, c);
    if (command == "compare" && !given("seed")) {
      throw UsageError("compare requires --seed so that its report can be reproduced");
    }

    CommandResult r;
    if (command == "classify") {
      r = cmd_classify(c, out);
    } else if (command == "simulate") {
      r = cmd_simulate(c);
    } else if (command == "limit") {
      r = cmd_limit(c);
    } else if (command == "compare") {
      r = cmd_compare(c);
    } else {
      r = cmd_fourier(c);
    }
    if (command != "classify") {
      out << command << ": wrote";
      for (const auto& f : r.files) out << " " << f;
      out << " to " << c.out_dir << "\n";
    }
    if (r.exit_code == kExitInvariant) {
      for (const auto& j : r.manifest["invariants"]) {
        if (!j["passed"].get<bool>()) err << "invariant violated: " << j.dump() << "\n";
      }
    }
    return r.exit_code;
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
  } catch (const ResourceError& e) {
    err << "resource limit: " << e.what() << "\n";
  } catch (const std::invalid_argument& e) {
    err << "usage error: " << e.what() << "\n";
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
  }
  return kExitUsage;
}

}  // namespace mcascade::cli
