#pragma once

// Command-line driver: configuration, replica orchestration and CSV/JSON
// emission for the classify | simulate | limit | compare | fourier commands.

#include <atomic>
#include <cstdint>
#include <exception>
#include <iosfwd>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <thread>
#include <variant>
#include <vector>

#include <json.hpp>

#include "mcascade/mcascade.hpp"

namespace mcascade::cli {

inline constexpr const char* kVersion = "0.1.0";
inline constexpr int kManifestSchema = 1;

enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitInvariant = 2 };

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RunConfig {
  WeightLaw law = WeightLaw::boundary_gaussian();
  std::vector<int> n{16};
  int k = 1;
  int big_n = 18;
  std::vector<double> betas{1.5};
  int replicas = 100;
  std::uint64_t seed = 0;
  double theta = 1.0;
  DecorationSpec decoration;
  double tail_tol = 1e-2;
  std::vector<std::set<int>> fourier_sets{{}, {1}, {1, 2}};
  bool calibrate_theta = false;
  bool export_binary = false;
  int genealogy_draws = 10;
  int depth_cap = kDefaultDepthCap;
  // Not part of the configuration hash.
  std::string out_dir = "mcascade_out";
  int threads = 1;
};

/// Overlays the keys present in `j` on `base`. Throws UsageError on unknown
/// keys or malformed values.
RunConfig config_from_json(const nlohmann::json& j, RunConfig base = {});
/// Every field except out_dir and threads, in a fixed key order.
nlohmann::json canonical_config(const RunConfig& c);
/// FNV-1a 64 of the canonical JSON dump, as 16 hex digits.
std::string config_hash(const RunConfig& c);

/// Runs fn(0) .. fn(count - 1) on up to `threads` workers. Results must be
/// written by index; the first exception by index is rethrown.
template <typename F>
void parallel_for(std::size_t count, int threads, F&& fn) {
  const std::size_t workers =
      std::min<std::size_t>(static_cast<std::size_t>(std::max(threads, 1)), count);
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(count);
  {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (;;) {
          const std::size_t i = next.fetch_add(1);
          if (i >= count) return;
          try {
            fn(i);
          } catch (...) {
            errors[i] = std::current_exception();
          }
        }
      });
    }
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

// ---------------------------------------------------------------------------
// CSV

class Cell {
 public:
  Cell() = default;
  Cell(double v) : v_(v) {}
  Cell(int v) : v_(static_cast<std::int64_t>(v)) {}
  Cell(long v) : v_(static_cast<std::int64_t>(v)) {}
  Cell(long long v) : v_(static_cast<std::int64_t>(v)) {}
  Cell(unsigned v) : v_(static_cast<std::uint64_t>(v)) {}
  Cell(unsigned long v) : v_(static_cast<std::uint64_t>(v)) {}
  Cell(unsigned long long v) : v_(static_cast<std::uint64_t>(v)) {}
  Cell(bool v) : v_(std::string(v ? "true" : "false")) {}
  Cell(std::string v) : v_(std::move(v)) {}
  Cell(const char* v) : v_(std::string(v)) {}

  std::string str() const;

 private:
  std::variant<std::monostate, double, std::int64_t, std::uint64_t, std::string> v_;
};

std::string format_double(double x);
std::string csv_escape(const std::string& s);

/// RFC 4180 table whose first three columns are seed, config_hash, version.
class CsvTable {
 public:
  CsvTable(const RunConfig& c, std::vector<std::string> columns);
  void row(std::vector<Cell> cells);
  std::string str() const;
  std::size_t rows() const { return rows_; }

 private:
  std::vector<std::string> prefix_;
  std::size_t width_;
  std::string body_;
  std::size_t rows_ = 0;
};

/// Parses an RFC 4180 document into rows of fields.
std::vector<std::vector<std::string>> parse_csv(const std::string& text);

// ---------------------------------------------------------------------------
// Ensembles

/// Worst residual per invariant, merged in a fixed order.
struct CheckSet {
  std::map<std::string, invariants::Check> by_name;
  void merge(const invariants::Check& c);
  void merge(const CheckSet& other);
  bool all_passed() const;
  std::vector<std::string> failures() const;
  nlohmann::json to_json() const;
};

struct FiniteRecord {
  std::uint64_t replica = 0;
  int n = 0;
  double beta = 0.0;
  double z = 0.0;
  double log_z = 0.0;
  double m = 0.0;
  double d = 0.0;
  double w = 0.0;  // sum over leaves of e^{-H}
  double min_energy = 0.0;
  double scaled_z = 0.0;
  double log_scaled_z = 0.0;
  std::vector<double> masses;  // prob_{n,beta}(Delta(v)), heap indexed up to the mass level
};

struct FiniteEnsemble {
  int n = 0;
  std::vector<double> betas;
  std::vector<FiniteRecord> rows;  // replica-major, beta-minor
  CheckSet checks;

  const FiniteRecord& at(std::size_t replica, std::size_t beta_index) const {
    return rows[replica * betas.size() + beta_index];
  }
  std::vector<double> column(std::size_t beta_index, double FiniteRecord::*field) const;
};

/// Stream tags separating the independent random inputs of a run.
enum StreamTag : std::uint64_t {
  kTagFinite = 1,
  kTagLimit = 2,
  kTagGenealogy = 3,
  kTagFiniteGenealogy = 4,
  kTagSuperposition = 5,
};

FiniteEnsemble run_finite(const WeightLaw& law, int n, const std::vector<double>& betas,
                          int replicas, std::uint64_t seed, int mass_level, int threads,
                          int cap = kDefaultDepthCap, const std::string& export_dir = "");

struct LimitOptions {
  std::vector<double> betas;
  int genealogy_draws = 0;
  int genealogy_depth = -1;       // -1: k
  std::size_t rn_centers = 0;     // rows of RN derivatives per sample
  bool tv = false;                // TV distances between consecutive betas
  bool pair_coincidence = false;  // two genealogy draws at depth 1 per beta
  std::string export_dir;         // binary sample export when nonempty
};

struct RnRow {
  std::size_t center = 0;
  double t = 0.0;
  double x = 0.0;
  double beta1 = 0.0;
  double beta2 = 0.0;
  double rn = 0.0;
};

struct LimitRecord {
  std::uint64_t sample = 0;
  double theta = 0.0;
  double d_root = 0.0;
  std::size_t centers = 0;
  double tail_bound = 0.0;
  std::size_t resampled = 0;
  std::size_t attempts = 0;
  std::size_t degenerate_retries = 0;
  std::vector<std::vector<double>> i_values;  // per beta, heap indexed
  std::vector<std::vector<double>> masses;    // per beta, heap indexed
  std::vector<RnRow> rn;
  std::vector<double> tv;
  std::vector<std::vector<Vertex>> genealogy;  // per beta
  std::vector<int> pair_hit;                   // per beta
};

struct LimitEnsemble {
  std::vector<double> betas;
  std::vector<LimitRecord> samples;
  CheckSet checks;

  std::vector<double> root_i(std::size_t beta_index) const;
  std::vector<double> mass_column(std::size_t beta_index, const Vertex& v) const;
};

LimitEnsemble run_limit(const WeightLaw& boundary_law, const LimitConfig& cfg,
                        const LimitOptions& opt, int replicas, std::uint64_t seed, int threads);

/// The W-form law used by limit constructions. Boundary-normalized W laws pass
/// through with alpha = 1; X-form laws are mapped with their alpha (1 at
/// criticality), under which inverse temperature beta of the given law becomes
/// beta / alpha of the normalized one. Throws UsageError otherwise.
struct NormalizedLaw {
  WeightLaw law = WeightLaw::boundary_gaussian();
  double alpha = 1.0;
  nlohmann::json note;
  std::vector<double> map_betas(const std::vector<double>& betas) const;
};
NormalizedLaw limit_law(const WeightLaw& law);

/// Throws UsageError naming the first invalid field.
void validate(const RunConfig& c);

/// theta0 (median finite scaled Z / median I(root))^{1/beta}.
double calibrated_theta(const FiniteEnsemble& finite, const LimitEnsemble& limit,
                        std::size_t beta_index, double theta0);

// ---------------------------------------------------------------------------
// Binary limit-sample export

inline constexpr char kLimitMagic[8] = {'M', 'C', 'L', 'I', 'M', 'I', 'T', '\0'};
inline constexpr std::uint32_t kLimitVersion = 1;

void write_limit_sample(std::ostream& os, const LimitSample& s, const nlohmann::json& meta);

struct LimitSampleFile {
  nlohmann::json meta;
  std::vector<double> d;
  std::vector<double> w;
  std::vector<double> x;
  std::vector<double> t;
  std::vector<std::uint64_t> deco_offsets;
  std::vector<double> deco_values;
};

LimitSampleFile read_limit_sample(std::istream& is);

// ---------------------------------------------------------------------------
// Commands

struct CommandResult {
  int exit_code = kExitOk;
  nlohmann::json manifest;
  std::vector<std::string> files;
};

CommandResult cmd_classify(const RunConfig& c, std::ostream& out);
CommandResult cmd_simulate(const RunConfig& c);
CommandResult cmd_limit(const RunConfig& c);
CommandResult cmd_compare(const RunConfig& c);
CommandResult cmd_fourier(const RunConfig& c);

/// Full command line, without the program name. Returns the process exit code.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace mcascade::cli
