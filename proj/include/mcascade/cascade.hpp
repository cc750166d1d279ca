#pragma once

// Finite-depth cascade environments on the binary tree and the functionals
// computed from them: path energies, vertex partition functions, normalized
// cylinder masses, the derivative martingale, extremal atoms and Fourier
// coefficients.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <istream>
#include <limits>
#include <ostream>
#include <set>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "mcascade/disorder.hpp"
#include "mcascade/errors.hpp"
#include "mcascade/numerics.hpp"
#include "mcascade/rng.hpp"
#include "mcascade/vertex.hpp"

namespace mcascade {

inline constexpr int kDefaultDepthCap = 26;

/// One sampled environment {W_v : 1 <= |v| <= depth}, heap ordered.
struct CascadeRealization {
  int depth = 0;
  std::vector<double> weights;  // weights[i - 2] is W at heap index i
  WeightLaw law = WeightLaw::boundary_gaussian();
  std::uint64_t seed = 0;

  double w(std::uint64_t heap_index) const { return weights[heap_index - 2]; }
  double w(const Vertex& v) const { return w(v.heap_index()); }
};

inline void check_depth(int n, int cap) {
  if (n < 1) throw DomainError("cascade depth must be at least 1");
  if (n > cap) {
    const double mib = std::ldexp(16.0, n) / (1024.0 * 1024.0);
    throw ResourceError("depth " + std::to_string(n) + " exceeds the cap " + std::to_string(cap) +
                        ": a depth-n tree stores 2^(n+1) doubles (" + std::to_string(mib) +
                        " MiB here); lower n or raise the cap");
  }
}

inline CascadeRealization simulate_tree(const WeightLaw& law, int n, Stream& rng,
                                        int cap = kDefaultDepthCap) {
  check_depth(n, cap);
  CascadeRealization r;
  r.depth = n;
  r.law = law;
  r.seed = rng.id();
  const EnergyDistribution d = law.energy();
  r.weights.resize((std::size_t{1} << (n + 1)) - 2);
  for (double& w : r.weights) w = d.draw(rng);
  return r;
}

/// H(v) by walking the path from the root.
inline double vertex_energy(const CascadeRealization& r, const Vertex& v) {
  double h = 0.0;
  for (int j = 1; j <= v.depth(); ++j) h += r.w(v.ancestor(j));
  return h;
}

/// Leaf energies H(s), |s| = depth, in lexicographic order.
inline std::vector<double> energies(const CascadeRealization& r) {
  const std::size_t leaves = std::size_t{1} << r.depth;
  std::vector<double> h(leaves, 0.0);
  // Expand level j into level j+1 in place, back to front.
  for (int j = 0; j < r.depth; ++j) {
    const std::size_t width = std::size_t{1} << j;
    const std::size_t child_base = std::size_t{2} << j;
    for (std::size_t c = width; c-- > 0;) {
      const double parent = h[c];
      h[2 * c] = parent + r.w(child_base + 2 * c);
      h[2 * c + 1] = parent + r.w(child_base + 2 * c + 1);
    }
  }
  return h;
}

/// Partition functions of one realization at inverse temperature beta.
///
/// Z_n(beta; v) is stored in log form for every |v| <= level. M_n uses the
/// multiplicative normalization (2 phi(beta))^{-n} Z_n(beta); D_n is the
/// derivative martingale sum H e^{-H} (independent of beta).
struct PartitionTable {
  double beta = 0.0;
  int depth = 0;
  int level = 0;
  std::vector<double> log_z_by_vertex;  // heap indexed, size 2^(level+1)
  std::vector<double> energy_by_vertex;  // H(v), heap indexed
  double log_z = 0.0;
  double z = 0.0;
  double log_m = 0.0;
  double m = 0.0;
  double d = 0.0;
  double min_energy = 0.0;
  double log_scaled_z = 0.0;  // log(n^{3 beta/2} Z_n(beta))
  double scaled_z = 0.0;

  double log_z_at(const Vertex& v) const { return log_z_by_vertex[stored(v)]; }
  double z_at(const Vertex& v) const { return std::exp(log_z_at(v)); }
  double energy_at(const Vertex& v) const { return energy_by_vertex[stored(v)]; }

 private:
  std::size_t stored(const Vertex& v) const {
    if (v.depth() > level) {
      throw DomainError("vertex at depth " + std::to_string(v.depth()) +
                        " is beyond the stored level " + std::to_string(level));
    }
    return v.heap_index();
  }
};

/// Derivative martingale D_n = sum over leaves of H e^{-H}.
inline double derivative_martingale(std::span<const double> leaf_energies) {
  numerics::CompensatedSum s;
  for (double h : leaf_energies) s += h * std::exp(-h);
  return static_cast<double>(s.value());
}

inline PartitionTable partition_table(const CascadeRealization& r, double beta, int level) {
  if (!(beta > 0.0)) throw DomainError("partition_table needs beta > 0");
  if (level < 0 || level > r.depth) throw DomainError("partition_table needs 0 <= k <= n");
  const double log_two_phi = kLog2 + r.law.energy().log_phi(beta);
  if (!std::isfinite(log_two_phi)) throw NumericalError("phi(beta) is not available for the law");

  PartitionTable t;
  t.beta = beta;
  t.depth = r.depth;
  t.level = level;
  t.log_z_by_vertex.assign(std::size_t{2} << level, 0.0);
  t.energy_by_vertex.assign(std::size_t{2} << level, 0.0);

  const std::vector<double> h = energies(r);
  t.min_energy = *std::min_element(h.begin(), h.end());
  t.d = derivative_martingale(h);

  for (std::size_t i = 2; i < t.energy_by_vertex.size(); ++i) {
    t.energy_by_vertex[i] = t.energy_by_vertex[i / 2] + r.w(i);
  }

  // Fast path: S(v) = sum over leaves below v of e^{-beta (H(s) - min H)},
  // summed pairwise up the tree, so log Z_n(beta; v) = log S(v) + beta (H(v) - min H).
  std::vector<double> cur(h.size());
  for (std::size_t c = 0; c < h.size(); ++c) cur[c] = std::exp(-beta * (h[c] - t.min_energy));
  bool underflow = false;
  for (int j = r.depth; j >= 0; --j) {
    const std::size_t width = std::size_t{1} << j;
    if (j < r.depth) {
      for (std::size_t c = 0; c < width; ++c) cur[c] = cur[2 * c] + cur[2 * c + 1];
    }
    if (j <= level) {
      for (std::size_t c = 0; c < width; ++c) {
        if (!(cur[c] >= std::numeric_limits<double>::min())) underflow = true;
        t.log_z_by_vertex[width + c] =
            std::log(cur[c]) + beta * (t.energy_by_vertex[width + c] - t.min_energy);
      }
    }
  }
  if (underflow) {
    // Some stored subtree lies entirely in the underflow range; redo the
    // sweep in log space.
    std::fill(cur.begin(), cur.end(), 0.0);
    for (int j = r.depth - 1; j >= 0; --j) {
      const std::size_t width = std::size_t{1} << j;
      const std::size_t child_base = std::size_t{2} << j;
      for (std::size_t c = 0; c < width; ++c) {
        const double left = -beta * r.w(child_base + 2 * c) + cur[2 * c];
        const double right = -beta * r.w(child_base + 2 * c + 1) + cur[2 * c + 1];
        cur[c] = numerics::log_add_exp(left, right);
      }
      if (j <= level) {
        std::copy_n(cur.begin(), width,
                    t.log_z_by_vertex.begin() + static_cast<std::ptrdiff_t>(width));
      }
    }
    if (level == r.depth) {
      std::fill(t.log_z_by_vertex.begin() + static_cast<std::ptrdiff_t>(std::size_t{1} << level),
                t.log_z_by_vertex.end(), 0.0);
    }
  }

  t.log_z = t.log_z_by_vertex[1];
  t.z = std::exp(t.log_z);
  t.log_m = t.log_z - r.depth * log_two_phi;
  t.m = std::exp(t.log_m);
  t.log_scaled_z = 1.5 * beta * std::log(static_cast<double>(r.depth)) + t.log_z;
  t.scaled_z = std::exp(t.log_scaled_z);
  return t;
}

/// prob_{n,beta}(Delta(v)) = e^{-beta H(v)} Z_n(beta; v) / Z_n(beta).
inline double vertex_measure(const PartitionTable& t, const Vertex& v) {
  return std::exp(-t.beta * t.energy_at(v) + t.log_z_at(v) - t.log_z);
}

/// Cylinder masses of every vertex at depth j, lexicographic order.
inline std::vector<double> level_measures(const PartitionTable& t, int j) {
  std::vector<double> out(std::size_t{1} << j);
  for (std::size_t c = 0; c < out.size(); ++c) out[c] = vertex_measure(t, Vertex(j, c));
  return out;
}

/// Atoms H(s) - (3/2) log n + log D_n for every leaf, ascending. D_n stands
/// in for the unobservable D_infinity. Throws DegenerateSample if D_n <= 0.
inline std::vector<double> extremal_points(const CascadeRealization& r) {
  std::vector<double> h = energies(r);
  const double d = derivative_martingale(h);
  if (!(d > 0.0)) {
    throw DegenerateSample("derivative martingale D_n = " + std::to_string(d) +
                           " is not positive; discard this replica");
  }
  const double shift = -1.5 * std::log(static_cast<double>(r.depth)) + std::log(d);
  for (double& x : h) x += shift;
  std::sort(h.begin(), h.end());
  return h;
}

/// chi_F(v) = prod_{j in F} v_j for |v| >= max F.
inline int character(const std::set<int>& f, const Vertex& v) {
  int sign = 1;
  for (int j : f) sign *= v.step(j);
  return sign;
}

struct FourierCoefficient {
  double value = 1.0;   // via vertex partition functions at level max F
  double direct = 1.0;  // via the leaf path sum
  double discrepancy() const { return std::fabs(value - direct); }
};

inline constexpr double kFourierRouteTolerance = 1e-12;

/// E_{prob_{n,beta}} chi_F computed two ways: from the level-m cylinder masses
/// (m = max F) and by direct summation over all depth-n paths.
inline FourierCoefficient fourier_coeff(const PartitionTable& t, const CascadeRealization& r,
                                        const std::set<int>& f) {
  if (f.empty()) return {};
  if (*f.begin() < 1) throw DomainError("character indices must be positive");
  const int m = *f.rbegin();
  if (m > t.level) {
    throw DomainError("max F = " + std::to_string(m) + " exceeds the stored level " +
                      std::to_string(t.level));
  }
  FourierCoefficient out;
  numerics::CompensatedSum by_vertex;
  for (std::uint64_t c = 0; c < (std::uint64_t{1} << m); ++c) {
    const Vertex v(m, c);
    by_vertex += character(f, v) * vertex_measure(t, v);
  }
  out.value = static_cast<double>(by_vertex.value());

  const std::vector<double> h = energies(r);
  const double hmin = *std::min_element(h.begin(), h.end());
  numerics::CompensatedSum num, den;
  for (std::uint64_t c = 0; c < h.size(); ++c) {
    const long double e = std::exp(-static_cast<long double>(t.beta) * (h[c] - hmin));
    den += e;
    num += character(f, Vertex(r.depth, c)) * e;
  }
  out.direct = static_cast<double>(num.value() / den.value());
  return out;
}

// Binary realization file: magic, format version, law JSON, depth, seed, then
// the 2^(n+1) - 2 weights as little-endian binary64 in heap order.
inline constexpr char kRealizationMagic[8] = {'M', 'C', 'A', 'S', 'C', 'A', 'D', 'E'};
inline constexpr std::uint32_t kRealizationVersion = 1;

namespace detail {

template <typename T>
void put_le(std::ostream& os, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  unsigned char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
  os.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <typename T>
T get_le(std::istream& is) {
  unsigned char buf[sizeof(T)];
  if (!is.read(reinterpret_cast<char*>(buf), sizeof(T))) {
    throw Error("truncated realization file");
  }
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
  T value;
  std::memcpy(&value, buf, sizeof(T));
  return value;
}

}  // namespace detail

inline void write_realization(std::ostream& os, const CascadeRealization& r) {
  os.write(kRealizationMagic, sizeof kRealizationMagic);
  detail::put_le<std::uint32_t>(os, kRealizationVersion);
  const std::string law = r.law.to_json().dump();
  detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(law.size()));
  os.write(law.data(), static_cast<std::streamsize>(law.size()));
  detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(r.depth));
  detail::put_le<std::uint64_t>(os, r.seed);
  for (double w : r.weights) detail::put_le<double>(os, w);
}

inline CascadeRealization read_realization(std::istream& is, int cap = kDefaultDepthCap) {
  char magic[sizeof kRealizationMagic];
  if (!is.read(magic, sizeof magic) || std::memcmp(magic, kRealizationMagic, sizeof magic) != 0) {
    throw Error("not a realization file (bad magic)");
  }
  const auto version = detail::get_le<std::uint32_t>(is);
  if (version != kRealizationVersion) {
    throw Error("unsupported realization format version " + std::to_string(version));
  }
  const auto law_len = detail::get_le<std::uint32_t>(is);
  std::string law(law_len, '\0');
  if (!is.read(law.data(), law_len)) throw Error("truncated realization file");
  CascadeRealization r;
  r.law = WeightLaw::from_json(nlohmann::json::parse(law));
  r.depth = static_cast<int>(detail::get_le<std::uint32_t>(is));
  check_depth(r.depth, cap);
  r.seed = detail::get_le<std::uint64_t>(is);
  r.weights.resize((std::size_t{1} << (r.depth + 1)) - 2);
  for (double& w : r.weights) w = detail::get_le<double>(is);
  return r;
}

}  // namespace mcascade
