#pragma once

#include <compare>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace mcascade {

/// A vertex of the binary tree {-1,+1}^depth.
///
/// Steps are packed most-significant first into `code`: bit value 0 is the
/// step -1 and 1 is +1, so increasing `code` at fixed depth is the
/// lexicographic order with -1 < +1. The heap index (1 << depth) | code puts
/// the root at 1 and the children of i at 2i (-1) and 2i+1 (+1).
class Vertex {
 public:
  constexpr Vertex() = default;
  constexpr Vertex(int depth, std::uint64_t code) : depth_(depth), code_(code) {}

  static constexpr Vertex root() { return {}; }
  static constexpr Vertex from_heap(std::uint64_t heap_index) {
    int d = 63 - __builtin_clzll(heap_index);
    return {d, heap_index ^ (std::uint64_t{1} << d)};
  }

  // Leftmost (all -1) vertex at depth d.
  static constexpr Vertex leftmost(int d) { return {d, 0}; }

  constexpr int depth() const { return depth_; }
  constexpr std::uint64_t code() const { return code_; }
  constexpr std::uint64_t heap_index() const { return (std::uint64_t{1} << depth_) | code_; }

  // Step j in {-1,+1}, 1 <= j <= depth.
  constexpr int step(int j) const {
    return ((code_ >> (depth_ - j)) & 1U) != 0U ? +1 : -1;
  }

  constexpr Vertex child(int sign) const {
    return {depth_ + 1, (code_ << 1) | (sign > 0 ? 1U : 0U)};
  }
  constexpr Vertex parent() const { return {depth_ - 1, code_ >> 1}; }
  constexpr Vertex ancestor(int d) const { return {d, code_ >> (depth_ - d)}; }
  constexpr bool is_ancestor_of(const Vertex& u) const {
    return depth_ <= u.depth_ && u.ancestor(depth_) == *this;
  }

  // "-1,+1,+1"; the root is the empty string.
  std::string path() const {
    std::string out;
    for (int j = 1; j <= depth_; ++j) {
      if (j > 1) out += ',';
      out += step(j) > 0 ? "+1" : "-1";
    }
    return out;
  }

  static Vertex parse(std::string_view text) {
    Vertex v;
    while (!text.empty()) {
      const auto comma = text.find(',');
      const std::string_view tok = text.substr(0, comma);
      if (tok == "-1") {
        v = v.child(-1);
      } else if (tok == "+1" || tok == "1") {
        v = v.child(+1);
      } else {
        throw std::invalid_argument("bad vertex step '" + std::string(tok) + "'");
      }
      if (comma == std::string_view::npos) break;
      text.remove_prefix(comma + 1);
    }
    return v;
  }

  friend constexpr bool operator==(const Vertex&, const Vertex&) = default;
  friend constexpr auto operator<=>(const Vertex&, const Vertex&) = default;

 private:
  int depth_ = 0;
  std::uint64_t code_ = 0;
};

}  // namespace mcascade
