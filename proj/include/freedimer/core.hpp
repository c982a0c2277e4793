#pragma once

#include <complex>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace freedimer {

using cd = std::complex<double>;

// Integer lattice point. y >= 0 on base domains, y >= -1 once the triangle
// row is attached.
struct Pt {
  int x = 0;
  int y = 0;
  friend bool operator==(const Pt&, const Pt&) = default;
  // Frozen total order shared by every matrix module: (y, then x).
  friend bool operator<(const Pt& a, const Pt& b) {
    return a.y != b.y ? a.y < b.y : a.x < b.x;
  }
};

// (0,0) is black; colour alternates like a checkerboard.
inline bool is_black(Pt p) { return ((p.x + p.y) % 2 + 2) % 2 == 0; }

// Signed parity of the row.
inline int row_sign(Pt p) { return (p.y % 2 + 2) % 2 == 0 ? 1 : -1; }

struct PtHash {
  size_t operator()(const Pt& p) const {
    uint64_t v = (uint64_t(uint32_t(p.x)) << 32) | uint32_t(p.y);
    v ^= v >> 33; v *= 0xff51afd7ed558ccdULL; v ^= v >> 33;
    v *= 0xc4ceb9fe1a85ec53ULL; v ^= v >> 33;
    return size_t(v);
  }
};

// Invalid user input or graph invariant violation (CLI exit code 2).
struct ValidationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Numerical breakdown inside an otherwise valid computation (CLI exit code 1).
struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline std::string pt_str(Pt p) {
  return "(" + std::to_string(p.x) + "," + std::to_string(p.y) + ")";
}

}  // namespace freedimer
