#pragma once

#include <cstdint>
#include <vector>

#include "freedimer/core.hpp"

namespace freedimer {

// Counter-based stream: draw i of stream s is mix(key(seed,s) + i*phi), so
// identical (seed, stream_id) reproduce identical draws bit-for-bit and
// distinct streams are independent without shared state.
class Rng {
 public:
  Rng(uint64_t seed, uint64_t stream_id = 0) {
    key_ = mix(mix(seed ^ 0x5851f42d4c957f2dULL) + phi_ * stream_id);
  }

  uint64_t u64() { return mix(key_ + phi_ * ++counter_); }

  // Uniform in [0,1) with 53-bit resolution.
  double uniform() { return double(u64() >> 11) * 0x1.0p-53; }

  // Unbiased uniform integer in [0, n).
  uint64_t below(uint64_t n) {
    uint64_t threshold = (0 - n) % n;
    for (;;) {
      uint64_t r = u64();
      if (r >= threshold) return r % n;
    }
  }

  bool coin(double p) { return uniform() < p; }

 private:
  static uint64_t mix(uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }
  static constexpr uint64_t phi_ = 0x9e3779b97f4a7c15ULL;
  uint64_t key_ = 0;
  uint64_t counter_ = 0;
};

// Walker alias table for a fixed finite law; O(1) per draw.
class AliasTable {
 public:
  explicit AliasTable(const std::vector<double>& weights) {
    size_t n = weights.size();
    if (n == 0) throw ValidationError("alias table needs nonempty support");
    prob_.assign(n, 0.0);
    alias_.assign(n, 0);
    double total = 0;
    for (double w : weights) {
      if (w < 0) throw ValidationError("alias table weight < 0");
      total += w;
    }
    if (total <= 0) throw ValidationError("alias table total weight <= 0");
    std::vector<double> scaled(n);
    std::vector<size_t> small, large;
    for (size_t i = 0; i < n; ++i) {
      scaled[i] = weights[i] * double(n) / total;
      (scaled[i] < 1.0 ? small : large).push_back(i);
    }
    while (!small.empty() && !large.empty()) {
      size_t s = small.back(), l = large.back();
      small.pop_back();
      prob_[s] = scaled[s];
      alias_[s] = l;
      scaled[l] -= 1.0 - scaled[s];
      if (scaled[l] < 1.0) {
        large.pop_back();
        small.push_back(l);
      }
    }
    for (size_t i : large) prob_[i] = 1.0;
    for (size_t i : small) prob_[i] = 1.0;
  }

  size_t draw(Rng& rng) const {
    size_t i = size_t(rng.below(prob_.size()));
    return rng.uniform() < prob_[i] ? i : alias_[i];
  }

 private:
  std::vector<double> prob_;
  std::vector<size_t> alias_;
};

}  // namespace freedimer
