#pragma once

#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace stenet {

/// Counting convention: a multiply-accumulate is two flops, an elementwise
/// product is one. Softmax, normalization, activations, interpolation and
/// bias adds are not counted.
struct FlopTerm {
  std::string name;
  std::uint64_t flops = 0;
  bool attention = false;  // scales with the token count M
};

class FlopCount {
 public:
  void add(std::string name, std::uint64_t flops, bool attention = false) {
    terms_.push_back({std::move(name), flops, attention});
  }

  void add_dense(std::uint64_t flops) { dense_attention_ += flops; }

  /// Appends another count's terms under a name prefix.
  void merge(const FlopCount& other, const std::string& prefix) {
    for (const auto& t : other.terms_) terms_.push_back({prefix + t.name, t.flops, t.attention});
    dense_attention_ += other.dense_attention_;
  }

  std::uint64_t total() const {
    return std::accumulate(terms_.begin(), terms_.end(), std::uint64_t{0},
                           [](std::uint64_t s, const FlopTerm& t) { return s + t.flops; });
  }

  /// Sum of the token-count dependent attention products.
  std::uint64_t attention() const {
    std::uint64_t s = 0;
    for (const auto& t : terms_) {
      if (t.attention) s += t.flops;
    }
    return s;
  }

  /// Cost of the same attention products if every token were a pixel.
  std::uint64_t dense_attention() const { return dense_attention_; }

  double attention_ratio() const {
    return dense_attention_ == 0 ? 0.0
                                 : static_cast<double>(attention()) /
                                       static_cast<double>(dense_attention_);
  }

  std::uint64_t term(const std::string& name) const {
    for (const auto& t : terms_) {
      if (t.name == name) return t.flops;
    }
    throw std::out_of_range("no flop term named " + name);
  }

  const std::vector<FlopTerm>& terms() const { return terms_; }

 private:
  std::vector<FlopTerm> terms_;
  std::uint64_t dense_attention_ = 0;
};

inline constexpr std::uint64_t matmul_flops(std::uint64_t m, std::uint64_t k, std::uint64_t n) {
  return 2 * m * k * n;
}

namespace detail {
inline std::uint64_t*& active_flop_sink() {
  thread_local std::uint64_t* sink = nullptr;
  return sink;
}
inline void record_flops(std::uint64_t n) {
  if (auto* s = active_flop_sink()) *s += n;
}
}  // namespace detail

/// Tallies the flops that kernels actually execute on this thread while alive.
class FlopMeter {
 public:
  FlopMeter() : prev_(detail::active_flop_sink()) { detail::active_flop_sink() = &count_; }
  ~FlopMeter() { detail::active_flop_sink() = prev_; }
  FlopMeter(const FlopMeter&) = delete;
  FlopMeter& operator=(const FlopMeter&) = delete;

  std::uint64_t count() const { return count_; }

 private:
  std::uint64_t count_ = 0;
  std::uint64_t* prev_;
};

}  // namespace stenet
