#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <limits>
#include <string>
#include <string_view>
#include <system_error>
#include <thread>
#include <vector>

namespace pcem {

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

namespace detail {

/// log(exp(a) + exp(b)) without overflow; -inf is absorbing on both sides.
inline double log_add_exp(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double m = std::max(a, b);
  return m + std::log1p(std::exp(-std::abs(a - b)));
}

/// Shortest decimal encoding that parses back to the same bits.
inline std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  (void)ec;
  return std::string(buf, ptr);
}

/// Parses a double (accepts inf/-inf/nan). Returns false on trailing junk.
inline bool parse_double(std::string_view s, double& out) {
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc{} && ptr == s.data() + s.size();
}

inline bool parse_uint(std::string_view s, std::uint64_t& out) {
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc{} && ptr == s.data() + s.size();
}

/// Worker count: `requested` (0 = hardware), capped by CIRCUIT_EM_THREADS.
inline unsigned effective_threads(unsigned requested) {
  unsigned n = requested;
  if (n == 0) {
    n = std::thread::hardware_concurrency();
    if (n == 0) n = 1;
  }
  if (const char* env = std::getenv("CIRCUIT_EM_THREADS")) {
    std::uint64_t cap = 0;
    if (parse_uint(env, cap) && cap > 0) n = std::min<std::uint64_t>(n, cap);
  }
  return std::max(1u, n);
}

/// Runs fn(begin, end) over contiguous chunks of [0, count). Falls back to a
/// single inline call when one worker suffices.
template <class Fn>
void parallel_chunks(std::size_t count, unsigned threads, Fn&& fn) {
  const std::size_t min_chunk = 64;
  unsigned workers = effective_threads(threads);
  workers = static_cast<unsigned>(
      std::min<std::size_t>(workers, std::max<std::size_t>(1, count / min_chunk)));
  if (workers <= 1) {
    fn(std::size_t{0}, count, 0u);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(workers);
  const std::size_t chunk = (count + workers - 1) / workers;
  for (unsigned w = 0; w < workers; ++w) {
    const std::size_t begin = std::min(count, w * chunk);
    const std::size_t end = std::min(count, begin + chunk);
    if (begin >= end) break;
    pool.emplace_back([&fn, begin, end, w] { fn(begin, end, w); });
  }
  for (auto& t : pool) t.join();
}

}  // namespace detail
}  // namespace pcem
