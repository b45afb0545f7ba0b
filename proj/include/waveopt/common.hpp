#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <mutex>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace waveopt {

// Error taxonomy shared by the whole library. Everything user-facing is
// catchable as waveopt::Error; `kind()` is stable and machine-readable.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& msg)
      : std::runtime_error(msg), kind_(std::move(kind)) {}
  const std::string& kind() const { return kind_; }

 private:
  std::string kind_;
};

struct ShapeError : Error {
  explicit ShapeError(const std::string& msg) : Error("invalid-shape", msg) {}
};

struct ArgumentError : Error {
  explicit ArgumentError(const std::string& msg) : Error("invalid-argument", msg) {}
};

struct NumericError : Error {
  explicit NumericError(const std::string& msg) : Error("numeric", msg) {}
};

struct DivergenceError : Error {
  explicit DivergenceError(const std::string& msg) : Error("numeric-divergence", msg) {}
};

struct ContractError : Error {
  explicit ContractError(const std::string& msg) : Error("contract-violation", msg) {}
};

struct TrainingError : Error {
  explicit TrainingError(const std::string& msg) : Error("training-failure", msg) {}
};

struct IoError : Error {
  explicit IoError(const std::string& msg) : Error("io", msg) {}
};

inline void check_shape(bool ok, const std::string& msg) {
  if (!ok) throw ShapeError(msg);
}

inline void check_arg(bool ok, const std::string& msg) {
  if (!ok) throw ArgumentError(msg);
}

class Stopwatch {
 public:
  Stopwatch() : start_(clock::now()) {}
  double seconds() const {
    return std::chrono::duration<double>(clock::now() - start_).count();
  }
  void reset() { start_ = clock::now(); }

 private:
  using clock = std::chrono::steady_clock;
  clock::time_point start_;
};

// Static round-robin split of [0, n) over up to `threads` workers. Each index
// is processed exactly once and writes only its own outputs, so results do
// not depend on the worker count.
inline void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn,
                         unsigned threads = 0) {
  if (threads == 0) threads = std::thread::hardware_concurrency();
  if (threads <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  unsigned workers = static_cast<unsigned>(std::min<std::size_t>(threads, n));
  std::vector<std::thread> pool;
  std::exception_ptr first_error;
  std::mutex err_mu;
  pool.reserve(workers);
  for (unsigned w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += workers) fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lk(err_mu);
        if (!first_error) first_error = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace waveopt
