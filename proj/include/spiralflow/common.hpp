#pragma once

#include <complex>
#include <cstdlib>
#include <functional>
#include <mutex>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace spiralflow {

using Real = double;
using Complex = std::complex<double>;

inline constexpr Real kPi = 3.14159265358979323846264338327950288;

// Error taxonomy mirrored by the CLI exit codes. error_class() is the
// stable machine-readable tag.
class SpiralError : public std::runtime_error {
 public:
  SpiralError(std::string cls, const std::string& msg)
      : std::runtime_error(msg), cls_(std::move(cls)) {}
  const std::string& error_class() const { return cls_; }

 private:
  std::string cls_;
};

class ConfigError : public SpiralError {
 public:
  explicit ConfigError(const std::string& msg) : SpiralError("config", msg) {}
};

class DivergenceError : public SpiralError {
 public:
  explicit DivergenceError(const std::string& msg) : SpiralError("divergence", msg) {}
};

// Thrown when an iterate leaves the perturbative regime (h or (D_rho+2mu-1)f
// loses positivity), as opposed to plain non-convergence.
class RegimeExitError : public SpiralError {
 public:
  explicit RegimeExitError(const std::string& msg) : SpiralError("regime_exit", msg) {}
};

class IoError : public SpiralError {
 public:
  explicit IoError(const std::string& msg) : SpiralError("io", msg) {}
};

// Worker cap: SPIRALFLOW_THREADS wins over hardware concurrency.
inline int worker_count() {
  int hw = static_cast<int>(std::thread::hardware_concurrency());
  if (hw <= 0) hw = 1;
  if (const char* env = std::getenv("SPIRALFLOW_THREADS")) {
    char* end = nullptr;
    long v = std::strtol(env, &end, 10);
    if (end != env && v > 0 && v < hw) hw = static_cast<int>(v);
  }
  return hw;
}

// Index-parallel loop with deterministic output: each index writes only its
// own slots. Falls back to serial when the range is small.
inline void parallel_for(int count, const std::function<void(int)>& body) {
  int threads = worker_count();
  if (threads <= 1 || count <= 1) {
    for (int i = 0; i < count; ++i) body(i);
    return;
  }
  if (threads > count) threads = count;
  std::vector<std::thread> pool;
  pool.reserve(threads);
  std::exception_ptr first_error;
  std::mutex err_mutex;
  for (int t = 0; t < threads; ++t) {
    pool.emplace_back([&, t]() {
      try {
        for (int i = t; i < count; i += threads) body(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(err_mutex);
        if (!first_error) first_error = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace spiralflow
