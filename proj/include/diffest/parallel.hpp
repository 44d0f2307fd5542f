#pragma once

#include <cstddef>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace diffest {

// Serial is the reference path; the OpenMP path must match it bit for bit.
// That holds as long as every iteration writes only its own output slots.
enum class ExecMode { serial, parallel };

struct ExecConfig {
  ExecMode mode = ExecMode::parallel;
  int threads = 4;
};

ExecConfig& exec_config();

template <class Fn>
void parallel_for(std::size_t n, ExecMode mode, int threads, Fn&& fn) {
#ifdef _OPENMP
  if (mode == ExecMode::parallel && n > 1) {
    const int nt = threads > 0 ? threads : omp_get_max_threads();
#pragma omp parallel for schedule(dynamic) num_threads(nt)
    for (long long i = 0; i < static_cast<long long>(n); ++i) {
      fn(static_cast<std::size_t>(i));
    }
    return;
  }
#endif
  for (std::size_t i = 0; i < n; ++i) fn(i);
}

template <class Fn>
void parallel_for(std::size_t n, ExecMode mode, Fn&& fn) {
  parallel_for(n, mode, exec_config().threads, static_cast<Fn&&>(fn));
}

template <class Fn>
void parallel_for(std::size_t n, Fn&& fn) {
  parallel_for(n, exec_config().mode, exec_config().threads, static_cast<Fn&&>(fn));
}

}  // namespace diffest
