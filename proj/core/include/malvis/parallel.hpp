#pragma once

#include <cstddef>

namespace malvis {

// Worker cap for data-parallel loops: min(hardware threads, MALVIS_THREADS).
// Read once at first use. Results never depend on the thread count: parallel
// loops partition output elements and every reduction runs sequentially per
// element.
int worker_threads();

namespace detail {

// parallel_for(n, body): body(i) for i in [0, n), each i on exactly one worker.
template <typename Body>
void parallel_for(std::size_t n, const Body& body);

}  // namespace detail
}  // namespace malvis

#ifdef _OPENMP
#include <omp.h>

template <typename Body>
void malvis::detail::parallel_for(std::size_t n, const Body& body) {
  const long long count = static_cast<long long>(n);
#pragma omp parallel for schedule(static) num_threads(malvis::worker_threads())
  for (long long i = 0; i < count; ++i) body(static_cast<std::size_t>(i));
}

#else

template <typename Body>
void malvis::detail::parallel_for(std::size_t n, const Body& body) {
  for (std::size_t i = 0; i < n; ++i) body(i);
}

#endif
