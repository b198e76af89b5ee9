#include "malvis/parallel.hpp"

#include <cstdlib>
#include <string>
#include <thread>

namespace malvis {

int worker_threads() {
  static const int cached = [] {
    int n = static_cast<int>(std::thread::hardware_concurrency());
    if (n < 1) n = 1;
    if (const char* env = std::getenv("MALVIS_THREADS")) {
      try {
        const int cap = std::stoi(env);
        if (cap >= 1 && cap < n) n = cap;
      } catch (...) {
        // unparseable value: keep the hardware default
      }
    }
    return n;
  }();
  return cached;
}

}  // namespace malvis
