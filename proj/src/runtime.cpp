#include "skinseg/runtime.hpp"

#include <Eigen/Core>

#include <cstdlib>
#include <string>

namespace skinseg {

void init_runtime() {
  const char* det = std::getenv("SKINSEG_DETERMINISTIC");
  if (det && std::string(det) == "1") {
    Eigen::setNbThreads(1);
    return;
  }
  if (const char* thr = std::getenv("SKINSEG_THREADS")) {
    const int n = std::atoi(thr);
    if (n > 0) Eigen::setNbThreads(n);
  }
}

}  // namespace skinseg
