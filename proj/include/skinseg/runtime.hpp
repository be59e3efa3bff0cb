#pragma once

namespace skinseg {

// Applies SKINSEG_THREADS / SKINSEG_DETERMINISTIC to the math backend.
// Results are run-to-run deterministic for a fixed thread count either way;
// SKINSEG_DETERMINISTIC=1 pins a single thread.
void init_runtime();

}  // namespace skinseg
