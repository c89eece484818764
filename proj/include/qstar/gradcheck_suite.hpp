#pragma once

#include <cstdint>
#include <vector>

#include "qstar/tensor.hpp"

namespace qstar {

// finite-difference checks of every block (self/cross attention, FFN,
// conv block, frequency attention, full forward-to-loss) at small dims
// for one seed; coordinate subsampling keeps the full-model check fast
std::vector<GradCheckReport> run_gradcheck_suite(uint64_t seed, double tolerance = 1e-4,
                                                 int64_t max_coords_per_leaf = 12);

}  // namespace qstar
