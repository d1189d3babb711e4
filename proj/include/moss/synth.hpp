#pragma once

#include <cstdint>
#include <vector>

#include "moss/dataset.hpp"

namespace moss {

/// Synthetic classification data: one Gaussian prototype per class, samples
/// are prototype + noise * N(0,1). Learnable but not trivial at noise ~ 1.
LabeledDataset make_synthetic_dataset(int num_classes, size_t num_samples,
                                      const std::vector<int>& shape, double noise,
                                      uint64_t seed);

}  // namespace moss
