// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>

namespace scale {

/// Cyclical beta: total_steps split into `cycles` segments, each ramping
/// linearly from 0 to beta_max at its last step.
double beta_schedule(std::size_t step, std::size_t total_steps, std::size_t cycles, double beta_max);

/// Cosine decay from base_lr at step 0 to 0 at the final step, no warmup.
double lr_schedule(std::size_t step, std::size_t total_steps, double base_lr);

}  // namespace scale
