// SPDX-License-Identifier: Apache-2.0
#include "trainer/schedule.hpp"

#include <cmath>
#include <numbers>

#include "common/error.hpp"

namespace scale {

double beta_schedule(std::size_t step, std::size_t total_steps, std::size_t cycles, double beta_max) {
  if (cycles == 0) throw ValidationError("beta_schedule: cycles must be >= 1");
  if (step >= total_steps) throw ValidationError("beta_schedule: step outside [0, total_steps)");
  // Segment k covers [floor(k*T/C), floor((k+1)*T/C)).
  auto boundary = [&](std::size_t k) { return k * total_steps / cycles; };
  std::size_t k = step * cycles / total_steps;
  while (k + 1 < cycles && boundary(k + 1) <= step) ++k;
  while (k > 0 && boundary(k) > step) --k;
  const std::size_t start = boundary(k);
  const std::size_t len = boundary(k + 1) - start;
  if (len <= 1) return beta_max;
  return beta_max * (static_cast<double>(step - start) / static_cast<double>(len - 1));
}

double lr_schedule(std::size_t step, std::size_t total_steps, double base_lr) {
  if (step >= total_steps) throw ValidationError("lr_schedule: step outside [0, total_steps)");
  if (total_steps == 1) return base_lr;
  if (step + 1 == total_steps) return 0.0;
  const double phase = static_cast<double>(step) / static_cast<double>(total_steps - 1);
  return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * phase));
}

}  // namespace scale
