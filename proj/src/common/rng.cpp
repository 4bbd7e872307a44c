// SPDX-License-Identifier: Apache-2.0
#include "common/rng.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

#include "common/error.hpp"

namespace scale {

double Rng::normal() {
  // 1 - u keeps the log argument in (0, 1].
  const double u1 = 1.0 - uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::int64_t Rng::uniform_int(std::int64_t lo, std::int64_t hi) {
  if (hi < lo) throw ValidationError("uniform_int: empty range");
  const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
  if (span == 0) return static_cast<std::int64_t>(next_u64());
  const std::uint64_t limit = UINT64_MAX - (UINT64_MAX % span);
  std::uint64_t draw = next_u64();
  while (draw >= limit) draw = next_u64();
  return lo + static_cast<std::int64_t>(draw % span);
}

std::string Rng::serialize() const {
  std::ostringstream out;
  out << engine_ << ' ' << draws_;
  return out.str();
}

void Rng::deserialize(const std::string& state) {
  std::istringstream in(state);
  in >> engine_ >> draws_;
  if (!in) throw ValidationError("corrupt rng state");
}

}  // namespace scale
