#pragma once

#include <span>
#include <vector>

namespace imel {

// Non-owning (input, output) pair; for policy interpolation these are
// (state, improved mean).
struct ContextPoint {
  std::span<const double> x;
  std::span<const double> y;
};

using ContextView = std::vector<ContextPoint>;

}  // namespace imel
