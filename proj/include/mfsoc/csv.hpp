#pragma once

#include <cstdio>
#include <string>

namespace mfsoc {

/// Shortest round-trippable decimal form with 17 significant digits.
/// All numeric CSV output goes through this so reruns are byte-comparable.
[[nodiscard]] inline std::string format_g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace mfsoc
