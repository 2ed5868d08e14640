#pragma once

#include <cstdio>
#include <string>

namespace envtrack {

// Shortest round-trippable decimal; avoids locale-dependent iostream state.
inline std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace envtrack
