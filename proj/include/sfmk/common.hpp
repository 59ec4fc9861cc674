#pragma once

#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace sfmk {

// Scalar type of all tensor payloads. Override with -DSFMK_SCALAR=float for a
// reduced-precision build; tests assume the double default.
#ifndef SFMK_SCALAR
#define SFMK_SCALAR double
#endif
using real = SFMK_SCALAR;

using Shape = std::vector<int64_t>;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class GraphError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline int64_t numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '(';
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) os << ',';
    os << s[i];
  }
  os << ')';
  return os.str();
}

inline bool same_shape(const Shape& a, const Shape& b) { return a == b; }

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw ShapeError(msg);
}

}  // namespace sfmk
