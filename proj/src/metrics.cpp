#include "samed/metrics.hpp"

#include <algorithm>
#include <string>

namespace samed {

namespace {

struct Overlap {
  std::size_t a = 0, b = 0, both = 0;
};

Overlap count(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw ShapeError("mask shapes differ", a.shape(), b.shape());
  require_binary(a, "first mask");
  require_binary(b, "second mask");
  Overlap o;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const bool x = a[i] != 0.0, y = b[i] != 0.0;
    o.a += x;
    o.b += y;
    o.both += x && y;
  }
  return o;
}

}  // namespace

bool is_binary(const Tensor& mask) {
  return std::all_of(mask.data().begin(), mask.data().end(), [](double v) { return v == 0.0 || v == 1.0; });
}

void require_binary(const Tensor& mask, const char* what) {
  if (!is_binary(mask)) throw Error(std::string(what) + " is not binary");
}

double dice(const Tensor& a, const Tensor& b) {
  const Overlap o = count(a, b);
  if (o.a + o.b == 0) return 1.0;
  return 2.0 * static_cast<double>(o.both) / static_cast<double>(o.a + o.b);
}

double iou(const Tensor& a, const Tensor& b) {
  const Overlap o = count(a, b);
  const std::size_t uni = o.a + o.b - o.both;
  if (uni == 0) return 1.0;
  return static_cast<double>(o.both) / static_cast<double>(uni);
}

}  // namespace samed
