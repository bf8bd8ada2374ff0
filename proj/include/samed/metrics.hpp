#pragma once

#include "samed/tensor.hpp"

namespace samed {

/// Dice similarity 2|A∩B| / (|A|+|B|) of two binary masks; 1 when both are empty.
double dice(const Tensor& a, const Tensor& b);

/// Intersection over union |A∩B| / |A∪B|; 1 when both are empty.
double iou(const Tensor& a, const Tensor& b);

/// Throws unless every value is exactly 0 or 1.
void require_binary(const Tensor& mask, const char* what = "mask");

bool is_binary(const Tensor& mask);

}  // namespace samed
