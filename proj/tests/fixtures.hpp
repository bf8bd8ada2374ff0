#pragma once

// Shared hand-built inputs for the unit tests and the acceptance binary.

#include <cstdint>
#include <utility>
#include <vector>

#include "samed/synthetic.hpp"

namespace samed::fixtures {

inline Frame make_frame(std::size_t h, std::size_t w, std::int64_t slice, std::vector<std::pair<std::size_t, double>> px) {
  Frame f;
  f.features = Tensor(Shape{h, w, 1});
  f.mask = Tensor(Shape{h, w});
  for (auto [i, v] : px) f.mask[i] = v;
  f.slice_index = slice;
  f.volume_id = 0;
  return f;
}

// Twelve frames, slice_index = position. Hand-enumerated outcome:
//   1, 5, 9   all-zero masks            -> dropped
//   2         10x30                     -> dropped (10 < 0.5 * 30)
//   8         30x10                     -> dropped
//   6         16x8, ratio exactly 0.5   -> kept
//   3         classes {1, 2}            -> two binary frames
//   7         single class 3            -> one binary frame
//   0, 4, 10, 11                        -> kept as they are
inline std::vector<Frame> preprocess_twelve() {
  std::vector<Frame> v;
  v.push_back(make_frame(8, 8, 0, {{9, 1}, {10, 1}}));
  v.push_back(make_frame(8, 8, 1, {}));
  v.push_back(make_frame(10, 30, 2, {{40, 1}, {41, 1}}));
  v.push_back(make_frame(8, 8, 3, {{0, 1}, {1, 1}, {20, 2}, {21, 2}, {22, 2}}));
  v.push_back(make_frame(8, 8, 4, {{63, 1}}));
  v.push_back(make_frame(8, 8, 5, {}));
  v.push_back(make_frame(16, 8, 6, {{5, 1}}));
  v.push_back(make_frame(8, 8, 7, {{30, 3}, {31, 3}}));
  v.push_back(make_frame(30, 10, 8, {{3, 1}}));
  v.push_back(make_frame(8, 8, 9, {}));
  v.push_back(make_frame(8, 8, 10, {{12, 1}, {13, 1}, {14, 1}}));
  v.push_back(make_frame(8, 8, 11, {{50, 1}}));
  return v;
}

struct Survivor {
  std::int64_t slice;
  std::vector<std::size_t> pixels;  // indices set to 1
};

inline std::vector<Survivor> preprocess_twelve_expected() {
  return {{0, {9, 10}}, {3, {0, 1}}, {3, {20, 21, 22}}, {4, {63}}, {6, {5}}, {7, {30, 31}}, {10, {12, 13, 14}},
          {11, {50}}};
}

}  // namespace samed::fixtures
