// Shared primitives: image container, thread helpers, seeded RNG utilities.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace headmap {

class error : public std::runtime_error {
 public:
  explicit error(const std::string& what) : std::runtime_error(what) {}
};

// Row-major single-channel image.
template <typename T>
class Image {
 public:
  Image() = default;
  Image(int width, int height, T fill = T{})
      : width_(width), height_(height),
        data_(static_cast<size_t>(width) * height, fill) {}

  int width() const { return width_; }
  int height() const { return height_; }
  bool empty() const { return data_.empty(); }
  size_t size() const { return data_.size(); }

  T& operator()(int x, int y) { return data_[static_cast<size_t>(y) * width_ + x]; }
  const T& operator()(int x, int y) const { return data_[static_cast<size_t>(y) * width_ + x]; }

  T* row(int y) { return data_.data() + static_cast<size_t>(y) * width_; }
  const T* row(int y) const { return data_.data() + static_cast<size_t>(y) * width_; }
  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }

  bool contains(int x, int y) const {
    return x >= 0 && y >= 0 && x < width_ && y < height_;
  }
  // True when (x, y) admits 4-neighbor bilinear interpolation.
  bool interpolable(double x, double y) const {
    return x >= 0.0 && y >= 0.0 && x <= width_ - 1.0 && y <= height_ - 1.0;
  }

  double bilinear(double x, double y) const {
    int x0 = static_cast<int>(std::floor(x));
    int y0 = static_cast<int>(std::floor(y));
    x0 = std::clamp(x0, 0, width_ - 2);
    y0 = std::clamp(y0, 0, height_ - 2);
    const double fx = x - x0, fy = y - y0;
    const double v00 = (*this)(x0, y0), v10 = (*this)(x0 + 1, y0);
    const double v01 = (*this)(x0, y0 + 1), v11 = (*this)(x0 + 1, y0 + 1);
    return (1 - fy) * ((1 - fx) * v00 + fx * v10) + fy * ((1 - fx) * v01 + fx * v11);
  }

  void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<T> data_;
};

// Static row partition; results are independent of the thread count as long
// as the work for distinct rows touches disjoint output.
template <typename Fn>
void parallel_rows(int rows, int threads, Fn&& fn) {
  threads = std::max(1, threads);
  if (threads == 1 || rows <= 1) {
    fn(0, rows);
    return;
  }
  threads = std::min(threads, rows);
  std::vector<std::thread> pool;
  pool.reserve(threads);
  const int chunk = (rows + threads - 1) / threads;
  for (int t = 0; t < threads; ++t) {
    const int y0 = t * chunk;
    const int y1 = std::min(rows, y0 + chunk);
    if (y0 >= y1) break;
    pool.emplace_back([&fn, y0, y1] { fn(y0, y1); });
  }
  for (auto& th : pool) th.join();
}

// splitmix64 step; used to derive independent sub-seeds from one master seed.
inline uint64_t mix_seed(uint64_t seed, uint64_t salt) {
  uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (salt + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline double sqr(double x) { return x * x; }

}  // namespace headmap
