// Dense DAISY-style descriptor field and the histogram dissimilarity used as
// the stereo data cost: half-rectified oriented gradient maps, per-ring
// Gaussian smoothing, L2-normalized histograms.
#pragma once

#include <Eigen/Dense>
#include <vector>

#include "headmap/core.hpp"
#include "headmap/geometry.hpp"

namespace headmap {

struct DaisyParams {
  double radius = 15.0;  // R, pixels
  int rings = 3;         // Q
  int ring_samples = 8;  // T, histograms per ring
  int orientations = 8;  // H, bins per histogram

  int total_histograms() const { return rings * ring_samples + 1; }  // S
  int descriptor_size() const { return total_histograms() * orientations; }

  void validate() const {
    if (radius <= 0 || rings < 1 || ring_samples < 1 || orientations < 1)
      throw error("daisy: invalid parameters");
  }
};

// Upper bound of the dissimilarity between unit-norm histograms; also the
// sentinel cost for out-of-image lookups.
constexpr double kMaxDissimilarity = 2.0;

// Per-pixel flags.
enum : uint8_t { kDaisyBorder = 1, kDaisyFlat = 2 };

struct DescriptorField {
  int width = 0, height = 0;
  DaisyParams params;
  std::vector<float> data;    // (y * width + x) * descriptor_size, histogram-major
  std::vector<uint8_t> flags;

  const float* at(int x, int y) const {
    return data.data() +
           (static_cast<size_t>(y) * width + x) * params.descriptor_size();
  }

  bool in_bounds(double x, double y) const {
    return x >= 0.0 && y >= 0.0 && x <= width - 1.0 && y <= height - 1.0;
  }

  // Bilinear descriptor at a subpixel point; every interpolated histogram is
  // re-normalized to unit L2 norm.  Returns false when out of bounds.
  bool interpolate(double x, double y, float* out) const {
    if (!in_bounds(x, y)) return false;
    const int d = params.descriptor_size();
    int x0 = std::clamp(static_cast<int>(std::floor(x)), 0, width - 2);
    int y0 = std::clamp(static_cast<int>(std::floor(y)), 0, height - 2);
    const float fx = static_cast<float>(x - x0), fy = static_cast<float>(y - y0);
    const float w00 = (1 - fx) * (1 - fy), w10 = fx * (1 - fy);
    const float w01 = (1 - fx) * fy, w11 = fx * fy;
    const float* d00 = at(x0, y0);
    const float* d10 = at(x0 + 1, y0);
    const float* d01 = at(x0, y0 + 1);
    const float* d11 = at(x0 + 1, y0 + 1);
    for (int k = 0; k < d; ++k)
      out[k] = w00 * d00[k] + w10 * d10[k] + w01 * d01[k] + w11 * d11[k];
    const int bins = params.orientations;
    for (int s = 0; s < params.total_histograms(); ++s) {
      float* h = out + s * bins;
      float norm2 = 0;
      for (int k = 0; k < bins; ++k) norm2 += h[k] * h[k];
      if (norm2 > 1e-20f) {
        const float inv = 1.0f / std::sqrt(norm2);
        for (int k = 0; k < bins; ++k) h[k] *= inv;
      }
    }
    return true;
  }
};

namespace detail {

// Separable Gaussian with zero padding outside the image.
inline void gaussian_blur(Image<float>& img, double sigma, Image<float>& tmp, int threads) {
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<float> kernel(2 * radius + 1);
  double sum = 0;
  for (int k = -radius; k <= radius; ++k) {
    kernel[k + radius] = static_cast<float>(std::exp(-0.5 * sqr(k / sigma)));
    sum += kernel[k + radius];
  }
  for (float& v : kernel) v = static_cast<float>(v / sum);

  const int w = img.width(), h = img.height();
  if (tmp.width() != w || tmp.height() != h) tmp = Image<float>(w, h);

  parallel_rows(h, threads, [&](int y0, int y1) {
    for (int y = y0; y < y1; ++y) {
      const float* src = img.row(y);
      float* dst = tmp.row(y);
      for (int x = 0; x < w; ++x) {
        float acc = 0;
        const int k0 = std::max(-radius, -x), k1 = std::min(radius, w - 1 - x);
        for (int k = k0; k <= k1; ++k) acc += kernel[k + radius] * src[x + k];
        dst[x] = acc;
      }
    }
  });
  parallel_rows(h, threads, [&](int y0, int y1) {
    for (int y = y0; y < y1; ++y) {
      float* dst = img.row(y);
      const int k0 = std::max(-radius, -y), k1 = std::min(radius, h - 1 - y);
      for (int x = 0; x < w; ++x) {
        float acc = 0;
        for (int k = k0; k <= k1; ++k) acc += kernel[k + radius] * tmp(x, y + k);
        dst[x] = acc;
      }
    }
  });
}

}  // namespace detail

// Dense descriptor field.  H oriented gradient maps (half-rectified), blurred
// with per-ring Gaussians of increasing sigma; histograms sampled at the pixel
// and on Q rings of T points; the center histogram uses the first layer.
inline DescriptorField compute_field(const Image<float>& image, const DaisyParams& params,
                                     int threads = 1) {
  params.validate();
  const int w = image.width(), h = image.height();
  const int min_side = static_cast<int>(2 * params.radius + 1);
  if (w < min_side || h < min_side) throw error("compute_field: image smaller than 2R+1");

  const int bins = params.orientations;
  const int d = params.descriptor_size();

  DescriptorField field;
  field.width = w;
  field.height = h;
  field.params = params;
  field.data.assign(static_cast<size_t>(w) * h * d, 0.0f);
  field.flags.assign(static_cast<size_t>(w) * h, 0);

  // half-rectified oriented derivatives
  std::vector<Image<float>> maps(bins, Image<float>(w, h));
  parallel_rows(h, threads, [&](int y0, int y1) {
    for (int y = y0; y < y1; ++y) {
      const int ym = std::max(0, y - 1), yp = std::min(h - 1, y + 1);
      for (int x = 0; x < w; ++x) {
        const int xm = std::max(0, x - 1), xp = std::min(w - 1, x + 1);
        const float gx = 0.5f * (image(xp, y) - image(xm, y));
        const float gy = 0.5f * (image(x, yp) - image(x, ym));
        for (int k = 0; k < bins; ++k) {
          const double theta = 2.0 * M_PI * k / bins;
          const float v = static_cast<float>(std::cos(theta)) * gx +
                          static_cast<float>(std::sin(theta)) * gy;
          maps[k](x, y) = v > 0 ? v : 0.0f;
        }
      }
    }
  });

  Image<float> tmp(w, h);
  double sigma_prev = 0;
  for (int q = 1; q <= params.rings; ++q) {
    const double sigma_q = params.radius * q / (2.0 * params.rings);
    const double sigma_inc = std::sqrt(sqr(sigma_q) - sqr(sigma_prev));
    sigma_prev = sigma_q;
    for (int k = 0; k < bins; ++k) detail::gaussian_blur(maps[k], sigma_inc, tmp, threads);

    const double ring_r = params.radius * q / params.rings;
    parallel_rows(h, threads, [&](int y0, int y1) {
      for (int y = y0; y < y1; ++y) {
        for (int x = 0; x < w; ++x) {
          float* desc = field.data.data() + (static_cast<size_t>(y) * w + x) * d;
          if (q == 1) {
            float* hist = desc;  // center histogram from the first layer
            for (int k = 0; k < bins; ++k) hist[k] = maps[k](x, y);
          }
          for (int t = 0; t < params.ring_samples; ++t) {
            const double phi = 2.0 * M_PI * t / params.ring_samples;
            const double sx = x + ring_r * std::cos(phi);
            const double sy = y + ring_r * std::sin(phi);
            float* hist = desc + (1 + (q - 1) * params.ring_samples + t) * bins;
            if (sx < 0 || sy < 0 || sx > w - 1 || sy > h - 1) {
              // zero padding outside the image
              for (int k = 0; k < bins; ++k) hist[k] = 0.0f;
            } else {
              for (int k = 0; k < bins; ++k)
                hist[k] = static_cast<float>(maps[k].bilinear(sx, sy));
            }
          }
        }
      }
    });
  }

  // per-histogram normalization and flags
  const double border = params.radius;
  parallel_rows(h, threads, [&](int y0, int y1) {
    for (int y = y0; y < y1; ++y) {
      for (int x = 0; x < w; ++x) {
        float* desc = field.data.data() + (static_cast<size_t>(y) * w + x) * d;
        bool all_zero = true;
        for (int s = 0; s < params.total_histograms(); ++s) {
          float* hist = desc + s * bins;
          float norm2 = 0;
          for (int k = 0; k < bins; ++k) norm2 += hist[k] * hist[k];
          if (norm2 > 1e-20f) {
            all_zero = false;
            const float inv = 1.0f / std::sqrt(norm2);
            for (int k = 0; k < bins; ++k) hist[k] *= inv;
          } else {
            for (int k = 0; k < bins; ++k) hist[k] = 0.0f;
          }
        }
        uint8_t flag = 0;
        if (all_zero) flag |= kDaisyFlat;
        if (x < border || y < border || x >= w - border || y >= h - border)
          flag |= kDaisyBorder;
        field.flags[static_cast<size_t>(y) * w + x] = flag;
      }
    }
  });
  return field;
}

// Mean histogram L2 distance (Eq.-style DAISY dissimilarity) between the
// descriptor of integer pixel p in field_i and the (bilinearly interpolated)
// descriptor at subpixel q in field_j.  Out-of-bounds q returns the sentinel
// kMaxDissimilarity rather than throwing.
inline double dissimilarity(const DescriptorField& field_i, int px, int py,
                            const DescriptorField& field_j, const Vector2d& q) {
  if (px < 0 || py < 0 || px >= field_i.width || py >= field_i.height)
    throw error("dissimilarity: reference pixel out of bounds");
  if (!field_j.in_bounds(q.x(), q.y())) return kMaxDissimilarity;

  const int bins = field_i.params.orientations;
  const int s_total = field_i.params.total_histograms();
  const float* a = field_i.at(px, py);

  thread_local std::vector<float> scratch;
  const float* b;
  const double qx_floor = std::floor(q.x()), qy_floor = std::floor(q.y());
  if (qx_floor == q.x() && qy_floor == q.y()) {
    b = field_j.at(static_cast<int>(q.x()), static_cast<int>(q.y()));
  } else {
    scratch.resize(field_j.params.descriptor_size());
    field_j.interpolate(q.x(), q.y(), scratch.data());
    b = scratch.data();
  }

  double acc = 0;
  for (int s = 0; s < s_total; ++s) {
    double norm2 = 0;
    const float* ha = a + s * bins;
    const float* hb = b + s * bins;
    for (int k = 0; k < bins; ++k) norm2 += sqr(static_cast<double>(ha[k]) - hb[k]);
    acc += std::sqrt(norm2);
  }
  return acc / s_total;
}

inline double dissimilarity(const DescriptorField& field_i, const Vector2d& p,
                            const DescriptorField& field_j, const Vector2d& q) {
  return dissimilarity(field_i, static_cast<int>(p.x()), static_cast<int>(p.y()), field_j, q);
}

}  // namespace headmap
