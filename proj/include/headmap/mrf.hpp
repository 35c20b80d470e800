// Height-map MRF: per-pixel data costs over height labels plus an unknown
// label, the precomputed |grad_p| map aligning head surfaces with the vertical
// vanishing direction, the truncated non-submodular discontinuity cost, and
// min-sum loopy belief propagation with a brute-force oracle for small grids.
#pragma once

#include <Eigen/Dense>
#include <vector>

#include "headmap/core.hpp"
#include "headmap/daisy.hpp"
#include "headmap/geometry.hpp"

namespace headmap {

struct LabelSet {
  double h_min = 140;   // cm
  double h_max = 200;   // cm
  double delta_h = 2.5; // cm

  LabelSet() = default;
  LabelSet(double h_min_, double h_max_, double delta_) : h_min(h_min_), h_max(h_max_), delta_h(delta_) {
    validate();
  }

  void validate() const {
    if (delta_h <= 0 || h_max < h_min) throw error("label set: bad height range");
    const double steps = (h_max - h_min) / delta_h;
    if (std::abs(steps - std::round(steps)) > 1e-9)
      throw error("label set: (h_max - h_min) must be divisible by delta_h");
  }

  int num_heights() const {
    return static_cast<int>(std::round((h_max - h_min) / delta_h)) + 1;
  }
  int num_labels() const { return num_heights() + 1; }  // heights + unknown
  int unknown() const { return num_heights(); }
  double height_of(int label) const { return h_min + label * delta_h; }  // cm
};

struct MrfConfig {
  double lambda = 0.07;          // regularization weight
  double trunc_K = 8.0;          // K, in label steps
  double data_cost_unknown = -1; // K_{d,u}; <= 0 selects the percentile rule
  double unknown_percentile = 0.30;
  double disc_cost_unknown = 8.0;  // K_{V,u}; equals K by default
  int bp_iterations = 50;
  double bp_damping = 0.5;       // fraction of the previous message kept
  double head_length = 25.0;     // L, cm
  int threads = 1;
  bool log_energy = true;
};

// ------------------------------------------------------------- gradient map

// Expected height change (cm) per pixel of travel toward the vertical
// vanishing point, plus the direction of the line r_p.  Pixels at or above
// the vanishing line are flagged invalid (they can never be pedestrians).
struct GradientMap {
  Image<float> grad;   // |grad_p|, cm per pixel
  Image<float> theta;  // angle of r_p with the u axis, radians
  Image<float> dir_x, dir_y;  // unit direction from p toward v
  Image<uint8_t> valid;

  // Signed expected height change for the 4-neighbor step (dx, dy):
  // s_p * |grad_p| * d(p, q_perp), in cm.
  double offset(int x, int y, int dx, int dy) const {
    if (!valid(x, y)) return 0.0;
    const double proj = dx * dir_x(x, y) + dy * dir_y(x, y);
    const double down = proj * dir_y(x, y);  // y displacement of q_perp
    const double s = down > 0 ? 1.0 : -1.0;
    return s * grad(x, y) * std::abs(proj);
  }
};

inline GradientMap build_gradient_map(const VerticalFrame& frame, int width, int height,
                                      const LabelSet& labels, const MrfConfig& cfg) {
  GradientMap map;
  map.grad = Image<float>(width, height, 0.0f);
  map.theta = Image<float>(width, height, 0.0f);
  map.dir_x = Image<float>(width, height, 0.0f);
  map.dir_y = Image<float>(width, height, 0.0f);
  map.valid = Image<uint8_t>(width, height, 0);

  const double h_bar = 0.5 * (labels.h_min + labels.h_max);  // cm
  // p^L = B^(h_bar - L) (B^h_bar)^-1 p, fixed for the whole frame
  const Matrix3d M = homology(frame, (h_bar - cfg.head_length) / 100.0) *
                     homology_inverse(frame, h_bar / 100.0);

  const bool v_finite = std::abs(frame.v.z()) > 1e-9 * frame.v.norm();
  const Vector2d v_inf_dir = Vector2d(frame.v.x(), frame.v.y()).normalized();

  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const Vector2d p(x, y);
      if (!frame.below_horizon(p)) continue;
      const Vector3d q = M * hom(p);
      if (std::abs(q.z()) < 1e-12) continue;
      const double d = (dehom(q) - p).norm();
      if (d < 1e-9) continue;
      Vector2d dir = v_finite ? Vector2d(dehom(frame.v) - p).eval() : v_inf_dir;
      if (dir.norm() < 1e-9) continue;  // p sits on the vanishing point
      dir.normalize();
      map.grad(x, y) = static_cast<float>(cfg.head_length / d);
      map.dir_x(x, y) = static_cast<float>(dir.x());
      map.dir_y(x, y) = static_cast<float>(dir.y());
      map.theta(x, y) = static_cast<float>(std::atan2(dir.y(), dir.x()));
      map.valid(x, y) = 1;
    }
  }
  return map;
}

// --------------------------------------------------------- pairwise cost

// Directed distance of Eq.-5 style: |l_p - l_q - s_p |grad_p| d(p, q_perp)|,
// heights in cm.
inline double directed_label_distance(double h_p, double h_q, double offset) {
  return std::abs(h_p - h_q - offset);
}

// Full discontinuity cost between two labels of adjacent pixels p and q.
// Max-symmetrized truncated distance for known labels; the unknown label pays
// K_{V,u} against a known label and nothing against itself.
inline double pairwise_cost(int px, int py, int qx, int qy, int label_p, int label_q,
                            const GradientMap& gmap, const LabelSet& labels,
                            const MrfConfig& cfg) {
  const int u = labels.unknown();
  if (label_p == u && label_q == u) return 0.0;
  if (label_p == u || label_q == u) return cfg.disc_cost_unknown;
  const double h_p = labels.height_of(label_p);
  const double h_q = labels.height_of(label_q);
  const double o_pq = gmap.offset(px, py, qx - px, qy - py);
  const double o_qp = gmap.offset(qx, qy, px - qx, py - qy);
  const double d_pq = directed_label_distance(h_p, h_q, o_pq);
  const double d_qp = directed_label_distance(h_q, h_p, o_qp);
  return std::min(std::max(d_pq, d_qp) / labels.delta_h, cfg.trunc_K);
}

// ------------------------------------------------------------- data cost

struct DataCostVolume {
  int width = 0, height = 0;
  int num_labels = 0;                 // heights + unknown (last)
  std::vector<double> cost;           // (y * width + x) * num_labels + label
  std::vector<uint8_t> out_of_segment;  // every height sample was out of image
  double unknown_cost = 0;            // the K_{d,u} actually applied

  double at(int x, int y, int label) const {
    return cost[(static_cast<size_t>(y) * width + x) * num_labels + label];
  }
  double& at(int x, int y, int label) {
    return cost[(static_cast<size_t>(y) * width + x) * num_labels + label];
  }
};

// Average DAISY dissimilarity against each neighbor camera at every height
// label; out-of-image projections contribute the sentinel cost.  Pixels the
// gradient map marks invalid (at or above the horizon) get sentinel height
// costs: no pedestrian can stand there.
inline DataCostVolume build_data_cost(const DescriptorField& ref,
                                      const std::vector<const DescriptorField*>& neighbors,
                                      const std::vector<HomographyFamily>& families,
                                      const LabelSet& labels, const MrfConfig& cfg,
                                      const GradientMap* gmap = nullptr) {
  if (neighbors.size() != families.size() || neighbors.empty())
    throw error("build_data_cost: need one homography family per neighbor");
  const int w = ref.width, h = ref.height;
  const int n_h = labels.num_heights();

  DataCostVolume vol;
  vol.width = w;
  vol.height = h;
  vol.num_labels = labels.num_labels();
  vol.cost.assign(static_cast<size_t>(w) * h * vol.num_labels, 0.0);
  vol.out_of_segment.assign(static_cast<size_t>(w) * h, 0);

  // per-neighbor, per-label homographies
  std::vector<std::vector<Matrix3d>> H(neighbors.size(), std::vector<Matrix3d>(n_h));
  for (size_t j = 0; j < neighbors.size(); ++j)
    for (int l = 0; l < n_h; ++l) H[j][l] = families[j].at(labels.height_of(l) / 100.0);

  parallel_rows(h, cfg.threads, [&](int y0, int y1) {
    for (int y = y0; y < y1; ++y) {
      for (int x = 0; x < w; ++x) {
        double* cost_row = &vol.at(x, y, 0);
        const bool usable = gmap == nullptr || gmap->valid(x, y);
        bool any_in_image = false;
        for (int l = 0; l < n_h; ++l) {
          if (!usable) {
            cost_row[l] = kMaxDissimilarity;
            continue;
          }
          double acc = 0;
          for (size_t j = 0; j < neighbors.size(); ++j) {
            const Vector3d q = H[j][l] * Vector3d(x, y, 1.0);
            if (std::abs(q.z()) < 1e-12) {
              acc += kMaxDissimilarity;
              continue;
            }
            const Vector2d qd = dehom(q);
            if (!neighbors[j]->in_bounds(qd.x(), qd.y())) {
              acc += kMaxDissimilarity;
            } else {
              acc += dissimilarity(ref, x, y, *neighbors[j], qd);
              any_in_image = true;
            }
          }
          cost_row[l] = acc / static_cast<double>(neighbors.size());
        }
        if (!any_in_image) vol.out_of_segment[static_cast<size_t>(y) * w + x] = 1;
      }
    }
  });

  // unknown label: fixed constant, or a per-frame percentile of the observed
  // height-label costs
  double k_du = cfg.data_cost_unknown;
  if (k_du <= 0) {
    std::vector<double> all;
    all.reserve(static_cast<size_t>(w) * h * n_h);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        for (int l = 0; l < n_h; ++l) all.push_back(vol.at(x, y, l));
    const size_t pos = static_cast<size_t>(cfg.unknown_percentile * (all.size() - 1));
    std::nth_element(all.begin(), all.begin() + pos, all.end());
    k_du = all[pos];
  }
  vol.unknown_cost = k_du;
  const int u = labels.unknown();
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) vol.at(x, y, u) = k_du;
  return vol;
}

// ------------------------------------------------------------ energy

struct HeightMap {
  Image<int32_t> label;  // label indices; unknown = LabelSet::unknown()
  double energy = 0;
  std::vector<double> energy_trace;  // per BP iteration when logging is on
};

inline double energy(const Image<int32_t>& labeling, const DataCostVolume& data,
                     const GradientMap& gmap, const LabelSet& labels,
                     const MrfConfig& cfg) {
  const int w = data.width, h = data.height;
  double e = 0;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      e += data.at(x, y, labeling(x, y));
      if (x + 1 < w)
        e += cfg.lambda *
             pairwise_cost(x, y, x + 1, y, labeling(x, y), labeling(x + 1, y), gmap, labels, cfg);
      if (y + 1 < h)
        e += cfg.lambda *
             pairwise_cost(x, y, x, y + 1, labeling(x, y), labeling(x, y + 1), gmap, labels, cfg);
    }
  }
  return e;
}

// Per-pixel data argmin with the BP tie rule: lower height wins, unknown only
// when strictly minimal.
inline Image<int32_t> data_argmin(const DataCostVolume& data) {
  Image<int32_t> out(data.width, data.height, 0);
  for (int y = 0; y < data.height; ++y) {
    for (int x = 0; x < data.width; ++x) {
      int best = 0;
      double best_cost = data.at(x, y, 0);
      for (int l = 1; l < data.num_labels; ++l) {
        const double c = data.at(x, y, l);
        if (c < best_cost) {
          best_cost = c;
          best = l;
        }
      }
      out(x, y) = best;
    }
  }
  return out;
}

// ------------------------------------------------------------- loopy BP

namespace detail {

// Messages arriving at each pixel from direction dir:
// 0 from the left neighbor, 1 from the right, 2 from above, 3 from below.
constexpr int kOpposite[4] = {1, 0, 3, 2};
constexpr int kDx[4] = {-1, 1, 0, 0};
constexpr int kDy[4] = {0, 0, -1, 1};

}  // namespace detail

// Min-sum loopy belief propagation, synchronous schedule with min-normalized
// messages; deterministic and bit-identical for any thread count.
inline HeightMap lbp_minsum(const DataCostVolume& data, const GradientMap& gmap,
                            const LabelSet& labels, const MrfConfig& cfg) {
  const int w = data.width, h = data.height;
  const int n_labels = data.num_labels;
  const int n_h = n_labels - 1;
  const int u = n_h;
  const size_t plane = static_cast<size_t>(w) * h * n_labels;

  std::vector<double> msg_old(4 * plane, 0.0), msg_new(4 * plane, 0.0);
  std::vector<double> total(plane, 0.0);  // data + all incoming (old)

  auto msg_at = [&](std::vector<double>& buf, int dir, int x, int y) -> double* {
    return buf.data() + dir * plane + (static_cast<size_t>(y) * w + x) * n_labels;
  };
  auto total_at = [&](int x, int y) -> double* {
    return total.data() + (static_cast<size_t>(y) * w + x) * n_labels;
  };

  auto compute_labeling = [&](std::vector<double>& msgs) {
    Image<int32_t> labeling(w, h, 0);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        int best = 0;
        double best_cost = std::numeric_limits<double>::infinity();
        for (int l = 0; l < n_labels; ++l) {
          double b = data.at(x, y, l);
          for (int dir = 0; dir < 4; ++dir) b += msg_at(msgs, dir, x, y)[l];
          if (b < best_cost) {
            best_cost = b;
            best = l;
          }
        }
        labeling(x, y) = best;
      }
    }
    return labeling;
  };

  HeightMap out;
  const double lam = cfg.lambda;

  for (int iter = 0; iter < cfg.bp_iterations; ++iter) {
    // totals from the previous iteration's messages
    parallel_rows(h, cfg.threads, [&](int y0, int y1) {
      for (int y = y0; y < y1; ++y)
        for (int x = 0; x < w; ++x) {
          double* t = total_at(x, y);
          for (int l = 0; l < n_labels; ++l) {
            double s = data.at(x, y, l);
            for (int dir = 0; dir < 4; ++dir) s += msg_at(msg_old, dir, x, y)[l];
            t[l] = s;
          }
        }
    });

    parallel_rows(h, cfg.threads, [&](int y0, int y1) {
      std::vector<double> hq(n_labels), pref(n_h), suff(n_h);
      for (int y = y0; y < y1; ++y) {
        for (int x = 0; x < w; ++x) {
          for (int dir = 0; dir < 4; ++dir) {
            const int qx = x + detail::kDx[dir], qy = y + detail::kDy[dir];
            double* m = msg_at(msg_new, dir, x, y);
            if (qx < 0 || qy < 0 || qx >= w || qy >= h) {
              for (int l = 0; l < n_labels; ++l) m[l] = 0.0;
              continue;
            }
            // h_q: everything at q except the message that came from p
            const double* t_q = total_at(qx, qy);
            const double* back = msg_at(msg_old, detail::kOpposite[dir], qx, qy);
            double min_known = std::numeric_limits<double>::infinity();
            for (int l = 0; l < n_labels; ++l) {
              hq[l] = t_q[l] - back[l];
              if (l < n_h) min_known = std::min(min_known, hq[l]);
            }

            if (lam == 0.0) {
              // messages carry no information; normalization keeps them zero
              for (int l = 0; l < n_labels; ++l) m[l] = 0.0;
              continue;
            }

            // The symmetrized truncated distance over label indices a (at q)
            // and b (at p) collapses to min(|a - b - c| + e, K) with
            //   c = (o_qp - o_pq) / (2 delta),  e = |o_qp + o_pq| / (2 delta),
            // via max(|x - u|, |x - v|) = |x - (u+v)/2| + |u-v|/2.  That makes
            // the min-sum update a lower-envelope scan, O(L) per message.
            const double o_qp = gmap.offset(qx, qy, x - qx, y - qy);
            const double o_pq = gmap.offset(x, y, qx - x, qy - y);
            const double c = (o_qp - o_pq) / (2.0 * labels.delta_h);
            const double e = std::abs(o_qp + o_pq) / (2.0 * labels.delta_h);

            // prefix/suffix minima of hq[a] -/+ lam*a
            double run = std::numeric_limits<double>::infinity();
            for (int a = 0; a < n_h; ++a) {
              run = std::min(run, hq[a] - lam * a);
              pref[a] = run;
            }
            run = std::numeric_limits<double>::infinity();
            for (int a = n_h - 1; a >= 0; --a) {
              run = std::min(run, hq[a] + lam * a);
              suff[a] = run;
            }

            const double cap = min_known + lam * cfg.trunc_K;
            const double from_u = hq[u] + lam * cfg.disc_cost_unknown;
            for (int b = 0; b < n_h; ++b) {
              const double t = b + c;  // kernel center in a-index units
              double env = std::numeric_limits<double>::infinity();
              const int lo_idx = static_cast<int>(std::floor(t));
              if (lo_idx >= 0)
                env = lam * t + pref[std::min(lo_idx, n_h - 1)];
              const int hi_idx = static_cast<int>(std::ceil(t));
              if (hi_idx <= n_h - 1)
                env = std::min(env, -lam * t + suff[std::max(hi_idx, 0)]);
              m[b] = std::min({env + lam * e, cap, from_u});
            }
            m[u] = std::min(hq[u], min_known + lam * cfg.disc_cost_unknown);

            if (cfg.bp_damping > 0) {
              const double* prev = msg_at(msg_old, dir, x, y);
              for (int l = 0; l < n_labels; ++l)
                m[l] = cfg.bp_damping * prev[l] + (1.0 - cfg.bp_damping) * m[l];
            }

            double lo = m[0];
            for (int l = 1; l < n_labels; ++l) lo = std::min(lo, m[l]);
            for (int l = 0; l < n_labels; ++l) m[l] -= lo;
          }
        }
      }
    });

    msg_old.swap(msg_new);

    if (cfg.log_energy) {
      const Image<int32_t> labeling = compute_labeling(msg_old);
      out.energy_trace.push_back(energy(labeling, data, gmap, labels, cfg));
    }
  }

  out.label = compute_labeling(msg_old);
  out.energy = energy(out.label, data, gmap, labels, cfg);
  return out;
}

// ------------------------------------------------------- brute force oracle

// Exhaustive enumeration over all labelings; the global minimizer, with ties
// resolved to the lexicographically lowest labeling in raster order.
inline HeightMap brute_force_min(const DataCostVolume& data, const GradientMap& gmap,
                                 const LabelSet& labels, const MrfConfig& cfg) {
  const int pixels = data.width * data.height;
  const double combos = std::pow(static_cast<double>(data.num_labels), pixels);
  if (combos > 1e8) throw error("brute_force_min: instance too large");

  Image<int32_t> current(data.width, data.height, 0);
  Image<int32_t> best = current;
  double best_energy = std::numeric_limits<double>::infinity();

  while (true) {
    const double e = energy(current, data, gmap, labels, cfg);
    if (e < best_energy) {
      best_energy = e;
      best = current;
    }
    // odometer: last pixel fastest, so labelings appear in lexicographic order
    int k = pixels - 1;
    for (; k >= 0; --k) {
      int32_t& v = current.data()[k];
      if (++v < data.num_labels) break;
      v = 0;
    }
    if (k < 0) break;
  }

  HeightMap out;
  out.label = best;
  out.energy = best_energy;
  return out;
}

}  // namespace headmap
