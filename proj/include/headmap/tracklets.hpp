// Temporal filtering: height maps projected to the reference ground chart,
// clustered around local height maxima, linked over time into tracklets and
// thresholded by length.
#pragma once

#include <Eigen/Dense>
#include <unordered_map>
#include <vector>

#include "headmap/core.hpp"
#include "headmap/geometry.hpp"
#include "headmap/mrf.hpp"
#include "headmap/synthetic.hpp"

namespace headmap {

struct GroundPoint {
  double x = 0, y = 0;  // meters, reference ground chart
  double h = 0;         // cm
  int px = 0, py = 0;   // source pixel
};

struct ProjectionResult {
  std::vector<GroundPoint> points;
  int degenerate_skipped = 0;
};

// Projects every labeled (non-unknown) pixel to the ground chart: the pixel and
// its variable-height transfer are triangulated and the vertical component is
// dropped.  Unknown pixels are skipped; degenerate triangulations are counted.
inline ProjectionResult project_to_ground(const HeightMap& hmap, const LabelSet& labels,
                                          const HomographyFamily& fam,
                                          const RelativePose& pose,
                                          const CameraIntrinsics& K_i,
                                          const CameraIntrinsics& K_j) {
  const GroundBasis basis = ground_basis(fam.frame_i, K_i);
  ProjectionResult out;
  const int u = labels.unknown();

  // one homography per label
  std::vector<Matrix3d> H(labels.num_heights());
  for (int l = 0; l < labels.num_heights(); ++l) H[l] = fam.at(labels.height_of(l) / 100.0);

  for (int y = 0; y < hmap.label.height(); ++y) {
    for (int x = 0; x < hmap.label.width(); ++x) {
      const int l = hmap.label(x, y);
      if (l == u) continue;
      const Vector3d q = H[l] * Vector3d(x, y, 1.0);
      if (std::abs(q.z()) < 1e-12) {
        ++out.degenerate_skipped;
        continue;
      }
      try {
        const auto tri = triangulate({double(x), double(y)}, dehom(q), pose, K_i, K_j);
        if (tri.behind_camera) {
          ++out.degenerate_skipped;
          continue;
        }
        const Vector2d g = ground_coords(basis, tri.point);
        out.points.push_back({g.x(), g.y(), labels.height_of(l), x, y});
      } catch (const error&) {
        ++out.degenerate_skipped;
      }
    }
  }
  return out;
}

struct TrackletConfig {
  double theta_d = 0.20;      // meters, association gate on predicted position
  double theta_h = 15.0;      // cm, gate on tracklet average height
  int theta_l = 1;            // frames, length threshold (0 = no filtering)
  double peak_radius = 0.30;  // meters, local-maximum neighborhood
};

struct ClusterCentroid {
  double x = 0, y = 0;  // mean of member positions
  double h = 0;         // peak height, cm
  int size = 0;
};

// Peaks are points with no strictly higher point within the neighborhood
// radius (ties broken toward the lexicographically lowest position); every
// point joins its nearest peak and each cluster reports the mean position and
// the peak height.
inline std::vector<ClusterCentroid> find_peaks_and_cluster(const std::vector<GroundPoint>& points,
                                                           const TrackletConfig& cfg) {
  std::vector<ClusterCentroid> clusters;
  if (points.empty()) return clusters;

  // uniform grid for radius queries
  const double cell = std::max(cfg.peak_radius, 1e-6);
  auto cell_of = [&](const GroundPoint& p) {
    return std::pair<int64_t, int64_t>{static_cast<int64_t>(std::floor(p.x / cell)),
                                       static_cast<int64_t>(std::floor(p.y / cell))};
  };
  std::unordered_map<int64_t, std::vector<int>> grid;
  auto key_of = [](int64_t cx, int64_t cy) { return cx * 73856093LL ^ cy * 19349663LL; };
  for (size_t k = 0; k < points.size(); ++k) {
    const auto [cx, cy] = cell_of(points[k]);
    grid[key_of(cx, cy)].push_back(static_cast<int>(k));
  }

  auto beats = [](const GroundPoint& challenger, const GroundPoint& incumbent) {
    if (challenger.h != incumbent.h) return challenger.h > incumbent.h;
    if (challenger.x != incumbent.x) return challenger.x < incumbent.x;
    return challenger.y < incumbent.y;
  };

  std::vector<int> peak_ids;
  const double r2 = sqr(cfg.peak_radius);
  for (size_t k = 0; k < points.size(); ++k) {
    const auto [cx, cy] = cell_of(points[k]);
    bool is_peak = true;
    for (int64_t gx = cx - 1; gx <= cx + 1 && is_peak; ++gx) {
      for (int64_t gy = cy - 1; gy <= cy + 1 && is_peak; ++gy) {
        auto it = grid.find(key_of(gx, gy));
        if (it == grid.end()) continue;
        for (int other : it->second) {
          if (other == static_cast<int>(k)) continue;
          const double d2 = sqr(points[other].x - points[k].x) + sqr(points[other].y - points[k].y);
          if (d2 <= r2 && beats(points[other], points[k])) {
            is_peak = false;
            break;
          }
        }
      }
    }
    if (is_peak) peak_ids.push_back(static_cast<int>(k));
  }

  // assign every point to its nearest peak (ties toward the lower peak index,
  // which is raster-deterministic)
  clusters.resize(peak_ids.size());
  std::vector<double> sx(peak_ids.size(), 0), sy(peak_ids.size(), 0);
  for (const auto& p : points) {
    int best = 0;
    double best_d2 = std::numeric_limits<double>::infinity();
    for (size_t c = 0; c < peak_ids.size(); ++c) {
      const GroundPoint& peak = points[peak_ids[c]];
      const double d2 = sqr(p.x - peak.x) + sqr(p.y - peak.y);
      if (d2 < best_d2) {
        best_d2 = d2;
        best = static_cast<int>(c);
      }
    }
    sx[best] += p.x;
    sy[best] += p.y;
    clusters[best].size += 1;
    clusters[best].h = std::max(clusters[best].h, p.h);
  }
  for (size_t c = 0; c < clusters.size(); ++c) {
    if (clusters[c].size == 0) continue;  // unreachable: a peak contains itself
    clusters[c].x = sx[c] / clusters[c].size;
    clusters[c].y = sy[c] / clusters[c].size;
  }
  std::erase_if(clusters, [](const ClusterCentroid& c) { return c.size == 0; });
  return clusters;
}

struct TrackletPoint {
  int frame = 0;
  double x = 0, y = 0;  // meters
  double h = 0;         // cm
};

struct Tracklet {
  int id = 0;
  std::vector<TrackletPoint> path;
  bool active = true;

  int length() const { return static_cast<int>(path.size()); }
  double average_height() const {
    double s = 0;
    for (const auto& p : path) s += p.h;
    return path.empty() ? 0.0 : s / path.size();
  }
  Vector2d predicted() const {
    const auto& last = path.back();
    if (path.size() < 2) return {last.x, last.y};
    const auto& prev = path[path.size() - 2];
    return {2 * last.x - prev.x, 2 * last.y - prev.y};
  }
};

struct TrackletSet {
  std::vector<Tracklet> tracklets;
  int next_id = 0;
  int frame = 0;
};

// One association round: centroids extend the nearest active tracklet whose
// linear prediction is within theta_d and whose average height differs by less
// than theta_h (greedy by ascending distance, one centroid per tracklet);
// unmatched centroids spawn tracklets, unmatched active tracklets terminate.
inline void step_tracklets(TrackletSet& state, std::vector<ClusterCentroid> centroids,
                           const TrackletConfig& cfg) {
  // canonical order makes the association invariant to input permutations
  std::sort(centroids.begin(), centroids.end(), [](const ClusterCentroid& a, const ClusterCentroid& b) {
    if (a.x != b.x) return a.x < b.x;
    if (a.y != b.y) return a.y < b.y;
    return a.h < b.h;
  });

  struct Candidate {
    double dist;
    int tracklet;
    int centroid;
  };
  std::vector<Candidate> candidates;
  for (size_t t = 0; t < state.tracklets.size(); ++t) {
    const Tracklet& trk = state.tracklets[t];
    if (!trk.active) continue;
    const Vector2d pred = trk.predicted();
    const double avg_h = trk.average_height();
    for (size_t c = 0; c < centroids.size(); ++c) {
      const double d = (Vector2d(centroids[c].x, centroids[c].y) - pred).norm();
      if (d <= cfg.theta_d && std::abs(centroids[c].h - avg_h) < cfg.theta_h)
        candidates.push_back({d, static_cast<int>(t), static_cast<int>(c)});
    }
  }
  std::sort(candidates.begin(), candidates.end(), [](const Candidate& a, const Candidate& b) {
    if (a.dist != b.dist) return a.dist < b.dist;
    if (a.tracklet != b.tracklet) return a.tracklet < b.tracklet;
    return a.centroid < b.centroid;
  });

  std::vector<bool> tracklet_used(state.tracklets.size(), false);
  std::vector<bool> centroid_used(centroids.size(), false);
  for (const auto& cand : candidates) {
    if (tracklet_used[cand.tracklet] || centroid_used[cand.centroid]) continue;
    tracklet_used[cand.tracklet] = true;
    centroid_used[cand.centroid] = true;
    state.tracklets[cand.tracklet].path.push_back(
        {state.frame, centroids[cand.centroid].x, centroids[cand.centroid].y,
         centroids[cand.centroid].h});
  }

  for (size_t t = 0; t < state.tracklets.size(); ++t) {
    if (state.tracklets[t].active && !tracklet_used[t]) state.tracklets[t].active = false;
  }
  for (size_t c = 0; c < centroids.size(); ++c) {
    if (centroid_used[c]) continue;
    Tracklet trk;
    trk.id = state.next_id++;
    trk.path.push_back({state.frame, centroids[c].x, centroids[c].y, centroids[c].h});
    state.tracklets.push_back(std::move(trk));
  }
  ++state.frame;
}

struct Detection {
  int frame = 0;
  int tracklet_id = 0;
  double x = 0, y = 0;  // meters
  double h = 0;         // cm
};

// Tracklets with length <= theta_l are discarded; survivors emit one detection
// per stored frame, ordered by (frame, tracklet id).
inline std::vector<Detection> filter_tracklets(const TrackletSet& state, int theta_l) {
  std::vector<Detection> out;
  for (const auto& trk : state.tracklets) {
    if (trk.length() <= theta_l) continue;
    for (const auto& p : trk.path) out.push_back({p.frame, trk.id, p.x, p.y, p.h});
  }
  std::sort(out.begin(), out.end(), [](const Detection& a, const Detection& b) {
    if (a.frame != b.frame) return a.frame < b.frame;
    return a.tracklet_id < b.tracklet_id;
  });
  return out;
}

}  // namespace headmap
