// Projective primitives shared by the whole pipeline: camera models, homologies,
// variable-height homographies, pose recovery from F, triangulation, epipolar
// segments and triplet scale propagation.
#pragma once

#include <Eigen/Dense>
#include <optional>
#include <vector>

#include "headmap/core.hpp"

namespace headmap {

using Eigen::Matrix3d;
using Eigen::Vector2d;
using Eigen::Vector3d;

inline Vector3d hom(const Vector2d& p) { return {p.x(), p.y(), 1.0}; }

inline Vector2d dehom(const Vector3d& p) {
  return {p.x() / p.z(), p.y() / p.z()};
}

// Line through two homogeneous points (or point of intersection of two lines).
inline Vector3d cross_line(const Vector3d& a, const Vector3d& b) {
  return a.cross(b);
}

// Perpendicular pixel distance from a finite point to the line (a, b, c).
inline double point_line_distance(const Vector2d& p, const Vector3d& line) {
  const double n = std::hypot(line.x(), line.y());
  return std::abs(line.dot(hom(p))) / n;
}

// Frobenius-normalized copy with the largest-magnitude entry made positive.
// Removes the projective scale ambiguity before matrix comparisons.
inline Matrix3d normalized_matrix(const Matrix3d& m) {
  Matrix3d out = m / m.norm();
  int r = 0, c = 0;
  m.cwiseAbs().maxCoeff(&r, &c);
  if (out(r, c) < 0) out = -out;
  return out;
}

struct CameraIntrinsics {
  double fx = 0, fy = 0;
  double cx = 0, cy = 0;
  int width = 0, height = 0;

  Matrix3d matrix() const {
    Matrix3d k;
    k << fx, 0, cx, 0, fy, cy, 0, 0, 1;
    return k;
  }
  Matrix3d inverse() const {
    Matrix3d k;
    k << 1.0 / fx, 0, -cx / fx, 0, 1.0 / fy, -cy / fy, 0, 0, 1;
    return k;
  }
  bool contains(const Vector2d& p) const {
    return p.x() >= 0 && p.y() >= 0 && p.x() < width && p.y() < height;
  }
  void validate() const {
    if (fx <= 0 || fy <= 0) throw error("intrinsics: focal lengths must be positive");
    if (cx < 0 || cx >= width || cy < 0 || cy >= height)
      throw error("intrinsics: principal point outside image");
  }
};

// Relative pose C_i -> C_j: X_j = R * X_i + t.  t is in meters once a metric
// scale has been injected.
struct RelativePose {
  Matrix3d R = Matrix3d::Identity();
  Vector3d t = Vector3d::Zero();

  bool is_rotation(double tol = 1e-9) const {
    return (R.transpose() * R - Matrix3d::Identity()).cwiseAbs().maxCoeff() < tol &&
           std::abs(R.determinant() - 1.0) < tol;
  }
};

// Vertical vanishing geometry of one camera.  l is unit length and oriented so
// that l . v < 0; with that orientation points below the horizon have l . p < 0
// and the metric scale coefficient alpha comes out positive for valid scenes.
struct VerticalFrame {
  Vector3d v = Vector3d::Zero();   // vertical vanishing point, homogeneous
  Vector3d l = Vector3d::Zero();   // ground vanishing line, unit norm
  double alpha = 0.0;              // metric scale coefficient [1/m]

  static VerticalFrame canonical(const Vector3d& v, const Vector3d& l, double alpha) {
    VerticalFrame f;
    f.v = v;
    const double n = l.norm();
    if (n <= 0) throw error("vertical frame: zero vanishing line");
    f.l = l / n;
    if (std::abs(f.l.dot(f.v)) < 1e-12) throw error("vertical frame: l orthogonal to v");
    if (f.l.dot(f.v) > 0) f.l = -f.l;
    f.alpha = alpha;
    return f;
  }

  bool below_horizon(const Vector2d& p) const { return l.dot(hom(p)) < 0.0; }
};

// Homology B^h = I + alpha * h * v * l^T linking the image of a ground point to
// the image of the same vertical's point at height h (meters).
inline Matrix3d homology(const VerticalFrame& frame, double h) {
  const double c = frame.alpha * h;
  if (std::abs(c * frame.l.dot(frame.v) + 1.0) < 1e-12)
    throw error("homology: singular at this height");
  return Matrix3d::Identity() + c * frame.v * frame.l.transpose();
}

// Closed-form inverse of I + c v l^T (Sherman-Morrison).
inline Matrix3d homology_inverse(const VerticalFrame& frame, double h) {
  const double c = frame.alpha * h;
  const double denom = 1.0 + c * frame.l.dot(frame.v);
  if (std::abs(denom) < 1e-12) throw error("homology: singular at this height");
  return Matrix3d::Identity() - (c / denom) * frame.v * frame.l.transpose();
}

// Ground homography plus the vanishing geometry of both cameras; generates the
// full family H^h = B_j^h H0 (B_i^h)^-1.
struct HomographyFamily {
  Matrix3d H0 = Matrix3d::Identity();  // ground homography C_i -> C_j
  VerticalFrame frame_i, frame_j;
  Matrix3d F = Matrix3d::Zero();       // fundamental matrix C_i -> C_j, rank 2

  Matrix3d at(double h) const {
    if (h == 0.0) return H0;
    return homology(frame_j, h) * H0 * homology_inverse(frame_i, h);
  }
};

inline Matrix3d variable_height_homography(const HomographyFamily& fam, double h) {
  return fam.at(h);
}

inline RelativePose inject_metric_scale(const RelativePose& pose, double laser_distance) {
  if (laser_distance <= 0) throw error("inject_metric_scale: distance must be positive");
  const double n = pose.t.norm();
  if (n <= 0) throw error("inject_metric_scale: zero translation");
  RelativePose out = pose;
  out.t = pose.t * (laser_distance / n);
  return out;
}

struct TriangulationResult {
  Vector3d point = Vector3d::Zero();  // in C_i coordinates, meters
  bool behind_camera = false;         // negative depth in either view
};

// Midpoint triangulation: the midpoint of the common perpendicular between the
// two back-projected rays, expressed in C_i's frame.
inline TriangulationResult triangulate(const Vector2d& p_i, const Vector2d& p_j,
                                       const RelativePose& pose,
                                       const CameraIntrinsics& K_i,
                                       const CameraIntrinsics& K_j) {
  const Vector3d di = (K_i.inverse() * hom(p_i)).normalized();
  const Vector3d cj = -pose.R.transpose() * pose.t;
  const Vector3d dj = (pose.R.transpose() * (K_j.inverse() * hom(p_j))).normalized();

  const double cross_norm = di.cross(dj).norm();
  if (cross_norm < 1e-6) throw error("triangulate: rays are near parallel");

  // Closest points: origin_i + s*di and cj + u*dj.
  const double b = di.dot(dj);
  const Vector3d w = -cj;  // origin_i - cj
  const double d = di.dot(w);
  const double e = dj.dot(w);
  const double denom = 1.0 - b * b;
  const double s = (b * e - d) / denom;
  const double u = (e - b * d) / denom;

  TriangulationResult out;
  out.point = 0.5 * ((s * di) + (cj + u * dj));
  out.behind_camera = (s < 0.0) || (u < 0.0);
  return out;
}

// Projects a C_i-frame 3D point into camera j of the pose pair.
inline Vector2d project_to_neighbor(const Vector3d& point_i, const RelativePose& pose,
                                    const CameraIntrinsics& K_j) {
  return dehom(K_j.matrix() * (pose.R * point_i + pose.t));
}

inline Vector2d project_reference(const Vector3d& point_i, const CameraIntrinsics& K_i) {
  return dehom(K_i.matrix() * point_i);
}

struct PixelMatch {
  Vector2d p_i, p_j;
};

// Pose from a fundamental matrix via the essential matrix E = K_j^T F K_i and
// its SVD; of the four (R, t) candidates keeps the one placing a strict
// majority of the triangulated witnesses in front of both cameras.  ||t|| = 1.
inline RelativePose decompose_fundamental(const Matrix3d& F,
                                          const CameraIntrinsics& K_i,
                                          const CameraIntrinsics& K_j,
                                          const std::vector<PixelMatch>& witnesses) {
  if (witnesses.empty()) throw error("decompose_fundamental: need at least one witness match");
  const Matrix3d E = K_j.matrix().transpose() * F * K_i.matrix();

  Eigen::JacobiSVD<Matrix3d> svd(E, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Matrix3d U = svd.matrixU();
  Matrix3d V = svd.matrixV();
  if (U.determinant() < 0) U.col(2) *= -1;
  if (V.determinant() < 0) V.col(2) *= -1;

  Matrix3d W;
  W << 0, -1, 0, 1, 0, 0, 0, 0, 1;

  std::array<RelativePose, 4> candidates;
  candidates[0] = {U * W * V.transpose(), U.col(2)};
  candidates[1] = {U * W * V.transpose(), -U.col(2)};
  candidates[2] = {U * W.transpose() * V.transpose(), U.col(2)};
  candidates[3] = {U * W.transpose() * V.transpose(), -U.col(2)};

  std::array<int, 4> votes = {0, 0, 0, 0};
  for (int c = 0; c < 4; ++c) {
    for (const auto& m : witnesses) {
      try {
        TriangulationResult tri = triangulate(m.p_i, m.p_j, candidates[c], K_i, K_j);
        if (!tri.behind_camera) ++votes[c];
      } catch (const error&) {
        // parallel rays: witness skipped for this candidate
      }
    }
  }

  int best = 0;
  for (int c = 1; c < 4; ++c)
    if (votes[c] > votes[best]) best = c;
  for (int c = 0; c < 4; ++c)
    if (c != best && votes[c] == votes[best])
      throw error("decompose_fundamental: ambiguous cheirality");
  return candidates[best];
}

struct EpipolarSegment {
  Vector2d p_min, p_max;       // projections of p_i at h_min and h_max in C_j
  bool out_of_image = false;   // whole segment outside C_j's bounds
};

namespace detail {
// Liang-Barsky style test: does segment [a, b] intersect the rectangle
// [0, w) x [0, h)?
inline bool segment_hits_rect(const Vector2d& a, const Vector2d& b, double w, double h) {
  double t0 = 0.0, t1 = 1.0;
  const double dx = b.x() - a.x(), dy = b.y() - a.y();
  const double p[4] = {-dx, dx, -dy, dy};
  const double q[4] = {a.x(), w - 1 - a.x(), a.y(), h - 1 - a.y()};
  for (int k = 0; k < 4; ++k) {
    if (p[k] == 0.0) {
      if (q[k] < 0) return false;
    } else {
      const double r = q[k] / p[k];
      if (p[k] < 0) {
        if (r > t1) return false;
        if (r > t0) t0 = r;
      } else {
        if (r < t0) return false;
        if (r < t1) t1 = r;
      }
    }
  }
  return t0 <= t1;
}
}  // namespace detail

// Search segment in C_j for heights in [h_min, h_max] (meters).
inline EpipolarSegment epipolar_segment(const Vector2d& p_i, const HomographyFamily& fam,
                                        double h_min, double h_max,
                                        int width_j, int height_j) {
  if (h_min > h_max) throw error("epipolar_segment: h_min must not exceed h_max");
  EpipolarSegment seg;
  seg.p_min = dehom(fam.at(h_min) * hom(p_i));
  seg.p_max = dehom(fam.at(h_max) * hom(p_i));
  seg.out_of_image = !detail::segment_hits_rect(seg.p_min, seg.p_max,
                                                static_cast<double>(width_j),
                                                static_cast<double>(height_j));
  return seg;
}

struct TripleMatch {
  Vector2d p_i, p_j, p_k;
};

// Scale factor s for pose_ik so that the C_i-frame reconstruction from matches
// (i,k) agrees metrically with the one from (i,j).  Robust median over ratios
// of pairwise 3D point distances; both reconstructions share C_i as origin.
inline double propagate_scale_triplet(const RelativePose& pose_ij,
                                      const RelativePose& pose_ik,
                                      const std::vector<TripleMatch>& triples,
                                      const CameraIntrinsics& K_i,
                                      const CameraIntrinsics& K_j,
                                      const CameraIntrinsics& K_k) {
  if (triples.size() < 8) throw error("propagate_scale_triplet: need at least 8 triple matches");

  std::vector<Vector3d> pts_ij, pts_ik;
  pts_ij.reserve(triples.size());
  pts_ik.reserve(triples.size());
  for (const auto& tm : triples) {
    try {
      TriangulationResult a = triangulate(tm.p_i, tm.p_j, pose_ij, K_i, K_j);
      TriangulationResult b = triangulate(tm.p_i, tm.p_k, pose_ik, K_i, K_k);
      if (a.behind_camera || b.behind_camera) continue;
      pts_ij.push_back(a.point);
      pts_ik.push_back(b.point);
    } catch (const error&) {
      continue;
    }
  }
  if (pts_ij.size() < 8) throw error("propagate_scale_triplet: too few usable triples");

  std::vector<double> ratios;
  const size_t n = pts_ij.size();
  ratios.reserve(n * (n - 1) / 2);
  for (size_t a = 0; a < n; ++a) {
    for (size_t b = a + 1; b < n; ++b) {
      const double d_ij = (pts_ij[a] - pts_ij[b]).norm();
      const double d_ik = (pts_ik[a] - pts_ik[b]).norm();
      if (d_ik > 1e-12 && d_ij > 1e-12) ratios.push_back(d_ij / d_ik);
    }
  }
  if (ratios.empty()) throw error("propagate_scale_triplet: degenerate point set");

  const size_t mid = ratios.size() / 2;
  std::nth_element(ratios.begin(), ratios.begin() + mid, ratios.end());
  return ratios[mid];
}

}  // namespace headmap
