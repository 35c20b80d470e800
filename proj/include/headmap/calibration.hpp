// Unsupervised metric calibration: fundamental matrix fit over point matches,
// per-match height hypotheses, robust ground clustering, ground homography,
// ground-projection optimization and alpha voting with LMedS selection.
#pragma once

#include <Eigen/Dense>
#include <functional>
#include <numeric>
#include <random>
#include <vector>

#include "headmap/core.hpp"
#include "headmap/geometry.hpp"

namespace headmap {

struct PointMatch {
  Vector2d p_i, p_j;
  int triple_id = -1;  // index into a triple-match table, -1 when pair-only
};

struct PointMatchSet {
  std::vector<PointMatch> matches;

  // Drops matches outside the image bounds; returns how many were removed.
  int clamp_to_bounds(const CameraIntrinsics& K_i, const CameraIntrinsics& K_j) {
    const size_t before = matches.size();
    std::erase_if(matches, [&](const PointMatch& m) {
      return !K_i.contains(m.p_i) || !K_j.contains(m.p_j);
    });
    return static_cast<int>(before - matches.size());
  }
};

// ------------------------------------------------------------- fundamental

struct RansacConfig {
  int iterations = 500;
  double tau = 2.0;  // symmetric epipolar distance threshold, pixels
  uint64_t seed = 1;
};

struct FundamentalEstimate {
  Matrix3d F = Matrix3d::Zero();
  std::vector<int> inliers;
  bool homography_degenerate = false;  // inliers explained by a single plane
};

inline double symmetric_epipolar_error(const Matrix3d& F, const PointMatch& m) {
  const double d1 = point_line_distance(m.p_j, F * hom(m.p_i));
  const double d2 = point_line_distance(m.p_i, F.transpose() * hom(m.p_j));
  return std::sqrt(0.5 * (d1 * d1 + d2 * d2));
}

namespace detail {

struct Normalization {
  Matrix3d T;
  std::vector<Vector2d> points;
};

inline Normalization hartley_normalize(const std::vector<Vector2d>& pts) {
  Vector2d centroid = Vector2d::Zero();
  for (const auto& p : pts) centroid += p;
  centroid /= static_cast<double>(pts.size());
  double mean_dist = 0;
  for (const auto& p : pts) mean_dist += (p - centroid).norm();
  mean_dist /= static_cast<double>(pts.size());
  const double s = mean_dist > 1e-12 ? std::sqrt(2.0) / mean_dist : 1.0;

  Normalization n;
  n.T << s, 0, -s * centroid.x(), 0, s, -s * centroid.y(), 0, 0, 1;
  n.points.reserve(pts.size());
  for (const auto& p : pts) n.points.push_back((p - centroid) * s);
  return n;
}

inline Matrix3d eight_point(const std::vector<PointMatch>& matches,
                            const std::vector<int>& idx) {
  std::vector<Vector2d> pi, pj;
  pi.reserve(idx.size());
  pj.reserve(idx.size());
  for (int k : idx) {
    pi.push_back(matches[k].p_i);
    pj.push_back(matches[k].p_j);
  }
  const Normalization ni = hartley_normalize(pi);
  const Normalization nj = hartley_normalize(pj);

  Eigen::MatrixXd A(idx.size(), 9);
  for (size_t r = 0; r < idx.size(); ++r) {
    const Vector2d& a = ni.points[r];
    const Vector2d& b = nj.points[r];
    A.row(r) << b.x() * a.x(), b.x() * a.y(), b.x(), b.y() * a.x(), b.y() * a.y(), b.y(),
        a.x(), a.y(), 1.0;
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(A, Eigen::ComputeFullV);
  const Eigen::VectorXd f = svd.matrixV().col(8);
  Matrix3d Fn;
  Fn << f(0), f(1), f(2), f(3), f(4), f(5), f(6), f(7), f(8);

  // rank-2 enforcement
  Eigen::JacobiSVD<Matrix3d> fs(Fn, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Vector3d sv = fs.singularValues();
  sv(2) = 0;
  Fn = fs.matrixU() * sv.asDiagonal() * fs.matrixV().transpose();

  return normalized_matrix(nj.T.transpose() * Fn * ni.T);
}

inline Matrix3d dlt_homography(const std::vector<PointMatch>& matches,
                               const std::vector<int>& idx) {
  std::vector<Vector2d> pi, pj;
  for (int k : idx) {
    pi.push_back(matches[k].p_i);
    pj.push_back(matches[k].p_j);
  }
  const Normalization ni = hartley_normalize(pi);
  const Normalization nj = hartley_normalize(pj);

  Eigen::MatrixXd A(2 * idx.size(), 9);
  for (size_t r = 0; r < idx.size(); ++r) {
    const Vector2d& a = ni.points[r];
    const Vector2d& b = nj.points[r];
    A.row(2 * r) << -a.x(), -a.y(), -1, 0, 0, 0, b.x() * a.x(), b.x() * a.y(), b.x();
    A.row(2 * r + 1) << 0, 0, 0, -a.x(), -a.y(), -1, b.y() * a.x(), b.y() * a.y(), b.y();
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(A, Eigen::ComputeFullV);
  const Eigen::VectorXd h = svd.matrixV().col(8);
  Matrix3d Hn;
  Hn << h(0), h(1), h(2), h(3), h(4), h(5), h(6), h(7), h(8);
  return normalized_matrix(nj.T.inverse() * Hn * ni.T);
}

inline double symmetric_transfer_error2(const Matrix3d& H, const Matrix3d& H_inv,
                                        const PointMatch& m) {
  const Vector3d fwd = H * hom(m.p_i);
  const Vector3d bwd = H_inv * hom(m.p_j);
  if (std::abs(fwd.z()) < 1e-12 || std::abs(bwd.z()) < 1e-12)
    return std::numeric_limits<double>::max();
  return (dehom(fwd) - m.p_j).squaredNorm() + (dehom(bwd) - m.p_i).squaredNorm();
}

inline bool collinear(const Vector2d& a, const Vector2d& b, const Vector2d& c,
                      double tol = 1e-8) {
  const Vector2d u = b - a, v = c - a;
  return std::abs(u.x() * v.y() - u.y() * v.x()) < tol * (1.0 + u.norm() * v.norm());
}

inline bool degenerate_quad(const std::vector<PointMatch>& matches, const std::vector<int>& idx) {
  for (int a = 0; a < 4; ++a)
    for (int b = a + 1; b < 4; ++b)
      for (int c = b + 1; c < 4; ++c)
        if (collinear(matches[idx[a]].p_i, matches[idx[b]].p_i, matches[idx[c]].p_i))
          return true;
  return false;
}

inline std::vector<int> sample_distinct(std::mt19937_64& rng, int k, int n) {
  std::vector<int> idx(k);
  std::uniform_int_distribution<int> pick(0, n - 1);
  for (int a = 0; a < k; ++a) {
    bool fresh = false;
    while (!fresh) {
      idx[a] = pick(rng);
      fresh = true;
      for (int b = 0; b < a; ++b) fresh &= idx[b] != idx[a];
    }
  }
  return idx;
}

}  // namespace detail

// Normalized 8-point fit inside RANSAC.  Flags (without failing) the case where
// the consensus set is explained by a single homography, i.e. a plane.
inline FundamentalEstimate estimate_fundamental(const PointMatchSet& set,
                                                const RansacConfig& cfg = {}) {
  const auto& matches = set.matches;
  const int n = static_cast<int>(matches.size());
  if (n < 8) throw error("estimate_fundamental: need at least 8 matches");

  std::mt19937_64 rng(mix_seed(cfg.seed, 0xf0f0ULL));
  std::vector<int> best_inliers;
  for (int it = 0; it < cfg.iterations; ++it) {
    const std::vector<int> idx = detail::sample_distinct(rng, 8, n);
    Matrix3d F;
    try {
      F = detail::eight_point(matches, idx);
    } catch (...) {
      continue;
    }
    std::vector<int> inliers;
    for (int k = 0; k < n; ++k)
      if (symmetric_epipolar_error(F, matches[k]) < cfg.tau) inliers.push_back(k);
    if (inliers.size() > best_inliers.size()) best_inliers = std::move(inliers);
  }
  if (best_inliers.size() < 8) throw error("estimate_fundamental: no consensus found");

  FundamentalEstimate out;
  // two refit rounds over the consensus set
  for (int round = 0; round < 2; ++round) {
    out.F = detail::eight_point(matches, best_inliers);
    best_inliers.clear();
    for (int k = 0; k < n; ++k)
      if (symmetric_epipolar_error(out.F, matches[k]) < cfg.tau) best_inliers.push_back(k);
  }
  out.inliers = best_inliers;

  // planar-degeneracy check: count inliers transferred by one homography
  if (out.inliers.size() >= 4) {
    std::vector<int> h_best;
    for (int it = 0; it < 100; ++it) {
      std::vector<int> idx = detail::sample_distinct(rng, 4, static_cast<int>(out.inliers.size()));
      for (int& v : idx) v = out.inliers[v];
      if (detail::degenerate_quad(matches, idx)) continue;
      Matrix3d H;
      try {
        H = detail::dlt_homography(matches, idx);
      } catch (...) {
        continue;
      }
      const Matrix3d H_inv = H.inverse();
      std::vector<int> agree;
      for (int k : out.inliers)
        if (detail::symmetric_transfer_error2(H, H_inv, matches[k]) < 2 * sqr(cfg.tau))
          agree.push_back(k);
      if (agree.size() > h_best.size()) h_best = std::move(agree);
    }
    out.homography_degenerate =
        h_best.size() >= static_cast<size_t>(0.9 * out.inliers.size());
  }
  return out;
}

// ------------------------------------------------------- height hypotheses

struct HeightHypothesis {
  int match_index = -1;
  double h_tilde = 0;   // meters
  bool valid = false;   // below both vanishing lines and intersections well-posed
};

// Estimated camera height for a match assuming its 3D point lies on the ground:
// p~ is transferred to the camera-height plane along the vertical vanishing
// direction and both pairs are triangulated.
inline HeightHypothesis height_hypothesis(const PointMatch& match, int match_index,
                                          const HomographyFamily& fam,
                                          const RelativePose& pose,
                                          const CameraIntrinsics& K_i,
                                          const CameraIntrinsics& K_j) {
  HeightHypothesis hyp;
  hyp.match_index = match_index;
  const VerticalFrame& fi = fam.frame_i;
  const VerticalFrame& fj = fam.frame_j;
  if (!fi.below_horizon(match.p_i) || !fj.below_horizon(match.p_j)) return hyp;

  const Vector3d r_i = hom(match.p_i).cross(fi.v);
  const Vector3d p_tilde_i = r_i.cross(fi.l);
  if (std::abs(p_tilde_i.z()) < 1e-9 * p_tilde_i.norm()) return hyp;

  const Vector3d ep_line = fam.F * p_tilde_i;
  const Vector3d r_j = hom(match.p_j).cross(fj.v);
  const Vector3d p_tilde_j = ep_line.cross(r_j);
  if (std::abs(p_tilde_j.z()) < 1e-9 * p_tilde_j.norm()) return hyp;

  try {
    const auto P = triangulate(match.p_i, match.p_j, pose, K_i, K_j);
    const auto P_tilde = triangulate(dehom(p_tilde_i), dehom(p_tilde_j), pose, K_i, K_j);
    if (P.behind_camera || P_tilde.behind_camera) return hyp;
    hyp.h_tilde = (P.point - P_tilde.point).norm();
    hyp.valid = true;
  } catch (const error&) {
    return hyp;
  }
  return hyp;
}

// ------------------------------------------------------------ EM clustering

struct EmConfig {
  int max_iterations = 200;
  double tolerance = 1e-9;       // relative log-likelihood change
  double variance_floor = 1e-10;
};

struct GroundCluster {
  std::vector<int> members;  // hypothesis indices with ground posterior > 0.5
  double mean = 0;           // camera height estimate, meters
  double variance = 0;
  bool converged = false;
  bool ok = false;  // converged with a believable ground component
  std::vector<double> loglik;           // per EM iteration
  std::vector<double> row_sum_error;    // per iteration: max |sum(resp) - 1|
};

// Two Gaussians (ground and body heights) plus a uniform outlier component on
// the 1-D h~ values.  The ground component is the one with the larger mean:
// ground points sit farthest below the camera.
inline GroundCluster cluster_ground(const std::vector<HeightHypothesis>& hypotheses,
                                    const EmConfig& cfg = {}) {
  std::vector<int> ids;
  std::vector<double> x;
  for (size_t k = 0; k < hypotheses.size(); ++k) {
    if (hypotheses[k].valid) {
      ids.push_back(static_cast<int>(k));
      x.push_back(hypotheses[k].h_tilde);
    }
  }
  const int n = static_cast<int>(x.size());
  if (n < 20) throw error("cluster_ground: need at least 20 valid hypotheses");

  const auto [mn_it, mx_it] = std::minmax_element(x.begin(), x.end());
  const double lo = *mn_it, hi = *mx_it;
  const double unif_density = hi > lo ? 1.0 / (hi - lo) : 1.0;

  std::vector<double> sorted = x;
  std::sort(sorted.begin(), sorted.end());
  double mean_all = std::accumulate(x.begin(), x.end(), 0.0) / n;
  double var_all = 0;
  for (double v : x) var_all += sqr(v - mean_all);
  var_all = std::max(var_all / n, cfg.variance_floor);

  double mu[2] = {sorted[static_cast<size_t>(0.8 * (n - 1))],
                  sorted[static_cast<size_t>(0.3 * (n - 1))]};
  double var[2] = {var_all / 4, var_all / 4};
  double pi[3] = {0.45, 0.45, 0.10};

  GroundCluster out;
  std::vector<std::array<double, 3>> resp(n);
  double prev_ll = -std::numeric_limits<double>::infinity();

  auto gauss = [](double v, double mu, double var) {
    return std::exp(-0.5 * sqr(v - mu) / var) / std::sqrt(2.0 * M_PI * var);
  };

  for (int it = 0; it < cfg.max_iterations; ++it) {
    // E-step
    double ll = 0;
    double max_row_err = 0;
    for (int k = 0; k < n; ++k) {
      double w0 = pi[0] * gauss(x[k], mu[0], var[0]);
      double w1 = pi[1] * gauss(x[k], mu[1], var[1]);
      double w2 = pi[2] * unif_density;
      const double s = w0 + w1 + w2;
      if (s <= 0 || !std::isfinite(s)) {
        w0 = w1 = w2 = 1.0 / 3.0;
        resp[k] = {w0, w1, w2};
        continue;
      }
      resp[k] = {w0 / s, w1 / s, w2 / s};
      ll += std::log(s);
      max_row_err = std::max(max_row_err,
                             std::abs(resp[k][0] + resp[k][1] + resp[k][2] - 1.0));
    }
    out.loglik.push_back(ll);
    out.row_sum_error.push_back(max_row_err);

    // M-step
    for (int c = 0; c < 2; ++c) {
      double sum_r = 0, sum_rx = 0;
      for (int k = 0; k < n; ++k) {
        sum_r += resp[k][c];
        sum_rx += resp[k][c] * x[k];
      }
      if (sum_r > 1e-12) {
        mu[c] = sum_rx / sum_r;
        double sum_rv = 0;
        for (int k = 0; k < n; ++k) sum_rv += resp[k][c] * sqr(x[k] - mu[c]);
        var[c] = std::max(sum_rv / sum_r, cfg.variance_floor);
      }
      pi[c] = sum_r / n;
    }
    double sum_u = 0;
    for (int k = 0; k < n; ++k) sum_u += resp[k][2];
    pi[2] = sum_u / n;

    if (it > 0 && std::abs(ll - prev_ll) <= cfg.tolerance * (1.0 + std::abs(ll))) {
      out.converged = true;
      prev_ll = ll;
      break;
    }
    prev_ll = ll;
  }

  const int g = mu[0] >= mu[1] ? 0 : 1;
  // when both Gaussians collapsed onto one cluster, treat them as one
  const bool merged =
      std::abs(mu[0] - mu[1]) <= 2.0 * (std::sqrt(var[0]) + std::sqrt(var[1]));
  if (merged) {
    const double w = pi[0] + pi[1];
    out.mean = w > 1e-12 ? (pi[0] * mu[0] + pi[1] * mu[1]) / w : mu[g];
    out.variance = std::max(var[0], var[1]);
    for (int k = 0; k < n; ++k)
      if (resp[k][0] + resp[k][1] > 0.5) out.members.push_back(ids[k]);
    out.ok = out.converged && out.members.size() >= 10 && w >= 0.1;
  } else {
    out.mean = mu[g];
    out.variance = var[g];
    for (int k = 0; k < n; ++k)
      if (resp[k][g] > 0.5) out.members.push_back(ids[k]);
    out.ok = out.converged && out.members.size() >= 10 && pi[g] >= 0.1;
  }
  // a camera-height cluster must be concentrated relative to its mean
  out.ok = out.ok && std::sqrt(out.variance) <= 0.25 * std::abs(out.mean);
  return out;
}

// --------------------------------------------------------- ground homography

struct HomographyFitConfig {
  int lmeds_iterations = 300;
  uint64_t seed = 2;
};

struct GroundModel {
  Matrix3d H0 = Matrix3d::Identity();
  std::vector<int> inliers;        // indices into the fitted match list
  double median_transfer_error = 0;  // pixels, over all matches
  double cluster_mean = 0;           // camera height from the EM step, meters
  double cluster_sigma = 0;
};

// Normalized DLT under LMedS re-weighting.  With exactly four matches the fit
// is the exact interpolating homography.
inline GroundModel fit_ground_homography(const std::vector<PointMatch>& ground_matches,
                                         const HomographyFitConfig& cfg = {}) {
  const int n = static_cast<int>(ground_matches.size());
  if (n < 4) throw error("fit_ground_homography: need at least 4 matches");

  GroundModel model;
  std::vector<int> all(n);
  std::iota(all.begin(), all.end(), 0);

  auto median_err2 = [&](const Matrix3d& H) {
    const Matrix3d H_inv = H.inverse();
    std::vector<double> e2(n);
    for (int k = 0; k < n; ++k)
      e2[k] = detail::symmetric_transfer_error2(H, H_inv, ground_matches[k]);
    const size_t mid = e2.size() / 2;
    std::nth_element(e2.begin(), e2.begin() + mid, e2.end());
    return e2[mid];
  };

  if (n == 4) {
    if (detail::degenerate_quad(ground_matches, all))
      throw error("fit_ground_homography: collinear configuration");
    model.H0 = detail::dlt_homography(ground_matches, all);
    model.inliers = all;
    model.median_transfer_error = std::sqrt(median_err2(model.H0));
    return model;
  }

  std::mt19937_64 rng(mix_seed(cfg.seed, 0x40ULL));
  Matrix3d best_H = Matrix3d::Zero();
  double best_med = std::numeric_limits<double>::infinity();
  int usable_samples = 0;
  for (int it = 0; it < cfg.lmeds_iterations; ++it) {
    const std::vector<int> idx = detail::sample_distinct(rng, 4, n);
    if (detail::degenerate_quad(ground_matches, idx)) continue;
    Matrix3d H;
    try {
      H = detail::dlt_homography(ground_matches, idx);
    } catch (...) {
      continue;
    }
    ++usable_samples;
    const double med = median_err2(H);
    if (med < best_med) {
      best_med = med;
      best_H = H;
    }
  }
  if (usable_samples == 0) throw error("fit_ground_homography: collinear configuration");

  // robust standard deviation from the best median, then a final DLT refit
  const double sigma = 1.4826 * (1.0 + 5.0 / (n - 4)) * std::sqrt(best_med);
  const double gate2 = sqr(std::max(2.5 * sigma, 1e-12));
  const Matrix3d best_inv = best_H.inverse();
  for (int k = 0; k < n; ++k)
    if (detail::symmetric_transfer_error2(best_H, best_inv, ground_matches[k]) <= gate2)
      model.inliers.push_back(k);
  if (model.inliers.size() < 4) model.inliers = all;
  model.H0 = detail::dlt_homography(ground_matches, model.inliers);
  model.median_transfer_error = std::sqrt(median_err2(model.H0));
  return model;
}

// ------------------------------------------------- ground projection (feet)

struct LmConfig {
  int max_iterations = 100;
  double param_tolerance = 1e-10;
  double damping_init = 1e-3;
};

struct GroundProjection {
  Vector2d p_i0, p_j0;
  double cost = 0;           // symmetric transfer cost at the solution
  double initial_cost = 0;
  bool converged = false;
  double line_residual_i = 0;  // point-on-r_i residual at the solution, px
  double line_residual_j = 0;  // point-on-r_j residual at the solution, px
};

// Finds the ground projection (p_i0, p_j0) of a non-ground match: p_i0 slides
// on the vertical line r_i while p_j0 is pinned to the epipolar transfer of
// p_i0 intersected with r_j; the symmetric H0 transfer cost is minimized with
// a one-variable Levenberg-Marquardt starting from the match itself.
inline GroundProjection ground_projection_match(const PointMatch& match,
                                                const HomographyFamily& fam,
                                                const LmConfig& cfg = {}) {
  const Vector3d r_i = hom(match.p_i).cross(fam.frame_i.v);
  const Vector3d r_j = hom(match.p_j).cross(fam.frame_j.v);
  const Matrix3d H0_inv = fam.H0.inverse();

  // parametrize r_i by the coordinate with the better-conditioned solve
  const bool by_y = std::abs(r_i.x()) >= std::abs(r_i.y());
  auto point_on_line = [&](double s) -> Vector2d {
    if (by_y) return {-(r_i.y() * s + r_i.z()) / r_i.x(), s};
    return {s, -(r_i.x() * s + r_i.z()) / r_i.y()};
  };

  auto transfer = [&](double s, Vector2d& pi0, Vector2d& pj0) -> bool {
    pi0 = point_on_line(s);
    const Vector3d q = (fam.F * hom(pi0)).cross(r_j);
    if (std::abs(q.z()) < 1e-14 * q.norm()) return false;
    pj0 = dehom(q);
    return true;
  };

  auto cost_at = [&](double s) -> double {
    Vector2d pi0, pj0;
    if (!transfer(s, pi0, pj0)) return std::numeric_limits<double>::max();
    PointMatch m{pi0, pj0};
    return detail::symmetric_transfer_error2(fam.H0, H0_inv, m);
  };

  double s = by_y ? match.p_i.y() : match.p_i.x();
  double cost = cost_at(s);

  GroundProjection out;
  out.initial_cost = cost;

  double lambda = cfg.damping_init;
  for (int it = 0; it < cfg.max_iterations; ++it) {
    const double h = 1e-5 * (1.0 + std::abs(s));
    const double c_plus = cost_at(s + h), c_minus = cost_at(s - h);
    const double grad = (c_plus - c_minus) / (2 * h);
    const double hess = std::max((c_plus - 2 * cost + c_minus) / (h * h), 0.0);

    bool accepted = false;
    for (int attempt = 0; attempt < 12; ++attempt) {
      const double step = -grad / (hess + lambda * (1.0 + hess));
      const double c_new = cost_at(s + step);
      if (c_new < cost) {
        s += step;
        cost = c_new;
        lambda = std::max(lambda / 10.0, 1e-12);
        accepted = true;
        if (std::abs(step) < cfg.param_tolerance * (1.0 + std::abs(s))) {
          out.converged = true;
          it = cfg.max_iterations;
        }
        break;
      }
      lambda *= 10.0;
    }
    if (!accepted) {
      out.converged = std::abs(grad) < 1e-9 * (1.0 + cost);
      break;
    }
  }

  Vector2d pi0, pj0;
  transfer(s, pi0, pj0);
  out.p_i0 = pi0;
  out.p_j0 = pj0;
  out.cost = cost;
  out.line_residual_i = point_line_distance(pi0, r_i);
  out.line_residual_j = point_line_distance(pj0, r_j);
  return out;
}

// ----------------------------------------------------------- alpha voting

// Metric scale coefficient from an image point, its ground projection and
// their real-world distance Z (Criminisi-style single view metrology, with
// the canonical l orientation making valid-scene alphas positive).
inline double alpha_from_pair(const Vector2d& p, const Vector2d& p0, double Z,
                              const VerticalFrame& frame) {
  if (Z <= 0) throw error("alpha_from_pair: Z must be positive");
  const Vector3d ph = hom(p), p0h = hom(p0);
  const double top = p0h.cross(ph).norm();
  const double vxp = frame.v.cross(ph).norm();
  if ((p - p0).norm() < 1e-9) throw error("alpha_from_pair: p equals its ground projection");
  if (vxp < 1e-12) throw error("alpha_from_pair: p coincides with the vanishing point");
  const double lp0 = frame.l.dot(p0h);
  if (std::abs(lp0) < 1e-15) throw error("alpha_from_pair: ground point on the vanishing line");
  return -top / (Z * lp0 * vxp);
}

struct AlphaVote {
  double alpha_i = 0, alpha_j = 0;
  int source = -1;  // match index the vote came from
};

// Voting match with its triangulated metric height (meters).  The heights come
// from the laser-scaled pose, so they are independent of any alpha candidate;
// evaluating the transfer at the match's own height keeps the LMedS objective
// sensitive to the scale of alpha (a best-over-h residual is not: rescaling
// both alphas only re-parameterizes the sweep along the epipolar line).
struct MeasuredMatch {
  Vector2d p_i, p_j;
  double height = 0;
};

struct AlphaLmedsConfig {
  int refine_rounds = 2;
  int refine_steps = 9;       // per dimension, odd
  double refine_span = 0.04;  // +/- relative span around the winner
};

struct AlphaSelection {
  double alpha_i = 0, alpha_j = 0;
  double median_error = 0;            // pixels
  int vote_index = -1;
  std::vector<double> vote_medians;   // per input vote
};

namespace detail {

inline double alpha_model_median(double alpha_i, double alpha_j,
                                 const HomographyFamily& base,
                                 const std::vector<MeasuredMatch>& evaluation) {
  HomographyFamily fam = base;
  fam.frame_i.alpha = alpha_i;
  fam.frame_j.alpha = alpha_j;
  std::vector<double> errs;
  errs.reserve(evaluation.size());
  for (const auto& m : evaluation) {
    double e = std::numeric_limits<double>::max();
    try {
      const Vector3d q = fam.at(m.height) * hom(m.p_i);
      if (std::abs(q.z()) > 1e-14) e = (dehom(q) - m.p_j).norm();
    } catch (const error&) {
      // singular homology for this candidate: leave the max error
    }
    errs.push_back(e);
  }
  const size_t mid = errs.size() / 2;
  std::nth_element(errs.begin(), errs.begin() + mid, errs.end());
  return errs[mid];
}

}  // namespace detail

struct AlphaVoteSet {
  std::vector<AlphaVote> votes;
  std::vector<MeasuredMatch> evaluation;  // the voting matches with heights
};

// One (alpha_i, alpha_j) vote per non-ground match: the match is projected to
// the ground with the constrained optimizer, the metric height Z comes from
// triangulating both pairs, and each view contributes its alpha.
inline AlphaVoteSet build_alpha_votes(const std::vector<PointMatch>& matches,
                                      const std::vector<HeightHypothesis>& hypotheses,
                                      const GroundCluster& cluster,
                                      const HomographyFamily& fam,
                                      const RelativePose& pose,
                                      const CameraIntrinsics& K_i,
                                      const CameraIntrinsics& K_j,
                                      const LmConfig& lm = {}) {
  const double sigma = std::sqrt(std::max(cluster.variance, 1e-12));
  AlphaVoteSet out;
  for (const auto& hyp : hypotheses) {
    if (!hyp.valid) continue;
    // voting matches must sit clearly above the ground cluster
    if (cluster.mean - hyp.h_tilde < 3.0 * sigma) continue;
    const PointMatch& m = matches[hyp.match_index];
    const GroundProjection gp = ground_projection_match(m, fam, lm);
    if (!gp.converged) continue;
    try {
      const auto P = triangulate(m.p_i, m.p_j, pose, K_i, K_j);
      const auto P0 = triangulate(gp.p_i0, gp.p_j0, pose, K_i, K_j);
      if (P.behind_camera || P0.behind_camera) continue;
      const double Z = (P.point - P0.point).norm();
      if (Z < 0.05) continue;
      AlphaVote vote;
      vote.alpha_i = alpha_from_pair(m.p_i, gp.p_i0, Z, fam.frame_i);
      vote.alpha_j = alpha_from_pair(m.p_j, gp.p_j0, Z, fam.frame_j);
      vote.source = hyp.match_index;
      if (std::isfinite(vote.alpha_i) && std::isfinite(vote.alpha_j) &&
          vote.alpha_i != 0 && vote.alpha_j != 0) {
        out.votes.push_back(vote);
        out.evaluation.push_back({m.p_i, m.p_j, Z});
      }
    } catch (const error&) {
      continue;
    }
  }
  return out;
}

// LMedS vote selection: each candidate (alpha_i, alpha_j) is scored by the
// median transfer residual over the measured matches at their own heights, and
// the winner is polished by a local multiplicative grid search.
inline AlphaSelection select_alpha_lmeds(const std::vector<AlphaVote>& votes,
                                         const std::vector<MeasuredMatch>& evaluation,
                                         const HomographyFamily& base,
                                         const AlphaLmedsConfig& cfg = {}) {
  if (votes.empty()) throw error("select_alpha_lmeds: empty vote list");
  if (evaluation.empty()) throw error("select_alpha_lmeds: no evaluation matches");

  AlphaSelection sel;
  sel.vote_medians.resize(votes.size());
  double best_key[3] = {std::numeric_limits<double>::infinity(), 0, 0};
  for (size_t v = 0; v < votes.size(); ++v) {
    const double med =
        detail::alpha_model_median(votes[v].alpha_i, votes[v].alpha_j, base, evaluation);
    sel.vote_medians[v] = med;
    // lexicographic tie-break keeps the result permutation invariant
    const double key[3] = {med, votes[v].alpha_i, votes[v].alpha_j};
    if (std::lexicographical_compare(key, key + 3, best_key, best_key + 3)) {
      best_key[0] = key[0];
      best_key[1] = key[1];
      best_key[2] = key[2];
      sel.alpha_i = votes[v].alpha_i;
      sel.alpha_j = votes[v].alpha_j;
      sel.median_error = med;
      sel.vote_index = static_cast<int>(v);
    }
  }

  double span = cfg.refine_span;
  for (int round = 0; round < cfg.refine_rounds; ++round) {
    const double ai0 = sel.alpha_i, aj0 = sel.alpha_j;
    for (int a = 0; a < cfg.refine_steps; ++a) {
      for (int b = 0; b < cfg.refine_steps; ++b) {
        const double fi = 1.0 + span * (2.0 * a / (cfg.refine_steps - 1) - 1.0);
        const double fj = 1.0 + span * (2.0 * b / (cfg.refine_steps - 1) - 1.0);
        const double med = detail::alpha_model_median(ai0 * fi, aj0 * fj, base, evaluation);
        if (med < sel.median_error) {
          sel.median_error = med;
          sel.alpha_i = ai0 * fi;
          sel.alpha_j = aj0 * fj;
        }
      }
    }
    span /= 3.0;
  }
  return sel;
}

}  // namespace headmap
