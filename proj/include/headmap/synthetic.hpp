// Ground-truth world generator: pedestrians on a plane, analytic camera
// geometry (v, l, alpha, H0, F all exact), a small ray-cast renderer with
// per-pixel height truth, and match sampling with controllable noise.
#pragma once

#include <Eigen/Dense>
#include <random>
#include <vector>

#include "headmap/core.hpp"
#include "headmap/geometry.hpp"

namespace headmap {

// Orthonormal ground chart attached to the reference camera: `down` is the
// gravity direction in camera coordinates (from the vanishing geometry), e1/e2
// span the ground plane.  Assumes the nadir is in front of the camera.
struct GroundBasis {
  Vector3d down, e1, e2;
};

inline GroundBasis ground_basis(const VerticalFrame& frame, const CameraIntrinsics& K) {
  Vector3d w = K.inverse() * frame.v;
  if (std::abs(w.z()) < 1e-12) throw error("ground_basis: camera is not tilted toward the ground");
  w.normalize();
  if (w.z() < 0) w = -w;  // nadir assumed in front of the camera
  GroundBasis basis;
  basis.down = w;
  Vector3d forward(0, 0, 1);
  Vector3d e1 = forward - forward.dot(w) * w;
  if (e1.norm() < 1e-9) {
    Vector3d right(1, 0, 0);
    e1 = right - right.dot(w) * w;
  }
  basis.e1 = e1.normalized();
  basis.e2 = basis.down.cross(basis.e1);
  return basis;
}

inline Vector2d ground_coords(const GroundBasis& basis, const Vector3d& point_cam) {
  return {basis.e1.dot(point_cam), basis.e2.dot(point_cam)};
}

struct Pedestrian {
  double x = 0, y = 0;        // ground position, meters
  double height = 170;        // cm
  double radius = 22;         // torso cylinder radius, cm
  uint64_t seed = 0;          // procedural texture seed
  double vx = 0, vy = 0;      // walking velocity, m/s
};

struct SyntheticCamera {
  Vector3d position = Vector3d::Zero();  // world, meters; world up is +z
  Matrix3d R = Matrix3d::Identity();     // world -> camera
  CameraIntrinsics intr;
};

inline SyntheticCamera make_camera(const Vector3d& position, const Vector3d& target,
                                   double focal, int width, int height) {
  SyntheticCamera cam;
  cam.position = position;
  const Vector3d up(0, 0, 1);
  const Vector3d z = (target - position).normalized();
  Vector3d x = z.cross(up);
  if (x.norm() < 1e-9) throw error("make_camera: view direction is vertical");
  x.normalize();
  const Vector3d y = z.cross(x);
  cam.R.row(0) = x;
  cam.R.row(1) = y;
  cam.R.row(2) = z;
  cam.intr = {focal, focal, (width - 1) * 0.5, (height - 1) * 0.5, width, height};
  return cam;
}

struct SceneSpec {
  std::vector<Pedestrian> pedestrians;
  std::vector<SyntheticCamera> cameras;
  uint64_t ground_seed = 1;
  double frame_dt = 0.5;                       // seconds between frames
  double ground_x0 = -6, ground_x1 = 6;        // ground match sampling region, m
  double ground_y0 = -6, ground_y1 = 6;
};

// ---------------------------------------------------------------- projection

inline Vector3d world_to_camera(const SyntheticCamera& cam, const Vector3d& pw) {
  return cam.R * (pw - cam.position);
}

inline Vector2d project_world(const SyntheticCamera& cam, const Vector3d& pw) {
  return dehom(cam.intr.matrix() * world_to_camera(cam, pw));
}

inline bool visible_in(const SyntheticCamera& cam, const Vector3d& pw) {
  const Vector3d pc = world_to_camera(cam, pw);
  if (pc.z() <= 0.1) return false;
  return cam.intr.contains(dehom(cam.intr.matrix() * pc));
}

// Exact relative pose C_i -> C_j from the two camera placements.
inline RelativePose true_relative_pose(const SyntheticCamera& ci, const SyntheticCamera& cj) {
  RelativePose pose;
  pose.R = cj.R * ci.R.transpose();
  pose.t = cj.R * (ci.position - cj.position);
  return pose;
}

inline Matrix3d skew(const Vector3d& t) {
  Matrix3d s;
  s << 0, -t.z(), t.y(), t.z(), 0, -t.x(), -t.y(), t.x(), 0;
  return s;
}

inline Matrix3d true_fundamental(const SyntheticCamera& ci, const SyntheticCamera& cj) {
  const RelativePose pose = true_relative_pose(ci, cj);
  const Matrix3d E = skew(pose.t) * pose.R;
  return normalized_matrix(cj.intr.inverse().transpose() * E * ci.intr.inverse());
}

// Ground-plane (z = 0) homography C_i -> C_j.
inline Matrix3d true_ground_homography(const SyntheticCamera& ci, const SyntheticCamera& cj) {
  auto plane_map = [](const SyntheticCamera& c) {
    Matrix3d g;
    const Vector3d t = -c.R * c.position;
    g.col(0) = c.R.col(0);
    g.col(1) = c.R.col(1);
    g.col(2) = t;
    return Matrix3d(c.intr.matrix() * g);
  };
  return normalized_matrix(plane_map(cj) * plane_map(ci).inverse());
}

// Exact vertical frame (v, l, alpha) of one camera.
inline VerticalFrame true_vertical_frame(const SyntheticCamera& cam) {
  const Matrix3d K = cam.intr.matrix();
  const Vector3d v_raw = K * cam.R.col(2);  // image of the world-up direction
  Vector3d v = v_raw;
  if (std::abs(v.z()) > 1e-9 * v.norm()) {
    v /= v.z();  // finite nadir, w = +1
  } else {
    v.normalize();
    if (v.y() < 0) v = -v;
  }
  const Vector3d u1 = K * cam.R.col(0);
  const Vector3d u2 = K * cam.R.col(1);
  VerticalFrame frame = VerticalFrame::canonical(v, u1.cross(u2), 0.0);

  // alpha ties the stored (v, l) representatives to metric height: with
  // c v = K R e_z, the homology I + alpha h v l^T maps ground images to
  // height-h images exactly when alpha = c / (l . K t).
  int idx = 0;
  frame.v.cwiseAbs().maxCoeff(&idx);
  const double c = v_raw(idx) / frame.v(idx);
  const Vector3d t = -cam.R * cam.position;
  frame.alpha = c / frame.l.dot(K * t);
  return frame;
}

inline HomographyFamily true_family(const SyntheticCamera& ci, const SyntheticCamera& cj) {
  HomographyFamily fam;
  fam.H0 = true_ground_homography(ci, cj);
  fam.frame_i = true_vertical_frame(ci);
  fam.frame_j = true_vertical_frame(cj);
  fam.F = true_fundamental(ci, cj);
  return fam;
}

// ---------------------------------------------------------------- rendering

namespace detail {

inline double hash01(uint64_t seed, int64_t ix, int64_t iy) {
  const uint64_t h = mix_seed(mix_seed(seed, static_cast<uint64_t>(ix) * 0x632be59bd9b4e019ULL),
                              static_cast<uint64_t>(iy));
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

inline double value_noise(uint64_t seed, double u, double v) {
  const double fu = std::floor(u), fv = std::floor(v);
  const auto ix = static_cast<int64_t>(fu), iy = static_cast<int64_t>(fv);
  double tu = u - fu, tv = v - fv;
  tu = tu * tu * (3 - 2 * tu);
  tv = tv * tv * (3 - 2 * tv);
  const double a = hash01(seed, ix, iy), b = hash01(seed, ix + 1, iy);
  const double c = hash01(seed, ix, iy + 1), d = hash01(seed, ix + 1, iy + 1);
  return (1 - tv) * ((1 - tu) * a + tu * b) + tv * ((1 - tu) * c + tu * d);
}

// Multi-octave value noise on surface coordinates (meters), mapped to gray.
inline float texture_gray(uint64_t seed, double u, double v, double coarsest_cell) {
  const double base = 1.0 / coarsest_cell;
  double acc = 0, amp = 1, norm = 0;
  for (int o = 0; o < 4; ++o) {
    acc += amp * value_noise(seed + o * 0x9e37ULL, u * base * (1 << o), v * base * (1 << o));
    norm += amp;
    amp *= 0.75;
  }
  return static_cast<float>(30.0 + 195.0 * (acc / norm));
}

// Clothing-scale cells correlate well across the wide-baseline views at the
// true height; the much finer ground texture (gravel scale, around the pixel
// footprint of the default rigs) decorrelates between views, which is what
// makes distant pavement hostile to stereo matching in real footage too.
constexpr double kBodyTextureCell = 0.18;
constexpr double kGroundTextureCell = 0.12;

}  // namespace detail

struct RenderedView {
  Image<float> image;            // grayscale, [0, 255]
  Image<float> height;           // ground-truth height, cm; 0 = ground/background
  Image<uint8_t> hit;            // 1 where a surface was hit
  Image<int16_t> ped_id;         // pedestrian index, -1 ground, -2 background
  std::vector<Vector3d> points;  // per-pixel 3D world point (valid where hit)

  const Vector3d& point_at(int x, int y) const {
    return points[static_cast<size_t>(y) * image.width() + x];
  }
};

inline Vector2d pedestrian_position(const Pedestrian& p, double time) {
  return {p.x + p.vx * time, p.y + p.vy * time};
}

// Ray-casts pedestrians (textured torso cylinder topped by a head sphere of
// half the torso radius) and the textured ground plane.  Deterministic given
// the scene seeds; pixel (x, y) is centered on the ray through image point
// (x, y).  The gray image is 3x3 supersampled; the truth buffers (height, 3D
// point, pedestrian id) always come from the central ray.
inline RenderedView render(const SceneSpec& scene, int camera_index, int frame = 0,
                           int threads = 1) {
  if (camera_index < 0 || camera_index >= static_cast<int>(scene.cameras.size()))
    throw error("render: camera index out of range");
  const SyntheticCamera& cam = scene.cameras[camera_index];
  const int w = cam.intr.width, h = cam.intr.height;
  const double time = scene.frame_dt * frame;

  RenderedView view;
  view.image = Image<float>(w, h, 64.0f);  // flat sky
  view.height = Image<float>(w, h, 0.0f);
  view.hit = Image<uint8_t>(w, h, 0);
  view.ped_id = Image<int16_t>(w, h, -2);
  view.points.assign(static_cast<size_t>(w) * h, Vector3d::Zero());

  struct Body {
    Vector2d base;
    double torso_top, torso_r, head_r;
    Vector3d head_center;
    uint64_t seed;
  };
  std::vector<Body> bodies;
  bodies.reserve(scene.pedestrians.size());
  for (const auto& p : scene.pedestrians) {
    Body b;
    b.base = pedestrian_position(p, time);
    b.head_r = 0.5 * p.radius / 100.0;
    b.torso_r = p.radius / 100.0;
    b.torso_top = p.height / 100.0 - 2.0 * b.head_r;
    b.head_center = Vector3d(b.base.x(), b.base.y(), p.height / 100.0 - b.head_r);
    b.seed = p.seed;
    bodies.push_back(b);
  }

  const Matrix3d k_inv = cam.intr.inverse();
  const Matrix3d r_t = cam.R.transpose();
  const Vector3d& o = cam.position;

  struct Hit {
    double t = std::numeric_limits<double>::infinity();
    int ped = -2;
    int part = 0;  // 0 ground, 1 torso, 2 head
  };

  auto trace = [&](const Vector3d& dir) {
    Hit hit;
    if (dir.z() < -1e-12) {
      const double t = -o.z() / dir.z();
      if (t > 1e-6) {
        hit.t = t;
        hit.ped = -1;
      }
    }
    for (size_t b = 0; b < bodies.size(); ++b) {
      const Body& body = bodies[b];
      {
        const double ox = o.x() - body.base.x(), oy = o.y() - body.base.y();
        const double a = dir.x() * dir.x() + dir.y() * dir.y();
        if (a > 1e-12) {
          const double bq = ox * dir.x() + oy * dir.y();
          const double cq = ox * ox + oy * oy - body.torso_r * body.torso_r;
          const double disc = bq * bq - a * cq;
          if (disc >= 0) {
            const double sq = std::sqrt(disc);
            for (const double t : {(-bq - sq) / a, (-bq + sq) / a}) {
              if (t > 1e-6 && t < hit.t) {
                const double z = o.z() + t * dir.z();
                if (z >= 0 && z <= body.torso_top) {
                  hit.t = t;
                  hit.ped = static_cast<int>(b);
                  hit.part = 1;
                }
              }
            }
          }
        }
      }
      {
        const Vector3d oc = o - body.head_center;
        const double bq = oc.dot(dir);
        const double cq = oc.squaredNorm() - body.head_r * body.head_r;
        const double disc = bq * bq - cq;
        if (disc >= 0) {
          const double sq = std::sqrt(disc);
          for (const double t : {-bq - sq, -bq + sq}) {
            if (t > 1e-6 && t < hit.t) {
              hit.t = t;
              hit.ped = static_cast<int>(b);
              hit.part = 2;
            }
          }
        }
      }
    }
    return hit;
  };

  auto shade = [&](const Hit& hit, const Vector3d& dir) -> float {
    if (hit.ped == -2) return 64.0f;  // flat sky
    const Vector3d hit_point = o + hit.t * dir;
    if (hit.ped == -1)
      return detail::texture_gray(scene.ground_seed, hit_point.x(), hit_point.y(),
                                  detail::kGroundTextureCell);
    const Body& body = bodies[hit.ped];
    if (hit.part == 1) {
      const double theta =
          std::atan2(hit_point.y() - body.base.y(), hit_point.x() - body.base.x());
      return detail::texture_gray(body.seed, theta * body.torso_r, hit_point.z(),
                                  detail::kBodyTextureCell);
    }
    const Vector3d n = (hit_point - body.head_center) / body.head_r;
    const double theta = std::atan2(n.y(), n.x());
    const double phi = std::acos(std::clamp(n.z(), -1.0, 1.0));
    return detail::texture_gray(body.seed ^ 0x6eadULL, theta * body.head_r, phi * body.head_r,
                                detail::kBodyTextureCell);
  };

  parallel_rows(h, threads, [&](int y0, int y1) {
    for (int y = y0; y < y1; ++y) {
      for (int x = 0; x < w; ++x) {
        const Vector3d center_dir = (r_t * (k_inv * Vector3d(x, y, 1))).normalized();
        const Hit center = trace(center_dir);

        float gray = 0;
        for (int sy = -1; sy <= 1; ++sy) {
          for (int sx = -1; sx <= 1; ++sx) {
            if (sx == 0 && sy == 0) {
              gray += shade(center, center_dir);
              continue;
            }
            const Vector3d dir =
                (r_t * (k_inv * Vector3d(x + sx / 3.0, y + sy / 3.0, 1))).normalized();
            gray += shade(trace(dir), dir);
          }
        }
        view.image(x, y) = gray / 9.0f;

        if (center.ped == -2) continue;
        Vector3d hit_point = o + center.t * center_dir;
        if (center.ped == -1) hit_point.z() = 0.0;  // exact plane
        const size_t idx = static_cast<size_t>(y) * w + x;
        view.points[idx] = hit_point;
        view.hit(x, y) = 1;
        view.ped_id(x, y) = static_cast<int16_t>(center.ped);
        view.height(x, y) = static_cast<float>(std::max(0.0, hit_point.z()) * 100.0);
      }
    }
  });
  return view;
}

// ---------------------------------------------------------------- matches

struct MatchSampleOptions {
  int n_ground = 120;
  int n_body = 120;
  double noise_px = 0.0;       // Gaussian pixel noise in both views
  double outlier_fraction = 0; // fraction of matches replaced by random pixels
  int triple_camera = -1;      // when >= 0, matches visible there get p_k
  uint64_t seed = 7;
};

struct SampledMatch {
  Vector2d p_i, p_j;
  int triple_id = -1;          // index into `triples`, -1 if pair-only
  bool is_ground = false;
  bool is_outlier = false;
  double true_height = 0;     // meters above ground
  Vector3d world;             // true 3D point
};

struct SampledMatches {
  std::vector<SampledMatch> matches;
  std::vector<TripleMatch> triples;
};

// Samples point matches from ground and pedestrian surfaces; the image pairs
// are exact projections of shared 3D points before noise/outliers are applied.
inline SampledMatches sample_matches(const SceneSpec& scene, int cam_i, int cam_j,
                                     const MatchSampleOptions& opts) {
  const SyntheticCamera& ci = scene.cameras[cam_i];
  const SyntheticCamera& cj = scene.cameras[cam_j];
  std::mt19937_64 rng(mix_seed(opts.seed, 0x5eedULL));
  std::uniform_real_distribution<double> ux(scene.ground_x0, scene.ground_x1);
  std::uniform_real_distribution<double> uy(scene.ground_y0, scene.ground_y1);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);

  SampledMatches out;
  auto try_add = [&](const Vector3d& pw, bool is_ground, double height_m) {
    if (!visible_in(ci, pw) || !visible_in(cj, pw)) return;
    SampledMatch m;
    m.world = pw;
    m.is_ground = is_ground;
    m.true_height = height_m;
    m.p_i = project_world(ci, pw);
    m.p_j = project_world(cj, pw);
    if (opts.triple_camera >= 0 && visible_in(scene.cameras[opts.triple_camera], pw)) {
      TripleMatch t;
      t.p_i = m.p_i;
      t.p_j = m.p_j;
      t.p_k = project_world(scene.cameras[opts.triple_camera], pw);
      m.triple_id = static_cast<int>(out.triples.size());
      out.triples.push_back(t);
    }
    out.matches.push_back(m);
  };

  int guard = 0;
  while (static_cast<int>(std::count_if(out.matches.begin(), out.matches.end(),
                                        [](const SampledMatch& m) { return m.is_ground; })) <
             opts.n_ground &&
         guard++ < opts.n_ground * 50) {
    try_add(Vector3d(ux(rng), uy(rng), 0.0), true, 0.0);
  }
  guard = 0;
  if (!scene.pedestrians.empty()) {
    std::uniform_int_distribution<size_t> pick(0, scene.pedestrians.size() - 1);
    while (static_cast<int>(out.matches.size()) <
               opts.n_ground + opts.n_body &&
           guard++ < opts.n_body * 50) {
      const Pedestrian& p = scene.pedestrians[pick(rng)];
      const Vector2d base = pedestrian_position(p, 0.0);
      const double h_frac = 0.15 + 0.8 * u01(rng);
      const double z = h_frac * p.height / 100.0;
      const double theta = 2.0 * M_PI * u01(rng);
      const double r = p.radius / 100.0;
      try_add(Vector3d(base.x() + r * std::cos(theta), base.y() + r * std::sin(theta), z),
              false, z);
    }
  }

  // pixel noise, then outlier replacement
  for (auto& m : out.matches) {
    if (opts.noise_px > 0) {
      m.p_i += opts.noise_px * Vector2d(gauss(rng), gauss(rng));
      m.p_j += opts.noise_px * Vector2d(gauss(rng), gauss(rng));
    }
    if (opts.outlier_fraction > 0 && u01(rng) < opts.outlier_fraction) {
      m.is_outlier = true;
      m.p_j = Vector2d(u01(rng) * (cj.intr.width - 1), u01(rng) * (cj.intr.height - 1));
      m.triple_id = -1;
    }
  }
  return out;
}

// ---------------------------------------------------------------- default rigs

// Three cameras with the paper-style center +/- (9.35, 10.1) m baselines,
// elevated and looking at the crowd area from a distance.
inline std::vector<SyntheticCamera> default_rig(double distance = 24.0, double elevation = 8.5,
                                                double focal = 1200.0, int width = 400,
                                                int height = 300) {
  const Vector3d target(0, 0, 1.0);
  std::vector<SyntheticCamera> cams;
  cams.push_back(make_camera({0.0, -distance, elevation}, target, focal, width, height));
  cams.push_back(make_camera({-9.35, -distance, elevation}, target, focal, width, height));
  cams.push_back(make_camera({10.1, -distance, elevation}, target, focal, width, height));
  return cams;
}

inline SceneSpec default_dense_scene(uint64_t seed = 11) {
  SceneSpec scene;
  scene.cameras = default_rig();
  scene.ground_seed = mix_seed(seed, 1);
  scene.ground_x0 = -5;
  scene.ground_x1 = 5;
  scene.ground_y0 = -4;
  scene.ground_y1 = 4;
  std::mt19937_64 rng(mix_seed(seed, 2));
  std::uniform_real_distribution<double> uh(150.0, 190.0);
  std::uniform_real_distribution<double> uv(-0.25, 0.25);
  const double xs[10] = {-3.2, -1.9, -0.4, 1.1, 2.6, -2.5, -0.9, 0.6, 2.0, 3.3};
  const double ys[10] = {-1.6, 0.9, -0.7, 1.5, -1.2, 1.9, -2.2, 0.2, 2.3, 0.8};
  for (int i = 0; i < 10; ++i) {
    Pedestrian p;
    p.x = xs[i];
    p.y = ys[i];
    p.height = uh(rng);
    p.radius = 22;
    p.seed = mix_seed(seed, 100 + i);
    p.vx = uv(rng);
    p.vy = uv(rng);
    scene.pedestrians.push_back(p);
  }
  return scene;
}

inline SceneSpec default_sparse_scene(uint64_t seed = 12) {
  SceneSpec scene = default_dense_scene(seed);
  scene.pedestrians.resize(3);
  scene.pedestrians[0].x = -2.5;
  scene.pedestrians[0].y = -1.0;
  scene.pedestrians[1].x = 1.5;
  scene.pedestrians[1].y = 1.2;
  scene.pedestrians[2].x = 3.0;
  scene.pedestrians[2].y = -1.8;
  return scene;
}

inline SceneSpec default_calibration_scene(uint64_t seed = 13) {
  SceneSpec scene;
  scene.cameras = default_rig(24.0, 8.5, 420.0);  // wide FOV: ~400 m^2 overlap
  scene.ground_seed = mix_seed(seed, 1);
  scene.ground_x0 = -10;
  scene.ground_x1 = 10;
  scene.ground_y0 = -10;
  scene.ground_y1 = 10;
  std::mt19937_64 rng(mix_seed(seed, 3));
  std::uniform_real_distribution<double> ux(-8.0, 8.0);
  std::uniform_real_distribution<double> uy(-8.0, 8.0);
  std::uniform_real_distribution<double> uh(150.0, 195.0);
  for (int i = 0; i < 15; ++i) {
    Pedestrian p;
    p.x = ux(rng);
    p.y = uy(rng);
    p.height = uh(rng);
    p.radius = 22;
    p.seed = mix_seed(seed, 200 + i);
    scene.pedestrians.push_back(p);
  }
  return scene;
}

}  // namespace headmap
