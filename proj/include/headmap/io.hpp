// File formats: calibration files, match lists, PGM/PPM images, 16-bit height
// maps with sidecar metadata, detections tables, scene files, raw float dumps
// and the flat key-value config syntax.
#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>

#include "headmap/calibration.hpp"
#include "headmap/core.hpp"
#include "headmap/daisy.hpp"
#include "headmap/geometry.hpp"
#include "headmap/mrf.hpp"
#include "headmap/synthetic.hpp"
#include "headmap/tracklets.hpp"

namespace headmap {

inline std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

// ------------------------------------------------------------- calibration

struct CameraRecord {
  CameraIntrinsics intr;
  Vector3d v = Vector3d::Zero();
  Vector3d l = Vector3d::Zero();
  double alpha = 0;
  bool has_frame = false;  // v/l present
  bool has_alpha = false;

  VerticalFrame frame() const {
    if (!has_frame) throw error("camera record: vanishing geometry missing");
    return VerticalFrame::canonical(v, l, has_alpha ? alpha : 0.0);
  }
};

struct PairRecord {
  int cam_i = 0, cam_j = 0;
  Matrix3d F = Matrix3d::Zero();
  RelativePose pose;
  double laser = 0;
  bool has_F = false, has_pose = false, has_laser = false;
};

struct CalibrationFile {
  std::vector<CameraRecord> cameras;
  std::vector<PairRecord> pairs;

  const PairRecord* find_pair(int i, int j) const {
    for (const auto& p : pairs)
      if (p.cam_i == i && p.cam_j == j) return &p;
    return nullptr;
  }
  PairRecord* find_pair(int i, int j) {
    for (auto& p : pairs)
      if (p.cam_i == i && p.cam_j == j) return &p;
    return nullptr;
  }
};

// Ground homography C_i -> C_j reconstructed from the stored single-view
// metrology: alpha turns the homology into metric depth along the nadir ray,
// which pins the ground plane in C_i's frame; the plane then induces H0.
inline Matrix3d derive_ground_homography(const CameraRecord& cam_i, const CameraRecord& cam_j,
                                         const RelativePose& pose) {
  const VerticalFrame frame = cam_i.frame();
  if (!cam_i.has_alpha) throw error("derive_ground_homography: alpha missing");
  const Matrix3d K_i = cam_i.intr.matrix();
  const Matrix3d K_j = cam_j.intr.matrix();

  Vector3d down = (cam_i.intr.inverse() * frame.v).normalized();
  if (std::abs(down.z()) < 1e-12)
    throw error("derive_ground_homography: camera not tilted toward the ground");
  if (down.z() < 0) down = -down;
  const Vector3d up = -down;

  // K * up = c * v for the stored representative of v
  const Vector3d k_up = K_i * up;
  int idx = 0;
  frame.v.cwiseAbs().maxCoeff(&idx);
  const double c = k_up(idx) / frame.v(idx);

  // metric depth of the nadir pixel: lambda = c / (alpha * (l . p0))
  if (std::abs(frame.v.z()) < 1e-12)
    throw error("derive_ground_homography: vanishing point at infinity");
  const Vector3d nadir = frame.v / frame.v.z();
  const double lambda = c / (frame.alpha * frame.l.dot(nadir));
  const Vector3d ground_point = lambda * (cam_i.intr.inverse() * nadir);

  // plane up^T X = d in C_i coordinates; d = -camera height
  const double d = up.dot(ground_point);
  const Matrix3d H = K_j * (pose.R + pose.t * up.transpose() / d) * cam_i.intr.inverse();
  return normalized_matrix(H);
}

inline HomographyFamily family_from_calibration(const CalibrationFile& calib, int i, int j) {
  const PairRecord* pair = calib.find_pair(i, j);
  if (pair == nullptr) throw error("calibration: pair not found");
  if (!pair->has_F || !pair->has_pose) throw error("calibration: pair incomplete");
  HomographyFamily fam;
  fam.F = pair->F;
  fam.frame_i = calib.cameras[i].frame();
  fam.frame_j = calib.cameras[j].frame();
  fam.H0 = derive_ground_homography(calib.cameras[i], calib.cameras[j], pair->pose);
  return fam;
}

inline void write_calibration(const CalibrationFile& calib, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw error("cannot write " + path);
  out << "headmap_calibration 1\n";
  out << "cameras " << calib.cameras.size() << "\n";
  for (size_t k = 0; k < calib.cameras.size(); ++k) {
    const CameraRecord& cam = calib.cameras[k];
    out << "camera " << k << "\n";
    out << "size " << cam.intr.width << " " << cam.intr.height << "\n";
    out << "intrinsics " << fmt_double(cam.intr.fx) << " " << fmt_double(cam.intr.fy) << " "
        << fmt_double(cam.intr.cx) << " " << fmt_double(cam.intr.cy) << "\n";
    if (cam.has_frame) {
      out << "v " << fmt_double(cam.v.x()) << " " << fmt_double(cam.v.y()) << " "
          << fmt_double(cam.v.z()) << "\n";
      out << "l " << fmt_double(cam.l.x()) << " " << fmt_double(cam.l.y()) << " "
          << fmt_double(cam.l.z()) << "\n";
    }
    if (cam.has_alpha) out << "alpha " << fmt_double(cam.alpha) << "\n";
    out << "end\n";
  }
  for (const auto& pair : calib.pairs) {
    out << "pair " << pair.cam_i << " " << pair.cam_j << "\n";
    if (pair.has_F) {
      out << "F";
      for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) out << " " << fmt_double(pair.F(r, c));
      out << "\n";
    }
    if (pair.has_pose) {
      out << "R";
      for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) out << " " << fmt_double(pair.pose.R(r, c));
      out << "\n";
      out << "t " << fmt_double(pair.pose.t.x()) << " " << fmt_double(pair.pose.t.y()) << " "
          << fmt_double(pair.pose.t.z()) << "\n";
    }
    if (pair.has_laser) out << "laser " << fmt_double(pair.laser) << "\n";
    out << "end\n";
  }
}

inline CalibrationFile read_calibration(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw error("cannot read " + path);
  std::string tok;
  in >> tok;
  if (tok != "headmap_calibration") throw error(path + ": not a calibration file");
  int version = 0;
  in >> version;

  CalibrationFile calib;
  while (in >> tok) {
    if (tok == "cameras") {
      size_t n = 0;
      in >> n;
      calib.cameras.resize(n);
    } else if (tok == "camera") {
      size_t idx = 0;
      in >> idx;
      if (idx >= calib.cameras.size()) throw error(path + ": camera index out of range");
      CameraRecord& cam = calib.cameras[idx];
      while (in >> tok && tok != "end") {
        if (tok == "size") in >> cam.intr.width >> cam.intr.height;
        else if (tok == "intrinsics")
          in >> cam.intr.fx >> cam.intr.fy >> cam.intr.cx >> cam.intr.cy;
        else if (tok == "v") {
          in >> cam.v.x() >> cam.v.y() >> cam.v.z();
          cam.has_frame = true;
        } else if (tok == "l") {
          in >> cam.l.x() >> cam.l.y() >> cam.l.z();
        } else if (tok == "alpha") {
          in >> cam.alpha;
          cam.has_alpha = true;
        } else {
          throw error(path + ": unknown camera key " + tok);
        }
      }
      cam.intr.validate();
    } else if (tok == "pair") {
      PairRecord pair;
      in >> pair.cam_i >> pair.cam_j;
      while (in >> tok && tok != "end") {
        if (tok == "F") {
          for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c) in >> pair.F(r, c);
          pair.has_F = true;
        } else if (tok == "R") {
          for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c) in >> pair.pose.R(r, c);
          pair.has_pose = true;
        } else if (tok == "t") {
          in >> pair.pose.t.x() >> pair.pose.t.y() >> pair.pose.t.z();
        } else if (tok == "laser") {
          in >> pair.laser;
          pair.has_laser = true;
        } else {
          throw error(path + ": unknown pair key " + tok);
        }
      }
      calib.pairs.push_back(pair);
    } else {
      throw error(path + ": unknown section " + tok);
    }
  }
  return calib;
}

// ----------------------------------------------------------------- matches

inline void write_matches(const std::vector<PointMatch>& matches, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw error("cannot write " + path);
  out << "# u_i v_i u_j v_j [triple_id]\n";
  for (const auto& m : matches) {
    out << fmt_double(m.p_i.x()) << " " << fmt_double(m.p_i.y()) << " "
        << fmt_double(m.p_j.x()) << " " << fmt_double(m.p_j.y());
    if (m.triple_id >= 0) out << " " << m.triple_id;
    out << "\n";
  }
}

inline std::vector<PointMatch> read_matches(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw error("cannot read " + path);
  std::vector<PointMatch> matches;
  std::string line;
  while (std::getline(in, line)) {
    const auto first = line.find_first_not_of(" \t");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream row(line);
    PointMatch m;
    if (!(row >> m.p_i.x() >> m.p_i.y() >> m.p_j.x() >> m.p_j.y()))
      throw error(path + ": malformed match line: " + line);
    row >> m.triple_id;  // optional
    matches.push_back(m);
  }
  return matches;
}

// ------------------------------------------------------------------ images

inline void write_pgm8(const Image<float>& img, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw error("cannot write " + path);
  out << "P5\n" << img.width() << " " << img.height() << "\n255\n";
  std::vector<uint8_t> row(img.width());
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x)
      row[x] = static_cast<uint8_t>(std::clamp(img(x, y), 0.0f, 255.0f));
    out.write(reinterpret_cast<const char*>(row.data()), row.size());
  }
}

namespace detail {
inline void skip_pnm_whitespace(std::istream& in) {
  for (;;) {
    int c = in.peek();
    if (c == '#') {
      std::string comment;
      std::getline(in, comment);
    } else if (std::isspace(c)) {
      in.get();
    } else {
      return;
    }
  }
}
inline int read_pnm_int(std::istream& in) {
  skip_pnm_whitespace(in);
  int v = 0;
  in >> v;
  return v;
}
}  // namespace detail

inline Image<float> read_pgm8(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw error("cannot read " + path);
  std::string magic;
  in >> magic;
  if (magic != "P5") throw error(path + ": not a binary PGM");
  const int w = detail::read_pnm_int(in);
  const int h = detail::read_pnm_int(in);
  const int maxval = detail::read_pnm_int(in);
  if (maxval != 255) throw error(path + ": expected 8-bit PGM");
  in.get();  // single whitespace after the header
  Image<float> img(w, h);
  std::vector<uint8_t> row(w);
  for (int y = 0; y < h; ++y) {
    in.read(reinterpret_cast<char*>(row.data()), row.size());
    for (int x = 0; x < w; ++x) img(x, y) = row[x];
  }
  if (!in) throw error(path + ": truncated PGM");
  return img;
}

inline void write_pgm16(const Image<uint16_t>& img, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw error("cannot write " + path);
  out << "P5\n" << img.width() << " " << img.height() << "\n65535\n";
  std::vector<uint8_t> row(2 * img.width());
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      row[2 * x] = static_cast<uint8_t>(img(x, y) >> 8);  // big-endian per PNM
      row[2 * x + 1] = static_cast<uint8_t>(img(x, y) & 0xff);
    }
    out.write(reinterpret_cast<const char*>(row.data()), row.size());
  }
}

inline Image<uint16_t> read_pgm16(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw error("cannot read " + path);
  std::string magic;
  in >> magic;
  if (magic != "P5") throw error(path + ": not a binary PGM");
  const int w = detail::read_pnm_int(in);
  const int h = detail::read_pnm_int(in);
  const int maxval = detail::read_pnm_int(in);
  if (maxval != 65535) throw error(path + ": expected 16-bit PGM");
  in.get();
  Image<uint16_t> img(w, h);
  std::vector<uint8_t> row(2 * w);
  for (int y = 0; y < h; ++y) {
    in.read(reinterpret_cast<char*>(row.data()), row.size());
    for (int x = 0; x < w; ++x)
      img(x, y) = static_cast<uint16_t>((row[2 * x] << 8) | row[2 * x + 1]);
  }
  if (!in) throw error(path + ": truncated PGM");
  return img;
}

// RGB as three planes packed per pixel
inline void write_ppm(const Image<float>& r, const Image<float>& g, const Image<float>& b,
                      const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw error("cannot write " + path);
  out << "P6\n" << r.width() << " " << r.height() << "\n255\n";
  std::vector<uint8_t> row(3 * r.width());
  for (int y = 0; y < r.height(); ++y) {
    for (int x = 0; x < r.width(); ++x) {
      row[3 * x] = static_cast<uint8_t>(std::clamp(r(x, y), 0.0f, 255.0f));
      row[3 * x + 1] = static_cast<uint8_t>(std::clamp(g(x, y), 0.0f, 255.0f));
      row[3 * x + 2] = static_cast<uint8_t>(std::clamp(b(x, y), 0.0f, 255.0f));
    }
    out.write(reinterpret_cast<const char*>(row.data()), row.size());
  }
}

// -------------------------------------------------------------- height maps

// 16-bit encoding: 0 = unknown, value k >= 1 means height h_min + (k-1) delta.
inline void write_height_map(const HeightMap& hmap, const LabelSet& labels, double lambda,
                             const std::string& path) {
  Image<uint16_t> img(hmap.label.width(), hmap.label.height(), 0);
  const int u = labels.unknown();
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x) {
      const int l = hmap.label(x, y);
      img(x, y) = l == u ? 0 : static_cast<uint16_t>(l + 1);
    }
  write_pgm16(img, path);

  std::ofstream meta(path + ".meta");
  if (!meta) throw error("cannot write " + path + ".meta");
  meta << "h_min " << fmt_double(labels.h_min) << "\n";
  meta << "h_max " << fmt_double(labels.h_max) << "\n";
  meta << "delta_h " << fmt_double(labels.delta_h) << "\n";
  meta << "lambda " << fmt_double(lambda) << "\n";
  meta << "energy " << fmt_double(hmap.energy) << "\n";
}

struct HeightMapFile {
  HeightMap hmap;
  LabelSet labels;
  double lambda = 0;
};

inline HeightMapFile read_height_map(const std::string& path) {
  const Image<uint16_t> img = read_pgm16(path);
  std::ifstream meta(path + ".meta");
  if (!meta) throw error("cannot read " + path + ".meta");
  HeightMapFile out;
  std::string key;
  double energy_value = 0;
  while (meta >> key) {
    if (key == "h_min") meta >> out.labels.h_min;
    else if (key == "h_max") meta >> out.labels.h_max;
    else if (key == "delta_h") meta >> out.labels.delta_h;
    else if (key == "lambda") meta >> out.lambda;
    else if (key == "energy") meta >> energy_value;
    else throw error(path + ".meta: unknown key " + key);
  }
  out.labels.validate();
  out.hmap.energy = energy_value;
  out.hmap.label = Image<int32_t>(img.width(), img.height(), out.labels.unknown());
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x) {
      const uint16_t v = img(x, y);
      if (v == 0) continue;
      if (v > static_cast<uint16_t>(out.labels.num_heights()))
        throw error(path + ": label value out of range");
      out.hmap.label(x, y) = v - 1;
    }
  return out;
}

// -------------------------------------------------------------- detections

inline void write_detections(const std::vector<Detection>& detections, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw error("cannot write " + path);
  out << "# frame_id tracklet_id x_m y_m h_cm\n";
  for (const auto& d : detections)
    out << d.frame << " " << d.tracklet_id << " " << fmt_double(d.x) << " " << fmt_double(d.y)
        << " " << fmt_double(d.h) << "\n";
}

inline std::vector<Detection> read_detections(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw error("cannot read " + path);
  std::vector<Detection> out;
  std::string line;
  while (std::getline(in, line)) {
    const auto first = line.find_first_not_of(" \t");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream row(line);
    Detection d;
    if (!(row >> d.frame >> d.tracklet_id >> d.x >> d.y >> d.h))
      throw error(path + ": malformed detection line: " + line);
    out.push_back(d);
  }
  return out;
}

inline void write_tracklet_summary(const TrackletSet& state, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw error("cannot write " + path);
  out << "# id start_frame end_frame length mean_h_cm\n";
  for (const auto& trk : state.tracklets) {
    if (trk.path.empty()) continue;
    out << trk.id << " " << trk.path.front().frame << " " << trk.path.back().frame << " "
        << trk.length() << " " << fmt_double(trk.average_height()) << "\n";
  }
}

// -------------------------------------------------------------- raw floats

inline void write_float_image(const Image<float>& img, const std::string& path,
                              const std::string& magic = "HMFLOAT1") {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw error("cannot write " + path);
  out << magic << " " << img.width() << " " << img.height() << "\n";
  out.write(reinterpret_cast<const char*>(img.data()), img.size() * sizeof(float));
}

inline Image<float> read_float_image(const std::string& path,
                                     const std::string& magic = "HMFLOAT1") {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw error("cannot read " + path);
  std::string m;
  int w = 0, h = 0;
  in >> m >> w >> h;
  if (m != magic) throw error(path + ": bad magic");
  in.get();
  Image<float> img(w, h);
  in.read(reinterpret_cast<char*>(img.data()), img.size() * sizeof(float));
  if (!in) throw error(path + ": truncated float image");
  return img;
}

// Self-describing descriptor dump: dims, S histograms, H bins, then the raw
// per-pixel float data.
inline void write_descriptor_field(const DescriptorField& field, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw error("cannot write " + path);
  out << "HMDAISY1 " << field.width << " " << field.height << " "
      << field.params.total_histograms() << " " << field.params.orientations << "\n";
  out.write(reinterpret_cast<const char*>(field.data.data()),
            field.data.size() * sizeof(float));
}

// ------------------------------------------------------------- scene files

inline void write_scene(const SceneSpec& scene, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw error("cannot write " + path);
  out << "headmap_scene 1\n";
  out << "ground_seed " << scene.ground_seed << "\n";
  out << "frame_dt " << fmt_double(scene.frame_dt) << "\n";
  out << "region " << fmt_double(scene.ground_x0) << " " << fmt_double(scene.ground_x1) << " "
      << fmt_double(scene.ground_y0) << " " << fmt_double(scene.ground_y1) << "\n";
  for (const auto& cam : scene.cameras) {
    // position, then the world point the optical axis passes through
    const Vector3d target = cam.position + cam.R.row(2).transpose();
    out << "camera " << fmt_double(cam.position.x()) << " " << fmt_double(cam.position.y())
        << " " << fmt_double(cam.position.z()) << " " << fmt_double(target.x()) << " "
        << fmt_double(target.y()) << " " << fmt_double(target.z()) << " "
        << fmt_double(cam.intr.fx) << " " << cam.intr.width << " " << cam.intr.height << "\n";
  }
  for (const auto& p : scene.pedestrians) {
    out << "pedestrian " << fmt_double(p.x) << " " << fmt_double(p.y) << " "
        << fmt_double(p.height) << " " << fmt_double(p.radius) << " " << p.seed << " "
        << fmt_double(p.vx) << " " << fmt_double(p.vy) << "\n";
  }
}

inline SceneSpec read_scene(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw error("cannot read " + path);
  std::string tok;
  in >> tok;
  if (tok != "headmap_scene") throw error(path + ": not a scene file");
  int version = 0;
  in >> version;

  SceneSpec scene;
  while (in >> tok) {
    if (tok == "ground_seed") in >> scene.ground_seed;
    else if (tok == "frame_dt") in >> scene.frame_dt;
    else if (tok == "region")
      in >> scene.ground_x0 >> scene.ground_x1 >> scene.ground_y0 >> scene.ground_y1;
    else if (tok == "camera") {
      Vector3d pos, target;
      double focal = 0;
      int w = 0, h = 0;
      in >> pos.x() >> pos.y() >> pos.z() >> target.x() >> target.y() >> target.z() >> focal >>
          w >> h;
      scene.cameras.push_back(make_camera(pos, target, focal, w, h));
    } else if (tok == "pedestrian") {
      Pedestrian p;
      in >> p.x >> p.y >> p.height >> p.radius >> p.seed >> p.vx >> p.vy;
      scene.pedestrians.push_back(p);
    } else {
      throw error(path + ": unknown scene key " + tok);
    }
  }
  if (scene.cameras.empty()) throw error(path + ": scene has no cameras");
  return scene;
}

// ------------------------------------------------------------------ config

// Flat `key = value` text; '#' starts a comment.  Unknown keys are rejected
// against the registry the caller supplies.
struct KeyValueConfig {
  std::map<std::string, std::string> values;

  static KeyValueConfig load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw error("cannot read " + path);
    KeyValueConfig cfg;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line = line.substr(0, hash);
      const auto eq = line.find('=');
      if (eq == std::string::npos) {
        if (line.find_first_not_of(" \t\r") != std::string::npos)
          throw error(path + ":" + std::to_string(line_no) + ": expected key = value");
        continue;
      }
      auto trim = [](std::string s) {
        const auto a = s.find_first_not_of(" \t\r");
        const auto b = s.find_last_not_of(" \t\r");
        return a == std::string::npos ? std::string{} : s.substr(a, b - a + 1);
      };
      const std::string key = trim(line.substr(0, eq));
      const std::string value = trim(line.substr(eq + 1));
      if (key.empty()) throw error(path + ":" + std::to_string(line_no) + ": empty key");
      cfg.values[key] = value;
    }
    return cfg;
  }

  void reject_unknown(const std::set<std::string>& known, const std::string& context) const {
    for (const auto& [key, value] : values)
      if (!known.count(key)) throw error(context + ": unknown config key '" + key + "'");
  }

  bool has(const std::string& key) const { return values.count(key) > 0; }

  double get_double(const std::string& key, double fallback) const {
    auto it = values.find(key);
    if (it == values.end()) return fallback;
    size_t pos = 0;
    const double v = std::stod(it->second, &pos);
    if (pos != it->second.size()) throw error("config: bad number for " + key);
    return v;
  }
  int get_int(const std::string& key, int fallback) const {
    auto it = values.find(key);
    if (it == values.end()) return fallback;
    return static_cast<int>(std::stoll(it->second));
  }
  uint64_t get_u64(const std::string& key, uint64_t fallback) const {
    auto it = values.find(key);
    if (it == values.end()) return fallback;
    return std::stoull(it->second);
  }
  std::string get_string(const std::string& key, const std::string& fallback) const {
    auto it = values.find(key);
    return it == values.end() ? fallback : it->second;
  }
};

}  // namespace headmap
