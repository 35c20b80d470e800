// Pipeline drivers behind the CLI subcommands: scene synthesis, metric
// calibration, height-map estimation, temporal tracking and evaluation.
// One RunConfig (flat key-value file plus flag overrides) drives all stages
// through a shared output-directory convention.
#pragma once

#include <filesystem>
#include <set>

#include "headmap/calibration.hpp"
#include "headmap/core.hpp"
#include "headmap/daisy.hpp"
#include "headmap/geometry.hpp"
#include "headmap/io.hpp"
#include "headmap/mrf.hpp"
#include "headmap/synthetic.hpp"
#include "headmap/tracklets.hpp"

namespace headmap {

struct config_error : error {
  using error::error;
};

struct stage_error : error {
  std::string stage;
  stage_error(const std::string& stage_, const std::string& what)
      : error("[" + stage_ + "] " + what), stage(stage_) {}
};

struct RunConfig {
  // global
  int threads = 1;
  uint64_t seed = 1;
  std::string out_dir = ".";

  // synth
  std::string scene = "default-dense";  // scene file path or a built-in name
  int frames = 4;
  double match_noise_px = 0.0;
  double match_outlier_fraction = 0.0;
  int match_ground = 150;
  int match_body = 150;

  // calibrate
  std::string calib_input;   // default <out_dir>/calibration_input.txt
  std::string calib_output;  // default <out_dir>/calibration.txt
  std::string matches_01;    // default <out_dir>/matches_01.txt
  std::string matches_02;    // default <out_dir>/matches_02.txt
  double ransac_tau = 2.0;
  int ransac_iterations = 1000;

  // heightmap
  std::string calib;  // default <out_dir>/calibration.txt
  LabelSet labels;
  MrfConfig mrf;
  DaisyParams daisy;

  // track
  TrackletConfig tracklet;
  std::string detections;  // default <out_dir>/detections.txt

  // eval
  std::string truth;  // default <out_dir>/truth_detections.txt
  double eval_radius = 0.30;

  std::string in_out(const std::string& explicit_path, const std::string& fallback) const {
    if (!explicit_path.empty()) return explicit_path;
    return (std::filesystem::path(out_dir) / fallback).string();
  }
};

inline const std::set<std::string>& config_keys() {
  static const std::set<std::string> keys = {
      "threads", "seed", "out_dir", "scene", "frames", "match_noise_px",
      "match_outlier_fraction", "match_ground", "match_body", "calib_input", "calib_output",
      "matches_01", "matches_02", "ransac_tau", "ransac_iterations", "calib", "h_min",
      "h_max", "delta_h", "lambda", "trunc_k", "k_data_unknown", "unknown_percentile",
      "k_disc_unknown", "bp_iterations", "bp_damping", "head_length", "daisy_radius",
      "daisy_rings", "daisy_ring_samples", "daisy_orientations", "theta_d", "theta_h",
      "theta_l", "peak_radius", "detections", "truth", "eval_radius"};
  return keys;
}

inline RunConfig config_from_file(const std::string& path) {
  RunConfig cfg;
  if (path.empty()) return cfg;
  KeyValueConfig kv;
  try {
    kv = KeyValueConfig::load(path);
    kv.reject_unknown(config_keys(), path);

    cfg.threads = kv.get_int("threads", cfg.threads);
    cfg.seed = kv.get_u64("seed", cfg.seed);
    cfg.out_dir = kv.get_string("out_dir", cfg.out_dir);
    cfg.scene = kv.get_string("scene", cfg.scene);
    cfg.frames = kv.get_int("frames", cfg.frames);
    cfg.match_noise_px = kv.get_double("match_noise_px", cfg.match_noise_px);
    cfg.match_outlier_fraction =
        kv.get_double("match_outlier_fraction", cfg.match_outlier_fraction);
    cfg.match_ground = kv.get_int("match_ground", cfg.match_ground);
    cfg.match_body = kv.get_int("match_body", cfg.match_body);
    cfg.calib_input = kv.get_string("calib_input", cfg.calib_input);
    cfg.calib_output = kv.get_string("calib_output", cfg.calib_output);
    cfg.matches_01 = kv.get_string("matches_01", cfg.matches_01);
    cfg.matches_02 = kv.get_string("matches_02", cfg.matches_02);
    cfg.ransac_tau = kv.get_double("ransac_tau", cfg.ransac_tau);
    cfg.ransac_iterations = kv.get_int("ransac_iterations", cfg.ransac_iterations);
    cfg.calib = kv.get_string("calib", cfg.calib);
    cfg.labels.h_min = kv.get_double("h_min", cfg.labels.h_min);
    cfg.labels.h_max = kv.get_double("h_max", cfg.labels.h_max);
    cfg.labels.delta_h = kv.get_double("delta_h", cfg.labels.delta_h);
    cfg.mrf.lambda = kv.get_double("lambda", cfg.mrf.lambda);
    cfg.mrf.trunc_K = kv.get_double("trunc_k", cfg.mrf.trunc_K);
    cfg.mrf.data_cost_unknown = kv.get_double("k_data_unknown", cfg.mrf.data_cost_unknown);
    cfg.mrf.unknown_percentile = kv.get_double("unknown_percentile", cfg.mrf.unknown_percentile);
    cfg.mrf.disc_cost_unknown = kv.get_double("k_disc_unknown", cfg.mrf.disc_cost_unknown);
    cfg.mrf.bp_iterations = kv.get_int("bp_iterations", cfg.mrf.bp_iterations);
    cfg.mrf.bp_damping = kv.get_double("bp_damping", cfg.mrf.bp_damping);
    cfg.mrf.head_length = kv.get_double("head_length", cfg.mrf.head_length);
    cfg.daisy.radius = kv.get_double("daisy_radius", cfg.daisy.radius);
    cfg.daisy.rings = kv.get_int("daisy_rings", cfg.daisy.rings);
    cfg.daisy.ring_samples = kv.get_int("daisy_ring_samples", cfg.daisy.ring_samples);
    cfg.daisy.orientations = kv.get_int("daisy_orientations", cfg.daisy.orientations);
    cfg.tracklet.theta_d = kv.get_double("theta_d", cfg.tracklet.theta_d);
    cfg.tracklet.theta_h = kv.get_double("theta_h", cfg.tracklet.theta_h);
    cfg.tracklet.theta_l = kv.get_int("theta_l", cfg.tracklet.theta_l);
    cfg.tracklet.peak_radius = kv.get_double("peak_radius", cfg.tracklet.peak_radius);
    cfg.detections = kv.get_string("detections", cfg.detections);
    cfg.truth = kv.get_string("truth", cfg.truth);
    cfg.eval_radius = kv.get_double("eval_radius", cfg.eval_radius);

    cfg.labels.validate();
    cfg.daisy.validate();
    if (cfg.threads < 1 || cfg.frames < 1) throw error("threads and frames must be positive");
    if (cfg.mrf.lambda < 0 || cfg.mrf.trunc_K <= 0 || cfg.mrf.bp_iterations < 1)
      throw error("invalid MRF parameters");
    if (cfg.tracklet.theta_d <= 0 || cfg.tracklet.theta_h <= 0 || cfg.tracklet.theta_l < 0 ||
        cfg.tracklet.peak_radius <= 0)
      throw error("invalid tracklet parameters");
  } catch (const config_error&) {
    throw;
  } catch (const error& e) {
    throw config_error(e.what());
  }
  cfg.mrf.threads = cfg.threads;
  return cfg;
}

inline void dump_config_defaults(std::ostream& out) {
  const RunConfig d;
  out << "# headmap run configuration (flat key = value)\n";
  out << "threads = " << d.threads << "\n";
  out << "seed = " << d.seed << "\n";
  out << "out_dir = " << d.out_dir << "\n";
  out << "scene = " << d.scene << "\n";
  out << "frames = " << d.frames << "\n";
  out << "match_noise_px = " << fmt_double(d.match_noise_px) << "\n";
  out << "match_outlier_fraction = " << fmt_double(d.match_outlier_fraction) << "\n";
  out << "match_ground = " << d.match_ground << "\n";
  out << "match_body = " << d.match_body << "\n";
  out << "calib_input =\n";
  out << "calib_output =\n";
  out << "matches_01 =\n";
  out << "matches_02 =\n";
  out << "ransac_tau = " << fmt_double(d.ransac_tau) << "\n";
  out << "ransac_iterations = " << d.ransac_iterations << "\n";
  out << "calib =\n";
  out << "h_min = " << fmt_double(d.labels.h_min) << "\n";
  out << "h_max = " << fmt_double(d.labels.h_max) << "\n";
  out << "delta_h = " << fmt_double(d.labels.delta_h) << "\n";
  out << "lambda = " << fmt_double(d.mrf.lambda) << "\n";
  out << "trunc_k = " << fmt_double(d.mrf.trunc_K) << "\n";
  out << "k_data_unknown = " << fmt_double(d.mrf.data_cost_unknown) << "\n";
  out << "unknown_percentile = " << fmt_double(d.mrf.unknown_percentile) << "\n";
  out << "k_disc_unknown = " << fmt_double(d.mrf.disc_cost_unknown) << "\n";
  out << "bp_iterations = " << d.mrf.bp_iterations << "\n";
  out << "bp_damping = " << fmt_double(d.mrf.bp_damping) << "\n";
  out << "head_length = " << fmt_double(d.mrf.head_length) << "\n";
  out << "daisy_radius = " << fmt_double(d.daisy.radius) << "\n";
  out << "daisy_rings = " << d.daisy.rings << "\n";
  out << "daisy_ring_samples = " << d.daisy.ring_samples << "\n";
  out << "daisy_orientations = " << d.daisy.orientations << "\n";
  out << "theta_d = " << fmt_double(d.tracklet.theta_d) << "\n";
  out << "theta_h = " << fmt_double(d.tracklet.theta_h) << "\n";
  out << "theta_l = " << d.tracklet.theta_l << "\n";
  out << "peak_radius = " << fmt_double(d.tracklet.peak_radius) << "\n";
  out << "detections =\n";
  out << "truth =\n";
  out << "eval_radius = " << fmt_double(d.eval_radius) << "\n";
}

// ------------------------------------------------------------ file naming

inline std::string view_file(const std::string& dir, int cam, int frame) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "view%d_f%04d.pgm", cam, frame);
  return (std::filesystem::path(dir) / buf).string();
}
inline std::string height_truth_file(const std::string& dir, int cam, int frame) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "height%d_f%04d.raw", cam, frame);
  return (std::filesystem::path(dir) / buf).string();
}
inline std::string heightmap_file(const std::string& dir, int frame) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "heightmap_f%04d.pgm", frame);
  return (std::filesystem::path(dir) / buf).string();
}
inline std::string overlay_file(const std::string& dir, int frame) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "overlay_f%04d.ppm", frame);
  return (std::filesystem::path(dir) / buf).string();
}

// ------------------------------------------------------------------ synth

inline SceneSpec scene_from_config(const RunConfig& cfg) {
  if (cfg.scene == "default-dense") return default_dense_scene(cfg.seed);
  if (cfg.scene == "default-sparse") return default_sparse_scene(cfg.seed);
  if (cfg.scene == "default-calibration") return default_calibration_scene(cfg.seed);
  return read_scene(cfg.scene);
}

inline CalibrationFile truth_calibration_of(const SceneSpec& scene) {
  CalibrationFile calib;
  for (const auto& cam : scene.cameras) {
    CameraRecord rec;
    rec.intr = cam.intr;
    const VerticalFrame frame = true_vertical_frame(cam);
    rec.v = frame.v;
    rec.l = frame.l;
    rec.alpha = frame.alpha;
    rec.has_frame = rec.has_alpha = true;
    calib.cameras.push_back(rec);
  }
  for (int j = 1; j < static_cast<int>(scene.cameras.size()); ++j) {
    PairRecord pair;
    pair.cam_i = 0;
    pair.cam_j = j;
    pair.F = true_fundamental(scene.cameras[0], scene.cameras[j]);
    pair.pose = true_relative_pose(scene.cameras[0], scene.cameras[j]);
    pair.laser = pair.pose.t.norm();
    pair.has_F = pair.has_pose = pair.has_laser = true;
    calib.pairs.push_back(pair);
  }
  return calib;
}

// Renders all frames and views, writes the match files with the configured
// noise, the truth calibration, a stripped calibration input (intrinsics,
// vanishing geometry and laser distances only) and per-frame ground-truth
// head detections.
inline void run_synth(const RunConfig& cfg) {
  SceneSpec scene;
  try {
    scene = scene_from_config(cfg);
  } catch (const error& e) {
    throw config_error(e.what());
  }
  if (scene.cameras.size() < 3)
    throw stage_error("synth", "need at least 3 cameras for the pipeline");

  try {
    std::filesystem::create_directories(cfg.out_dir);
    write_scene(scene, (std::filesystem::path(cfg.out_dir) / "scene.txt").string());

    for (int f = 0; f < cfg.frames; ++f) {
      for (int c = 0; c < static_cast<int>(scene.cameras.size()); ++c) {
        const RenderedView view = render(scene, c, f, cfg.threads);
        write_pgm8(view.image, view_file(cfg.out_dir, c, f));
        write_float_image(view.height, height_truth_file(cfg.out_dir, c, f));
      }
    }

    const CalibrationFile truth = truth_calibration_of(scene);
    write_calibration(truth,
                      (std::filesystem::path(cfg.out_dir) / "calibration_truth.txt").string());
    CalibrationFile input = truth;
    for (auto& cam : input.cameras) cam.has_alpha = false;
    for (auto& pair : input.pairs) pair.has_F = pair.has_pose = false;
    write_calibration(input, cfg.in_out(cfg.calib_input, "calibration_input.txt"));

    // Matches for pair 0-1 carry triple ids; the 0-2 file re-emits the same
    // triple points (projected into camera 2) under the same ids, so a triple
    // id refers to one 3D point across both files.
    MatchSampleOptions opts;
    opts.n_ground = cfg.match_ground;
    opts.n_body = cfg.match_body;
    opts.noise_px = cfg.match_noise_px;
    opts.outlier_fraction = cfg.match_outlier_fraction;
    opts.triple_camera = 2;
    opts.seed = mix_seed(cfg.seed, 0x3a7d);
    const SampledMatches sampled01 = sample_matches(scene, 0, 1, opts);
    {
      std::vector<PointMatch> matches;
      for (const auto& m : sampled01.matches) matches.push_back({m.p_i, m.p_j, m.triple_id});
      write_matches(matches, cfg.in_out(cfg.matches_01, "matches_01.txt"));
    }
    {
      MatchSampleOptions extra = opts;
      extra.triple_camera = -1;
      extra.seed = mix_seed(cfg.seed, 0x3a7e);
      const SampledMatches pair_only = sample_matches(scene, 0, 2, extra);
      std::vector<PointMatch> matches;
      for (const auto& m : pair_only.matches) matches.push_back({m.p_i, m.p_j, -1});

      std::mt19937_64 rng(mix_seed(cfg.seed, 0x3a7f));
      std::normal_distribution<double> gauss(0.0, 1.0);
      std::uniform_real_distribution<double> u01(0.0, 1.0);
      const CameraIntrinsics& K2 = scene.cameras[2].intr;
      for (size_t id = 0; id < sampled01.triples.size(); ++id) {
        PointMatch m{sampled01.triples[id].p_i, sampled01.triples[id].p_k,
                     static_cast<int>(id)};
        if (cfg.match_noise_px > 0) {
          m.p_i += cfg.match_noise_px * Vector2d(gauss(rng), gauss(rng));
          m.p_j += cfg.match_noise_px * Vector2d(gauss(rng), gauss(rng));
        }
        if (cfg.match_outlier_fraction > 0 && u01(rng) < cfg.match_outlier_fraction) {
          m.p_j = Vector2d(u01(rng) * (K2.width - 1), u01(rng) * (K2.height - 1));
          m.triple_id = -1;
        }
        matches.push_back(m);
      }
      write_matches(matches, cfg.in_out(cfg.matches_02, "matches_02.txt"));
    }

    // truth detections on the reference ground chart
    const VerticalFrame frame0 = true_vertical_frame(scene.cameras[0]);
    const GroundBasis basis = ground_basis(frame0, scene.cameras[0].intr);
    std::vector<Detection> truth_dets;
    for (int f = 0; f < cfg.frames; ++f) {
      const double time = scene.frame_dt * f;
      for (size_t p = 0; p < scene.pedestrians.size(); ++p) {
        const Pedestrian& ped = scene.pedestrians[p];
        const Vector2d pos = pedestrian_position(ped, time);
        const Vector3d head_cam = world_to_camera(
            scene.cameras[0], {pos.x(), pos.y(), ped.height / 100.0});
        if (!visible_in(scene.cameras[0], {pos.x(), pos.y(), ped.height / 100.0})) continue;
        const Vector2d g = ground_coords(basis, head_cam);
        truth_dets.push_back({f, static_cast<int>(p), g.x(), g.y(), ped.height});
      }
    }
    write_detections(truth_dets, cfg.in_out(cfg.truth, "truth_detections.txt"));
  } catch (const std::exception& e) {
    throw stage_error("synth", e.what());
  }
}

// -------------------------------------------------------------- calibrate

struct PairCalibrationLog {
  int cam_j = 0;
  size_t matches = 0;
  size_t inliers = 0;
  double median_epipolar_error = 0;
  bool homography_degenerate = false;
  double cluster_mean = 0, cluster_sigma = 0;
  size_t cluster_members = 0;
  double h0_median_transfer = 0;
  size_t votes = 0;
  double lmeds_median = 0;
  double alpha_i = 0, alpha_j = 0;
};

inline double median_of(std::vector<double> v) {
  if (v.empty()) return 0;
  const size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + mid, v.end());
  return v[mid];
}

// F -> pose -> laser scale -> ground -> alpha for one camera pair.  The frames
// carry the vanishing geometry from the input file; alpha starts unset and is
// produced here.
inline PairCalibrationLog calibrate_pair(const CalibrationFile& input, int cam_j,
                                         const std::vector<PointMatch>& matches,
                                         const RunConfig& cfg, PairRecord& out_pair,
                                         double& alpha_i, double& alpha_j) {
  PairCalibrationLog log;
  log.cam_j = cam_j;
  log.matches = matches.size();
  const CameraRecord& rec_i = input.cameras[0];
  const CameraRecord& rec_j = input.cameras[cam_j];
  const std::string stage = "calibrate:pair0" + std::to_string(cam_j);

  PointMatchSet set;
  set.matches = matches;
  set.clamp_to_bounds(rec_i.intr, rec_j.intr);

  FundamentalEstimate fe;
  try {
    fe = estimate_fundamental(set, {cfg.ransac_iterations, cfg.ransac_tau,
                                    mix_seed(cfg.seed, 0xf00d + cam_j)});
  } catch (const error& e) {
    throw stage_error(stage + ":fundamental", e.what());
  }
  log.inliers = fe.inliers.size();
  log.homography_degenerate = fe.homography_degenerate;
  {
    std::vector<double> errs;
    for (int k : fe.inliers) errs.push_back(symmetric_epipolar_error(fe.F, set.matches[k]));
    log.median_epipolar_error = median_of(std::move(errs));
  }

  std::vector<PixelMatch> witnesses;
  for (int k : fe.inliers) witnesses.push_back({set.matches[k].p_i, set.matches[k].p_j});
  RelativePose pose;
  try {
    pose = decompose_fundamental(fe.F, rec_i.intr, rec_j.intr, witnesses);
  } catch (const error& e) {
    throw stage_error(stage + ":pose", e.what());
  }

  const PairRecord* in_pair = input.find_pair(0, cam_j);
  if (in_pair == nullptr || !in_pair->has_laser)
    throw config_error("calibrate: missing laser distance for pair 0-" + std::to_string(cam_j));
  pose = inject_metric_scale(pose, in_pair->laser);

  HomographyFamily fam;
  fam.F = fe.F;
  fam.frame_i = rec_i.frame();
  fam.frame_j = rec_j.frame();

  // inlier matches only from here on
  std::vector<PointMatch> inlier_matches;
  for (int k : fe.inliers) inlier_matches.push_back(set.matches[k]);

  std::vector<HeightHypothesis> hyps;
  for (size_t k = 0; k < inlier_matches.size(); ++k)
    hyps.push_back(height_hypothesis(inlier_matches[k], static_cast<int>(k), fam, pose,
                                     rec_i.intr, rec_j.intr));

  GroundCluster cluster;
  try {
    cluster = cluster_ground(hyps);
  } catch (const error& e) {
    throw stage_error(stage + ":ground-em", e.what());
  }
  if (!cluster.ok)
    throw stage_error(stage + ":ground-em", "no credible ground cluster (EM flagged)");
  log.cluster_mean = cluster.mean;
  log.cluster_sigma = std::sqrt(cluster.variance);
  log.cluster_members = cluster.members.size();

  std::vector<PointMatch> ground_matches;
  for (int idx : cluster.members) ground_matches.push_back(inlier_matches[idx]);
  GroundModel ground;
  try {
    ground = fit_ground_homography(ground_matches, {300, mix_seed(cfg.seed, 0x6007 + cam_j)});
  } catch (const error& e) {
    throw stage_error(stage + ":ground-homography", e.what());
  }
  log.h0_median_transfer = ground.median_transfer_error;
  fam.H0 = ground.H0;

  const AlphaVoteSet votes = build_alpha_votes(inlier_matches, hyps, cluster, fam, pose,
                                               rec_i.intr, rec_j.intr);
  log.votes = votes.votes.size();
  AlphaSelection sel;
  try {
    sel = select_alpha_lmeds(votes.votes, votes.evaluation, fam);
  } catch (const error& e) {
    throw stage_error(stage + ":alpha-lmeds", e.what());
  }
  log.lmeds_median = sel.median_error;
  log.alpha_i = sel.alpha_i;
  log.alpha_j = sel.alpha_j;

  out_pair.cam_i = 0;
  out_pair.cam_j = cam_j;
  out_pair.F = fe.F;
  out_pair.pose = pose;
  out_pair.laser = in_pair->laser;
  out_pair.has_F = out_pair.has_pose = out_pair.has_laser = true;
  alpha_i = sel.alpha_i;
  alpha_j = sel.alpha_j;
  return log;
}

inline void run_calibrate(const RunConfig& cfg) {
  const std::string input_path = cfg.in_out(cfg.calib_input, "calibration_input.txt");
  CalibrationFile input;
  try {
    input = read_calibration(input_path);
  } catch (const error& e) {
    throw config_error(e.what());
  }
  if (input.cameras.size() < 3)
    throw config_error("calibrate: need 3 cameras in " + input_path);
  for (const auto& cam : input.cameras)
    if (!cam.has_frame) throw config_error("calibrate: camera vanishing geometry missing");

  const std::vector<PointMatch> matches01 =
      read_matches(cfg.in_out(cfg.matches_01, "matches_01.txt"));
  const std::vector<PointMatch> matches02 =
      read_matches(cfg.in_out(cfg.matches_02, "matches_02.txt"));

  CalibrationFile out = input;
  PairRecord pair01, pair02;
  double a0_from1 = 0, a1 = 0, a0_from2 = 0, a2 = 0;
  const PairCalibrationLog log1 =
      calibrate_pair(input, 1, matches01, cfg, pair01, a0_from1, a1);
  const PairCalibrationLog log2 =
      calibrate_pair(input, 2, matches02, cfg, pair02, a0_from2, a2);

  // triplet scale consistency from matches seen in all three views
  double triplet_scale = 0;
  {
    std::map<int, std::pair<const PointMatch*, const PointMatch*>> by_triple;
    for (const auto& m : matches01)
      if (m.triple_id >= 0) by_triple[m.triple_id].first = &m;
    for (const auto& m : matches02)
      if (m.triple_id >= 0) by_triple[m.triple_id].second = &m;
    std::vector<TripleMatch> triples;
    for (const auto& [id, pair] : by_triple) {
      if (pair.first == nullptr || pair.second == nullptr) continue;
      triples.push_back({pair.first->p_i, pair.first->p_j, pair.second->p_j});
    }
    if (triples.size() >= 8) {
      try {
        triplet_scale =
            propagate_scale_triplet(pair01.pose, pair02.pose, triples, input.cameras[0].intr,
                                    input.cameras[1].intr, input.cameras[2].intr);
        // the laser is the scale authority when present; the propagated factor
        // is logged as a consistency diagnostic
        const PairRecord* in02 = input.find_pair(0, 2);
        if (in02 == nullptr || !in02->has_laser)
          pair02.pose.t *= triplet_scale;
      } catch (const error&) {
        triplet_scale = 0;  // not enough usable triples; logged as absent
      }
    }
  }

  out.pairs.clear();
  out.pairs.push_back(pair01);
  out.pairs.push_back(pair02);
  // camera 0 receives two alpha estimates, one per pair
  out.cameras[0].alpha = 0.5 * (a0_from1 + a0_from2);
  out.cameras[0].has_alpha = true;
  out.cameras[1].alpha = a1;
  out.cameras[1].has_alpha = true;
  out.cameras[2].alpha = a2;
  out.cameras[2].has_alpha = true;

  try {
    std::filesystem::create_directories(cfg.out_dir);
    write_calibration(out, cfg.in_out(cfg.calib_output, "calibration.txt"));

    std::ofstream log((std::filesystem::path(cfg.out_dir) / "calibration_log.txt").string());
    for (const PairCalibrationLog* l : {&log1, &log2}) {
      log << "pair 0-" << l->cam_j << "\n";
      log << "  matches " << l->matches << " inliers " << l->inliers << "\n";
      log << "  median_epipolar_px " << fmt_double(l->median_epipolar_error) << "\n";
      log << "  homography_degenerate " << (l->homography_degenerate ? 1 : 0) << "\n";
      log << "  ground_mean_m " << fmt_double(l->cluster_mean) << " sigma_m "
          << fmt_double(l->cluster_sigma) << " members " << l->cluster_members << "\n";
      log << "  h0_median_transfer_px " << fmt_double(l->h0_median_transfer) << "\n";
      log << "  alpha_votes " << l->votes << " lmeds_median_px " << fmt_double(l->lmeds_median)
          << "\n";
      log << "  alpha_i " << fmt_double(l->alpha_i) << " alpha_j " << fmt_double(l->alpha_j)
          << "\n";
    }
    log << "alpha_cam0_pair01 " << fmt_double(a0_from1) << "\n";
    log << "alpha_cam0_pair02 " << fmt_double(a0_from2) << "\n";
    log << "alpha_cam0_final " << fmt_double(out.cameras[0].alpha) << "\n";
    log << "triplet_scale " << fmt_double(triplet_scale) << "\n";
  } catch (const stage_error&) {
    throw;
  } catch (const std::exception& e) {
    throw stage_error("calibrate:write", e.what());
  }
}

// -------------------------------------------------------------- heightmap

inline Image<float> overlay_channel(const Image<float>& gray, const HeightMap& hmap,
                                    const LabelSet& labels, int channel) {
  Image<float> out = gray;
  const int u = labels.unknown();
  for (int y = 0; y < gray.height(); ++y)
    for (int x = 0; x < gray.width(); ++x) {
      const int l = hmap.label(x, y);
      if (l == u) continue;
      const double t = labels.num_heights() > 1
                           ? static_cast<double>(l) / (labels.num_heights() - 1)
                           : 0.0;
      // blue -> green -> red ramp over the height range
      double c = 0;
      if (channel == 0) c = std::clamp(2.0 * t - 0.5, 0.0, 1.0);
      if (channel == 1) c = std::clamp(1.5 - std::abs(2.0 * t - 1.0) * 2.0, 0.0, 1.0);
      if (channel == 2) c = std::clamp(1.0 - 2.0 * t, 0.0, 1.0);
      out(x, y) = static_cast<float>(0.45 * gray(x, y) + 0.55 * 255.0 * c);
    }
  return out;
}

inline void run_heightmap(const RunConfig& cfg) {
  CalibrationFile calib;
  try {
    calib = read_calibration(cfg.in_out(cfg.calib, "calibration.txt"));
  } catch (const error& e) {
    throw config_error(e.what());
  }
  if (calib.cameras.size() < 3) throw config_error("heightmap: need 3 calibrated cameras");

  HomographyFamily fam01, fam02;
  try {
    fam01 = family_from_calibration(calib, 0, 1);
    fam02 = family_from_calibration(calib, 0, 2);
  } catch (const error& e) {
    throw stage_error("heightmap:calibration", e.what());
  }

  const CameraIntrinsics& K0 = calib.cameras[0].intr;
  const GradientMap gmap =
      build_gradient_map(fam01.frame_i, K0.width, K0.height, cfg.labels, cfg.mrf);

  std::ofstream log((std::filesystem::path(cfg.out_dir) / "heightmap_log.txt").string());
  for (int f = 0; f < cfg.frames; ++f) {
    Image<float> img0, img1, img2;
    try {
      img0 = read_pgm8(view_file(cfg.out_dir, 0, f));
      img1 = read_pgm8(view_file(cfg.out_dir, 1, f));
      img2 = read_pgm8(view_file(cfg.out_dir, 2, f));
    } catch (const error& e) {
      throw config_error(e.what());
    }
    if (img0.width() != K0.width || img0.height() != K0.height)
      throw stage_error("heightmap:input",
                        "image dimensions do not match the calibrated reference camera");

    try {
      const DescriptorField f0 = compute_field(img0, cfg.daisy, cfg.threads);
      const DescriptorField f1 = compute_field(img1, cfg.daisy, cfg.threads);
      const DescriptorField f2 = compute_field(img2, cfg.daisy, cfg.threads);
      const DataCostVolume vol =
          build_data_cost(f0, {&f1, &f2}, {fam01, fam02}, cfg.labels, cfg.mrf, &gmap);
      const HeightMap hmap = lbp_minsum(vol, gmap, cfg.labels, cfg.mrf);

      write_height_map(hmap, cfg.labels, cfg.mrf.lambda, heightmap_file(cfg.out_dir, f));
      write_ppm(overlay_channel(img0, hmap, cfg.labels, 0),
                overlay_channel(img0, hmap, cfg.labels, 1),
                overlay_channel(img0, hmap, cfg.labels, 2), overlay_file(cfg.out_dir, f));

      log << "frame " << f << " k_data_unknown " << fmt_double(vol.unknown_cost) << "\n";
      for (size_t it = 0; it < hmap.energy_trace.size(); ++it)
        log << "frame " << f << " iter " << it << " energy "
            << fmt_double(hmap.energy_trace[it]) << "\n";
      log << "frame " << f << " final_energy " << fmt_double(hmap.energy) << "\n";
    } catch (const stage_error&) {
      throw;
    } catch (const std::exception& e) {
      throw stage_error("heightmap:frame" + std::to_string(f), e.what());
    }
  }
}

// ------------------------------------------------------------------ track

inline void run_track(const RunConfig& cfg) {
  CalibrationFile calib;
  try {
    calib = read_calibration(cfg.in_out(cfg.calib, "calibration.txt"));
  } catch (const error& e) {
    throw config_error(e.what());
  }
  HomographyFamily fam01;
  RelativePose pose01;
  try {
    fam01 = family_from_calibration(calib, 0, 1);
    pose01 = calib.find_pair(0, 1)->pose;
  } catch (const error& e) {
    throw stage_error("track:calibration", e.what());
  }

  TrackletSet state;
  try {
    for (int f = 0; f < cfg.frames; ++f) {
      const HeightMapFile hm = read_height_map(heightmap_file(cfg.out_dir, f));
      const ProjectionResult proj =
          project_to_ground(hm.hmap, hm.labels, fam01, pose01, calib.cameras[0].intr,
                            calib.cameras[1].intr);
      const auto clusters = find_peaks_and_cluster(proj.points, cfg.tracklet);
      step_tracklets(state, clusters, cfg.tracklet);
    }
    const std::vector<Detection> detections = filter_tracklets(state, cfg.tracklet.theta_l);
    write_detections(detections, cfg.in_out(cfg.detections, "detections.txt"));
    write_tracklet_summary(state,
                           (std::filesystem::path(cfg.out_dir) / "tracklets.txt").string());
  } catch (const stage_error&) {
    throw;
  } catch (const std::exception& e) {
    throw stage_error("track", e.what());
  }
}

// ------------------------------------------------------------------- eval

struct EvalResult {
  int tp = 0, fp = 0, fn = 0;
  double precision = 1.0;  // reported as 1 when no detections exist
  double recall = 0.0;
  bool no_detections = false;
};

inline EvalResult evaluate_detections(const std::vector<Detection>& detections,
                                      const std::vector<Detection>& truth, double radius) {
  EvalResult res;
  std::map<int, std::vector<const Detection*>> det_by_frame, truth_by_frame;
  for (const auto& d : detections) det_by_frame[d.frame].push_back(&d);
  for (const auto& t : truth) truth_by_frame[t.frame].push_back(&t);

  for (const auto& [frame, truths] : truth_by_frame) {
    const auto it = det_by_frame.find(frame);
    const std::vector<const Detection*> dets =
        it == det_by_frame.end() ? std::vector<const Detection*>{} : it->second;

    struct Pair {
      double dist;
      size_t det, truth;
    };
    std::vector<Pair> pairs;
    for (size_t d = 0; d < dets.size(); ++d)
      for (size_t t = 0; t < truths.size(); ++t) {
        const double dist = std::hypot(dets[d]->x - truths[t]->x, dets[d]->y - truths[t]->y);
        if (dist <= radius) pairs.push_back({dist, d, t});
      }
    std::sort(pairs.begin(), pairs.end(), [](const Pair& a, const Pair& b) {
      if (a.dist != b.dist) return a.dist < b.dist;
      if (a.det != b.det) return a.det < b.det;
      return a.truth < b.truth;
    });
    std::vector<bool> det_used(dets.size(), false), truth_used(truths.size(), false);
    int matched = 0;
    for (const auto& p : pairs) {
      if (det_used[p.det] || truth_used[p.truth]) continue;
      det_used[p.det] = truth_used[p.truth] = true;
      ++matched;
    }
    res.tp += matched;
    res.fp += static_cast<int>(dets.size()) - matched;
    res.fn += static_cast<int>(truths.size()) - matched;
  }
  // detections in frames with no truth are false positives
  for (const auto& [frame, dets] : det_by_frame)
    if (!truth_by_frame.count(frame)) res.fp += static_cast<int>(dets.size());

  res.no_detections = (res.tp + res.fp) == 0;
  res.precision = res.no_detections ? 1.0 : double(res.tp) / (res.tp + res.fp);
  res.recall = (res.tp + res.fn) == 0 ? 0.0 : double(res.tp) / (res.tp + res.fn);
  return res;
}

inline EvalResult run_eval(const RunConfig& cfg, std::ostream& out) {
  std::vector<Detection> detections, truth;
  try {
    detections = read_detections(cfg.in_out(cfg.detections, "detections.txt"));
    truth = read_detections(cfg.in_out(cfg.truth, "truth_detections.txt"));
  } catch (const error& e) {
    throw config_error(e.what());
  }
  const EvalResult res = evaluate_detections(detections, truth, cfg.eval_radius);
  out << "tp " << res.tp << " fp " << res.fp << " fn " << res.fn << "\n";
  out << "precision " << fmt_double(res.precision) << (res.no_detections ? " (no detections)" : "")
      << "\n";
  out << "recall " << fmt_double(res.recall) << "\n";
  return res;
}

}  // namespace headmap
