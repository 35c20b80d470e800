#include <catch2/catch_amalgamated.hpp>
#include <cstdio>
#include <filesystem>

#include "headmap/io.hpp"

using namespace headmap;

namespace {

struct TempDir {
  std::filesystem::path path;
  TempDir() {
    path = std::filesystem::temp_directory_path() /
           ("headmap_io_" + std::to_string(::getpid()));
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

CalibrationFile truth_calibration(const SceneSpec& scene) {
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

}  // namespace

TEST_CASE("calibration files round-trip and regenerate the homography family", "[io]") {
  TempDir tmp;
  SceneSpec scene = default_dense_scene();
  const CalibrationFile calib = truth_calibration(scene);
  const std::string path = tmp.file("calib.txt");
  write_calibration(calib, path);
  const CalibrationFile loaded = read_calibration(path);

  SECTION("exact value round-trip") {
    REQUIRE(loaded.cameras.size() == calib.cameras.size());
    for (size_t k = 0; k < calib.cameras.size(); ++k) {
      CHECK(loaded.cameras[k].v == calib.cameras[k].v);
      CHECK(loaded.cameras[k].l == calib.cameras[k].l);
      CHECK(loaded.cameras[k].alpha == calib.cameras[k].alpha);
      CHECK(loaded.cameras[k].intr.fx == calib.cameras[k].intr.fx);
    }
    REQUIRE(loaded.pairs.size() == 2);
    CHECK(loaded.pairs[0].F == calib.pairs[0].F);
    CHECK(loaded.pairs[0].pose.t == calib.pairs[0].pose.t);
    CHECK(loaded.pairs[0].laser == calib.pairs[0].laser);
  }

  SECTION("the derived ground homography matches the analytic one") {
    for (int j = 1; j <= 2; ++j) {
      const HomographyFamily fam = family_from_calibration(loaded, 0, j);
      const Matrix3d H_true = true_ground_homography(scene.cameras[0], scene.cameras[j]);
      CHECK((normalized_matrix(fam.H0) - H_true).norm() < 1e-8);
    }
  }

  SECTION("height transfers work end-to-end from the file") {
    const HomographyFamily fam = family_from_calibration(loaded, 0, 1);
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> ux(-3.0, 3.0);
    for (int k = 0; k < 50; ++k) {
      const Vector3d p(ux(rng), ux(rng), 1.70);
      if (!visible_in(scene.cameras[0], p) || !visible_in(scene.cameras[1], p)) continue;
      const Vector2d img_i = project_world(scene.cameras[0], p);
      const Vector2d img_j = project_world(scene.cameras[1], p);
      CHECK((dehom(fam.at(1.70) * hom(img_i)) - img_j).norm() < 0.5);
    }
  }

  SECTION("unknown keys are rejected") {
    std::ofstream out(tmp.file("bad.txt"));
    out << "headmap_calibration 1\ncameras 1\ncamera 0\nbogus 1\nend\n";
    out.close();
    CHECK_THROWS_AS(read_calibration(tmp.file("bad.txt")), error);
  }
}

TEST_CASE("match files round-trip", "[io]") {
  TempDir tmp;
  std::vector<PointMatch> matches = {{{1.5, 2.25}, {3.125, 4.0}, -1},
                                     {{10.0, 20.0}, {30.0, 40.0}, 7}};
  const std::string path = tmp.file("matches.txt");
  write_matches(matches, path);
  const auto loaded = read_matches(path);
  REQUIRE(loaded.size() == 2);
  CHECK(loaded[0].p_i == matches[0].p_i);
  CHECK(loaded[0].triple_id == -1);
  CHECK(loaded[1].p_j == matches[1].p_j);
  CHECK(loaded[1].triple_id == 7);
}

TEST_CASE("image formats round-trip", "[io]") {
  TempDir tmp;

  SECTION("8-bit PGM") {
    Image<float> img(37, 23);
    for (int y = 0; y < 23; ++y)
      for (int x = 0; x < 37; ++x) img(x, y) = static_cast<float>((x * 7 + y * 13) % 256);
    write_pgm8(img, tmp.file("a.pgm"));
    const Image<float> back = read_pgm8(tmp.file("a.pgm"));
    REQUIRE(back.width() == 37);
    for (int y = 0; y < 23; ++y)
      for (int x = 0; x < 37; ++x) REQUIRE(back(x, y) == img(x, y));
  }

  SECTION("16-bit PGM with big-endian payload") {
    Image<uint16_t> img(5, 3);
    for (int y = 0; y < 3; ++y)
      for (int x = 0; x < 5; ++x) img(x, y) = static_cast<uint16_t>(x * 1000 + y * 257);
    write_pgm16(img, tmp.file("b.pgm"));
    const Image<uint16_t> back = read_pgm16(tmp.file("b.pgm"));
    for (int y = 0; y < 3; ++y)
      for (int x = 0; x < 5; ++x) REQUIRE(back(x, y) == img(x, y));
    // spot-check endianness: first pixel after the header is 0x0000, second 0x03e8
    std::ifstream raw(tmp.file("b.pgm"), std::ios::binary);
    std::string header;
    std::getline(raw, header);
    std::getline(raw, header);
    std::getline(raw, header);
    uint8_t bytes[4];
    raw.read(reinterpret_cast<char*>(bytes), 4);
    CHECK(bytes[2] == 0x03);
    CHECK(bytes[3] == 0xe8);
  }
}

TEST_CASE("height map files carry labels and metadata", "[io]") {
  TempDir tmp;
  const LabelSet labels(140, 200, 2.5);
  HeightMap hmap;
  hmap.label = Image<int32_t>(8, 6, labels.unknown());
  hmap.label(2, 3) = 0;
  hmap.label(4, 1) = 24;
  hmap.energy = 12.5;
  const std::string path = tmp.file("hm.pgm");
  write_height_map(hmap, labels, 0.07, path);

  const HeightMapFile loaded = read_height_map(path);
  CHECK(loaded.labels.h_min == 140.0);
  CHECK(loaded.labels.delta_h == 2.5);
  CHECK(loaded.lambda == 0.07);
  CHECK(loaded.hmap.label(2, 3) == 0);
  CHECK(loaded.hmap.label(4, 1) == 24);
  CHECK(loaded.hmap.label(0, 0) == labels.unknown());

  // encoding: 0 = unknown, k = h_min + (k-1) delta
  const Image<uint16_t> raw = read_pgm16(path);
  CHECK(raw(0, 0) == 0);
  CHECK(raw(2, 3) == 1);
  CHECK(raw(4, 1) == 25);
}

TEST_CASE("detection tables round-trip", "[io]") {
  TempDir tmp;
  std::vector<Detection> dets = {{0, 3, 1.25, -2.5, 172.5}, {1, 3, 1.30, -2.4, 172.5}};
  write_detections(dets, tmp.file("det.txt"));
  const auto loaded = read_detections(tmp.file("det.txt"));
  REQUIRE(loaded.size() == 2);
  CHECK(loaded[0].frame == 0);
  CHECK(loaded[0].tracklet_id == 3);
  CHECK(loaded[0].x == 1.25);
  CHECK(loaded[1].h == 172.5);
}

TEST_CASE("scene files reproduce the scene", "[io]") {
  TempDir tmp;
  SceneSpec scene = default_sparse_scene();
  scene.pedestrians[0].vx = 0.3;
  write_scene(scene, tmp.file("scene.txt"));
  const SceneSpec loaded = read_scene(tmp.file("scene.txt"));
  REQUIRE(loaded.pedestrians.size() == scene.pedestrians.size());
  REQUIRE(loaded.cameras.size() == scene.cameras.size());
  CHECK(loaded.pedestrians[0].vx == 0.3);
  CHECK(loaded.ground_seed == scene.ground_seed);

  // the reloaded scene renders the same world
  const RenderedView a = render(scene, 0);
  const RenderedView b = render(loaded, 0);
  double max_diff = 0;
  for (size_t k = 0; k < a.image.size(); ++k)
    max_diff = std::max(max_diff, std::abs(double(a.image.data()[k]) - b.image.data()[k]));
  CHECK(max_diff == 0.0);
}

TEST_CASE("key-value config", "[io]") {
  TempDir tmp;
  {
    std::ofstream out(tmp.file("run.cfg"));
    out << "# a comment\n";
    out << "lambda = 0.15\n";
    out << "bp_iterations = 40   # trailing comment\n";
    out << "calib = /tmp/calib.txt\n";
  }
  const KeyValueConfig cfg = KeyValueConfig::load(tmp.file("run.cfg"));
  CHECK(cfg.get_double("lambda", 0.07) == 0.15);
  CHECK(cfg.get_int("bp_iterations", 50) == 40);
  CHECK(cfg.get_string("calib", "") == "/tmp/calib.txt");
  CHECK(cfg.get_double("missing", 1.25) == 1.25);

  SECTION("unknown keys are rejected against a registry") {
    CHECK_THROWS_AS(cfg.reject_unknown({"lambda", "bp_iterations"}, "test"), error);
    CHECK_NOTHROW(cfg.reject_unknown({"lambda", "bp_iterations", "calib"}, "test"));
  }

  SECTION("malformed lines raise") {
    std::ofstream out(tmp.file("bad.cfg"));
    out << "this line has no equals sign\n";
    out.close();
    CHECK_THROWS_AS(KeyValueConfig::load(tmp.file("bad.cfg")), error);
  }
}
