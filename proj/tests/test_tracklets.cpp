#include <catch2/catch_amalgamated.hpp>
#include <random>

#include "headmap/tracklets.hpp"

using namespace headmap;

namespace {

// quantize a rendered truth buffer into a height map (heads only)
HeightMap truth_heightmap(const RenderedView& view, const LabelSet& labels) {
  HeightMap hm;
  hm.label = Image<int32_t>(view.image.width(), view.image.height(), labels.unknown());
  for (int y = 0; y < view.image.height(); ++y)
    for (int x = 0; x < view.image.width(); ++x) {
      const double g = view.height(x, y);
      if (g < labels.h_min - 0.5 * labels.delta_h || g > labels.h_max) continue;
      const int l = std::clamp(
          static_cast<int>(std::lround((g - labels.h_min) / labels.delta_h)), 0,
          labels.num_heights() - 1);
      hm.label(x, y) = l;
    }
  return hm;
}

std::vector<ClusterCentroid> one_centroid(double x, double y, double h) {
  ClusterCentroid c;
  c.x = x;
  c.y = y;
  c.h = h;
  c.size = 1;
  return {c};
}

}  // namespace

TEST_CASE("projection to the ground chart", "[tracklets]") {
  const LabelSet labels(140, 200, 2.5);
  SceneSpec scene = default_dense_scene();
  const HomographyFamily fam = true_family(scene.cameras[0], scene.cameras[1]);
  const RelativePose pose = true_relative_pose(scene.cameras[0], scene.cameras[1]);
  const CameraIntrinsics& K_i = scene.cameras[0].intr;
  const CameraIntrinsics& K_j = scene.cameras[1].intr;

  SECTION("an all-unknown map projects to nothing") {
    HeightMap hm;
    hm.label = Image<int32_t>(40, 30, labels.unknown());
    const ProjectionResult res = project_to_ground(hm, labels, fam, pose, K_i, K_j);
    CHECK(res.points.empty());
    CHECK(res.degenerate_skipped == 0);
  }

  SECTION("head pixels land near the pedestrian ground position") {
    const RenderedView view = render(scene, 0);
    const HeightMap hm = truth_heightmap(view, labels);
    const ProjectionResult res = project_to_ground(hm, labels, fam, pose, K_i, K_j);
    REQUIRE(res.points.size() > 100);

    const GroundBasis basis = ground_basis(fam.frame_i, K_i);
    int verified = 0;
    for (size_t p = 0; p < scene.pedestrians.size(); ++p) {
      const Pedestrian& ped = scene.pedestrians[p];
      if (ped.height < labels.h_min + 5.0) continue;
      // expected chart position of this pedestrian's vertical axis
      const Vector3d axis_cam =
          world_to_camera(scene.cameras[0], {ped.x, ped.y, ped.height / 100.0});
      const Vector2d expected = ground_coords(basis, axis_cam);

      // centroid of the projected points whose source pixel is this pedestrian
      const RenderedView& v = view;
      double sx = 0, sy = 0;
      int n = 0;
      for (const auto& gp : res.points) {
        if (v.ped_id(gp.px, gp.py) != static_cast<int>(p)) continue;
        sx += gp.x;
        sy += gp.y;
        ++n;
      }
      if (n < 10) continue;
      const Vector2d centroid(sx / n, sy / n);
      CHECK((centroid - expected).norm() < 0.10);
      ++verified;
    }
    REQUIRE(verified >= 6);
  }

  SECTION("two pixels of one head stay within a body radius") {
    const RenderedView view = render(scene, 0);
    const HeightMap hm = truth_heightmap(view, labels);
    const ProjectionResult res = project_to_ground(hm, labels, fam, pose, K_i, K_j);
    std::vector<const GroundPoint*> head0;
    for (const auto& gp : res.points) {
      if (view.ped_id(gp.px, gp.py) == 0 &&
          view.height(gp.px, gp.py) > scene.pedestrians[0].height - 5.0)
        head0.push_back(&gp);
    }
    REQUIRE(head0.size() >= 2);
    for (size_t a = 0; a < head0.size(); ++a)
      for (size_t b = a + 1; b < head0.size(); ++b) {
        const double d = std::hypot(head0[a]->x - head0[b]->x, head0[a]->y - head0[b]->y);
        CHECK(d <= scene.pedestrians[0].radius / 100.0);
      }
  }
}

TEST_CASE("peak clustering", "[tracklets]") {
  TrackletConfig cfg;

  SECTION("a single point is its own cluster") {
    const std::vector<GroundPoint> pts = {{1.0, 2.0, 170.0, 0, 0}};
    const auto clusters = find_peaks_and_cluster(pts, cfg);
    REQUIRE(clusters.size() == 1);
    CHECK(clusters[0].x == 1.0);
    CHECK(clusters[0].y == 2.0);
    CHECK(clusters[0].h == 170.0);
  }

  SECTION("two blobs a meter apart form exactly two clusters") {
    std::mt19937_64 rng(5);
    std::normal_distribution<double> spread(0.0, 0.05);
    std::vector<GroundPoint> pts;
    for (int k = 0; k < 60; ++k) {
      pts.push_back({0.0 + spread(rng), 0.0 + spread(rng), 165.0 + (k % 5), 0, 0});
      pts.push_back({1.0 + spread(rng), 0.0 + spread(rng), 175.0 + (k % 5), 0, 0});
    }
    const auto clusters = find_peaks_and_cluster(pts, cfg);
    REQUIRE(clusters.size() == 2);
    CHECK(std::abs(clusters[0].x - clusters[1].x) == Catch::Approx(1.0).margin(0.15));
  }

  SECTION("a plateau of equal heights keeps one peak by the tie rule") {
    std::vector<GroundPoint> pts;
    for (int k = 0; k < 5; ++k) pts.push_back({0.05 * k, 0.0, 170.0, 0, 0});
    const auto clusters = find_peaks_and_cluster(pts, cfg);
    CHECK(clusters.size() == 1);
    CHECK(clusters[0].size == 5);
  }

  SECTION("empty input gives empty output") {
    CHECK(find_peaks_and_cluster({}, cfg).empty());
  }
}

TEST_CASE("tracklet stepping", "[tracklets]") {
  TrackletConfig cfg;  // theta_d = 0.20 m, theta_h = 15 cm

  SECTION("a noiseless constant-velocity walker forms one tracklet") {
    TrackletSet state;
    for (int f = 0; f < 12; ++f)
      step_tracklets(state, one_centroid(0.1 * f, 0.5, 172.0), cfg);
    REQUIRE(state.tracklets.size() == 1);
    CHECK(state.tracklets[0].length() == 12);
    CHECK(state.tracklets[0].active);
  }

  SECTION("a centroid far from every prediction opens a new tracklet") {
    TrackletSet state;
    step_tracklets(state, one_centroid(0.0, 0.0, 170.0), cfg);
    step_tracklets(state, one_centroid(0.5, 0.0, 170.0), cfg);  // 0.5 m > theta_d
    REQUIRE(state.tracklets.size() == 2);
    CHECK_FALSE(state.tracklets[0].active);
    CHECK(state.tracklets[0].length() == 1);
    CHECK(state.tracklets[1].length() == 1);
  }

  SECTION("crossing walkers with distinct heights never swap") {
    TrackletSet state;
    for (int f = 0; f < 14; ++f) {
      std::vector<ClusterCentroid> cs;
      cs.push_back({-0.65 + 0.1 * f, 0.0, 180.0, 1});  // tall, moving right
      cs.push_back({0.65 - 0.1 * f, 0.0, 150.0, 1});   // short, moving left
      step_tracklets(state, cs, cfg);
    }
    REQUIRE(state.tracklets.size() == 2);
    for (const auto& trk : state.tracklets) {
      REQUIRE(trk.length() == 14);
      const double h0 = trk.path.front().h;
      for (const auto& p : trk.path) CHECK(p.h == h0);
    }
  }

  SECTION("every centroid lands in exactly one tracklet") {
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> ux(-3.0, 3.0), uh(140.0, 200.0);
    TrackletSet state;
    int fed = 0;
    for (int f = 0; f < 10; ++f) {
      std::vector<ClusterCentroid> cs;
      const int n = 1 + static_cast<int>(f * 0.7) % 4;
      for (int k = 0; k < n; ++k) cs.push_back({ux(rng), ux(rng), uh(rng), 1});
      fed += n;
      step_tracklets(state, cs, cfg);
    }
    int stored = 0;
    for (const auto& trk : state.tracklets) stored += trk.length();
    CHECK(stored == fed);
  }

  SECTION("association is invariant to centroid order") {
    std::vector<ClusterCentroid> frame1 = {{0.0, 0.0, 170.0, 1}, {1.0, 1.0, 180.0, 1}};
    std::vector<ClusterCentroid> frame2 = {{0.05, 0.0, 170.0, 1}, {1.05, 1.0, 180.0, 1}};

    TrackletSet a;
    step_tracklets(a, frame1, TrackletConfig{});
    step_tracklets(a, frame2, TrackletConfig{});

    TrackletSet b;
    auto r1 = frame1, r2 = frame2;
    std::reverse(r1.begin(), r1.end());
    std::reverse(r2.begin(), r2.end());
    step_tracklets(b, r1, TrackletConfig{});
    step_tracklets(b, r2, TrackletConfig{});

    REQUIRE(a.tracklets.size() == b.tracklets.size());
    for (size_t t = 0; t < a.tracklets.size(); ++t) {
      REQUIRE(a.tracklets[t].length() == b.tracklets[t].length());
      for (int k = 0; k < a.tracklets[t].length(); ++k) {
        CHECK(a.tracklets[t].path[k].x == b.tracklets[t].path[k].x);
        CHECK(a.tracklets[t].path[k].y == b.tracklets[t].path[k].y);
      }
    }
  }
}

TEST_CASE("tracklet filtering", "[tracklets]") {
  TrackletConfig cfg;

  SECTION("theta_l = 0 keeps everything") {
    TrackletSet state;
    step_tracklets(state, one_centroid(0, 0, 170), cfg);
    const auto det = filter_tracklets(state, 0);
    CHECK(det.size() == 1);
  }

  SECTION("length-1 tracklets vanish at theta_l = 1") {
    TrackletSet state;
    std::vector<ClusterCentroid> cs = {{0, 0, 170, 1}, {2, 2, 180, 1}};
    step_tracklets(state, cs, cfg);
    CHECK(filter_tracklets(state, 1).empty());
  }

  SECTION("retained detections are non-increasing in theta_l") {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> ux(-4.0, 4.0), uh(140.0, 200.0);
    TrackletSet state;
    for (int f = 0; f < 15; ++f) {
      std::vector<ClusterCentroid> cs;
      for (int k = 0; k < 3 + (f % 3); ++k) cs.push_back({ux(rng), ux(rng), uh(rng), 1});
      step_tracklets(state, cs, cfg);
    }
    size_t prev = std::numeric_limits<size_t>::max();
    for (int theta = 0; theta <= 4; ++theta) {
      const size_t n = filter_tracklets(state, theta).size();
      CHECK(n <= prev);
      prev = n;
    }
  }
}
