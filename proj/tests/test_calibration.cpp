#include <catch2/catch_amalgamated.hpp>
#include <random>

#include "headmap/calibration.hpp"
#include "headmap/synthetic.hpp"
#include "test_util.hpp"

using namespace headmap;

namespace {

PointMatchSet to_match_set(const SampledMatches& sampled) {
  PointMatchSet set;
  for (const auto& m : sampled.matches) set.matches.push_back({m.p_i, m.p_j, m.triple_id});
  return set;
}

}  // namespace

TEST_CASE("fundamental matrix estimation", "[calibration]") {
  SceneSpec scene = default_calibration_scene();
  const Matrix3d F_true = true_fundamental(scene.cameras[0], scene.cameras[1]);

  SECTION("noiseless matches recover F to 1e-8") {
    MatchSampleOptions opts;
    const PointMatchSet set = to_match_set(sample_matches(scene, 0, 1, opts));
    const FundamentalEstimate est = estimate_fundamental(set);
    CHECK((normalized_matrix(est.F) - F_true).norm() < 1e-8);
    CHECK(est.inliers.size() == set.matches.size());
  }

  SECTION("40% outliers and 0.5 px noise keep >= 95% of true inliers") {
    MatchSampleOptions opts;
    opts.n_ground = 150;
    opts.n_body = 150;
    opts.noise_px = 0.5;
    opts.outlier_fraction = 0.4;
    const SampledMatches sampled = sample_matches(scene, 0, 1, opts);
    const PointMatchSet set = to_match_set(sampled);
    const FundamentalEstimate est = estimate_fundamental(set, {1000, 2.0, 3});

    std::vector<bool> is_inlier(set.matches.size(), false);
    for (int k : est.inliers) is_inlier[k] = true;
    int true_total = 0, recovered = 0;
    for (size_t k = 0; k < sampled.matches.size(); ++k) {
      if (sampled.matches[k].is_outlier) continue;
      ++true_total;
      if (is_inlier[k]) ++recovered;
    }
    REQUIRE(true_total > 100);
    CHECK(recovered >= static_cast<int>(0.95 * true_total));
  }

  SECTION("fewer than 8 matches raise") {
    PointMatchSet tiny;
    for (int k = 0; k < 7; ++k) tiny.matches.push_back({{10.0 * k, 5.0}, {11.0 * k, 6.0}});
    CHECK_THROWS_AS(estimate_fundamental(tiny), error);
  }

  SECTION("an all-ground set is flagged homography-degenerate, not fatal") {
    MatchSampleOptions opts;
    opts.n_body = 0;
    opts.n_ground = 120;
    const PointMatchSet set = to_match_set(sample_matches(scene, 0, 1, opts));
    const FundamentalEstimate est = estimate_fundamental(set);
    CHECK(est.homography_degenerate);
  }
}

TEST_CASE("height hypotheses", "[calibration]") {
  SceneSpec scene = default_calibration_scene();
  const HomographyFamily fam = true_family(scene.cameras[0], scene.cameras[1]);
  const RelativePose pose = true_relative_pose(scene.cameras[0], scene.cameras[1]);
  const CameraIntrinsics& K_i = scene.cameras[0].intr;
  const CameraIntrinsics& K_j = scene.cameras[1].intr;
  const double camera_height = scene.cameras[0].position.z();

  SECTION("ground matches estimate the camera height within 1%") {
    MatchSampleOptions opts;
    opts.n_body = 0;
    const SampledMatches sampled = sample_matches(scene, 0, 1, opts);
    int tested = 0;
    for (size_t k = 0; k < sampled.matches.size(); ++k) {
      const PointMatch m{sampled.matches[k].p_i, sampled.matches[k].p_j};
      const HeightHypothesis hyp = height_hypothesis(m, static_cast<int>(k), fam, pose, K_i, K_j);
      if (!hyp.valid) continue;
      CHECK(hyp.h_tilde == Catch::Approx(camera_height).epsilon(0.01));
      ++tested;
    }
    REQUIRE(tested > 80);
  }

  SECTION("body matches estimate camera height minus point height within 2%") {
    MatchSampleOptions opts;
    opts.n_ground = 0;
    opts.n_body = 100;
    const SampledMatches sampled = sample_matches(scene, 0, 1, opts);
    int tested = 0;
    for (size_t k = 0; k < sampled.matches.size(); ++k) {
      const auto& sm = sampled.matches[k];
      if (sm.true_height < 0.5) continue;
      const PointMatch m{sm.p_i, sm.p_j};
      const HeightHypothesis hyp = height_hypothesis(m, static_cast<int>(k), fam, pose, K_i, K_j);
      if (!hyp.valid) continue;
      CHECK(hyp.h_tilde == Catch::Approx(camera_height - sm.true_height).epsilon(0.02));
      ++tested;
    }
    REQUIRE(tested > 50);
  }

  SECTION("points above the vanishing line are invalid") {
    // solve l . (160, y, 1) = 0 for the horizon row, then go above it
    const VerticalFrame& fi = fam.frame_i;
    const double y_h = -(fi.l.x() * 160.0 + fi.l.z()) / fi.l.y();
    const Vector2d above(160.0, y_h - 30.0);
    REQUIRE_FALSE(fi.below_horizon(above));
    const PointMatch m{above, above};
    const HeightHypothesis hyp = height_hypothesis(m, 0, fam, pose, K_i, K_j);
    CHECK_FALSE(hyp.valid);
  }
}

TEST_CASE("EM ground clustering", "[calibration]") {
  auto make_hyps = [](const std::vector<double>& values) {
    std::vector<HeightHypothesis> hyps;
    for (size_t k = 0; k < values.size(); ++k)
      hyps.push_back({static_cast<int>(k), values[k], true});
    return hyps;
  };

  SECTION("recovers the ground component of the reference mixture") {
    std::mt19937_64 rng(15);
    std::normal_distribution<double> ground(5.0, 0.05), body(3.4, 0.2);
    std::uniform_real_distribution<double> noise(2.0, 7.0);
    std::vector<double> values;
    std::vector<bool> truth;
    for (int k = 0; k < 240; ++k) { values.push_back(ground(rng)); truth.push_back(true); }
    for (int k = 0; k < 120; ++k) { values.push_back(body(rng)); truth.push_back(false); }
    for (int k = 0; k < 40; ++k) { values.push_back(noise(rng)); truth.push_back(false); }

    const GroundCluster cluster = cluster_ground(make_hyps(values));
    REQUIRE(cluster.ok);
    CHECK(cluster.mean == Catch::Approx(5.0).margin(0.05));

    int recovered = 0;
    for (int idx : cluster.members)
      if (truth[idx]) ++recovered;
    CHECK(recovered >= static_cast<int>(0.9 * 240));
  }

  SECTION("log-likelihood is non-decreasing and posteriors sum to one") {
    std::mt19937_64 rng(16);
    std::normal_distribution<double> ground(5.0, 0.05), body(3.4, 0.2);
    std::vector<double> values;
    for (int k = 0; k < 150; ++k) values.push_back(ground(rng));
    for (int k = 0; k < 80; ++k) values.push_back(body(rng));
    const GroundCluster cluster = cluster_ground(make_hyps(values));
    for (size_t it = 1; it < cluster.loglik.size(); ++it)
      CHECK(cluster.loglik[it] >= cluster.loglik[it - 1] - 1e-9);
    for (double e : cluster.row_sum_error) CHECK(e < 1e-12);
  }

  SECTION("all-ground input returns everything") {
    std::mt19937_64 rng(17);
    std::normal_distribution<double> ground(5.0, 0.03);
    std::vector<double> values;
    for (int k = 0; k < 100; ++k) values.push_back(ground(rng));
    const GroundCluster cluster = cluster_ground(make_hyps(values));
    CHECK(cluster.ok);
    CHECK(cluster.members.size() >= 90);
  }

  SECTION("pure uniform noise is flagged") {
    std::mt19937_64 rng(18);
    std::uniform_real_distribution<double> noise(1.0, 9.0);
    std::vector<double> values;
    for (int k = 0; k < 200; ++k) values.push_back(noise(rng));
    const GroundCluster cluster = cluster_ground(make_hyps(values));
    // either EM fails to converge or the "ground" component is not credible
    CHECK((!cluster.converged || !cluster.ok));
  }

  SECTION("fewer than 20 hypotheses raise") {
    std::vector<double> values(10, 5.0);
    CHECK_THROWS_AS(cluster_ground(make_hyps(values)), error);
  }
}

TEST_CASE("ground homography fit", "[calibration]") {
  SceneSpec scene = default_calibration_scene();
  const Matrix3d H_true = true_ground_homography(scene.cameras[0], scene.cameras[1]);

  SECTION("noiseless ground matches recover H0 to 1e-8") {
    MatchSampleOptions opts;
    opts.n_body = 0;
    const SampledMatches sampled = sample_matches(scene, 0, 1, opts);
    std::vector<PointMatch> ground;
    for (const auto& m : sampled.matches) ground.push_back({m.p_i, m.p_j});
    const GroundModel model = fit_ground_homography(ground);
    CHECK((normalized_matrix(model.H0) - H_true).norm() < 1e-8);
  }

  SECTION("20% body contamination keeps the median transfer under 1 px") {
    MatchSampleOptions opts;
    opts.n_ground = 120;
    opts.n_body = 30;
    opts.noise_px = 0.3;
    const SampledMatches sampled = sample_matches(scene, 0, 1, opts);
    std::vector<PointMatch> mixed;
    for (const auto& m : sampled.matches) mixed.push_back({m.p_i, m.p_j});
    const GroundModel model = fit_ground_homography(mixed);
    const Matrix3d H_inv = model.H0.inverse();
    std::vector<double> errs;
    for (const auto& m : sampled.matches) {
      if (!m.is_ground) continue;
      errs.push_back(std::sqrt(
          detail::symmetric_transfer_error2(model.H0, H_inv, {m.p_i, m.p_j})));
    }
    std::nth_element(errs.begin(), errs.begin() + errs.size() / 2, errs.end());
    CHECK(errs[errs.size() / 2] < 1.0);
  }

  SECTION("exactly four points interpolate exactly") {
    MatchSampleOptions opts;
    opts.n_body = 0;
    opts.n_ground = 4;
    const SampledMatches sampled = sample_matches(scene, 0, 1, opts);
    REQUIRE(sampled.matches.size() == 4);
    std::vector<PointMatch> four;
    for (const auto& m : sampled.matches) four.push_back({m.p_i, m.p_j});
    const GroundModel model = fit_ground_homography(four);
    for (const auto& m : four)
      CHECK((dehom(model.H0 * hom(m.p_i)) - m.p_j).norm() < 1e-7);
  }

  SECTION("collinear configurations raise") {
    std::vector<PointMatch> collinear;
    for (int k = 0; k < 6; ++k)
      collinear.push_back({{10.0 + 5.0 * k, 20.0 + 10.0 * k}, {30.0 + 5.0 * k, 40.0 + 10.0 * k}});
    CHECK_THROWS_AS(fit_ground_homography(collinear), error);
  }
}

TEST_CASE("ground projection optimization", "[calibration]") {
  SceneSpec scene = default_calibration_scene();
  const HomographyFamily fam = true_family(scene.cameras[0], scene.cameras[1]);

  SECTION("noiseless head points localize their feet within 1 px") {
    MatchSampleOptions opts;
    opts.n_ground = 0;
    opts.n_body = 80;
    const SampledMatches sampled = sample_matches(scene, 0, 1, opts);
    int tested = 0;
    for (const auto& sm : sampled.matches) {
      if (sm.true_height < 0.4) continue;
      const Vector3d foot(sm.world.x(), sm.world.y(), 0.0);
      if (!visible_in(scene.cameras[0], foot) || !visible_in(scene.cameras[1], foot)) continue;
      const Vector2d foot_i = project_world(scene.cameras[0], foot);
      const GroundProjection gp = ground_projection_match({sm.p_i, sm.p_j}, fam);
      CHECK((gp.p_i0 - foot_i).norm() < 1.0);
      CHECK(gp.line_residual_i < 1e-9);
      CHECK(gp.line_residual_j < 1e-9);
      ++tested;
    }
    REQUIRE(tested > 40);
  }

  SECTION("a match already on the ground stays put with near-zero cost") {
    MatchSampleOptions opts;
    opts.n_body = 0;
    opts.n_ground = 20;
    const SampledMatches sampled = sample_matches(scene, 0, 1, opts);
    for (const auto& sm : sampled.matches) {
      const GroundProjection gp = ground_projection_match({sm.p_i, sm.p_j}, fam);
      CHECK(gp.cost < 1e-10);
      CHECK((gp.p_i0 - sm.p_i).norm() < 0.1);
    }
  }

  SECTION("the solution never costs more than the initialization") {
    std::mt19937_64 rng(23);
    std::uniform_real_distribution<double> ux(30.0, 290.0), uy(80.0, 230.0);
    for (int k = 0; k < 200; ++k) {
      const PointMatch m{{ux(rng), uy(rng)}, {ux(rng), uy(rng)}};
      if (!fam.frame_i.below_horizon(m.p_i) || !fam.frame_j.below_horizon(m.p_j)) continue;
      const GroundProjection gp = ground_projection_match(m, fam);
      CHECK(gp.cost <= gp.initial_cost);
    }
  }
}

TEST_CASE("alpha from a point and its ground projection", "[calibration]") {
  SceneSpec scene = default_calibration_scene();
  const SyntheticCamera& cam = scene.cameras[0];
  const VerticalFrame frame = true_vertical_frame(cam);

  SECTION("exact inputs recover the frame alpha to 1e-9") {
    std::mt19937_64 rng(33);
    std::uniform_real_distribution<double> ux(-6.0, 6.0), uz(0.5, 2.0);
    int tested = 0;
    for (int k = 0; k < 100; ++k) {
      const double x = ux(rng), y = ux(rng), z = uz(rng);
      const Vector3d top(x, y, z), foot(x, y, 0.0);
      if (!visible_in(cam, top) || !visible_in(cam, foot)) continue;
      const double a = alpha_from_pair(project_world(cam, top), project_world(cam, foot),
                                       z, frame);
      CHECK(a == Catch::Approx(frame.alpha).epsilon(1e-9));
      ++tested;
    }
    REQUIRE(tested > 50);
  }

  SECTION("doubling Z halves alpha exactly") {
    const Vector3d top(1.0, 0.5, 1.7), foot(1.0, 0.5, 0.0);
    const Vector2d p = project_world(cam, top), p0 = project_world(cam, foot);
    const double a1 = alpha_from_pair(p, p0, 1.7, frame);
    const double a2 = alpha_from_pair(p, p0, 3.4, frame);
    CHECK(a2 == Catch::Approx(a1 / 2).epsilon(1e-12));
  }

  SECTION("reconstructing a 170 cm head through the homology round-trips") {
    const Vector3d top(0.8, -1.2, 1.7), foot(0.8, -1.2, 0.0);
    const Vector2d p = project_world(cam, top), p0 = project_world(cam, foot);
    VerticalFrame f = frame;
    f.alpha = alpha_from_pair(p, p0, 1.7, f);
    const Vector2d rebuilt = dehom(homology(f, 1.7) * hom(p0));
    CHECK((rebuilt - p).norm() < 1e-6);
  }

  SECTION("degenerate inputs raise") {
    const Vector2d p(100, 100);
    CHECK_THROWS_AS(alpha_from_pair(p, p, 1.7, frame), error);
    CHECK_THROWS_AS(alpha_from_pair(p, Vector2d(100, 120), 0.0, frame), error);
  }
}

TEST_CASE("alpha LMedS selection", "[calibration]") {
  SceneSpec scene = default_calibration_scene();
  const HomographyFamily fam = true_family(scene.cameras[0], scene.cameras[1]);
  const double ai_true = fam.frame_i.alpha, aj_true = fam.frame_j.alpha;

  MatchSampleOptions opts;
  opts.n_ground = 0;
  opts.n_body = 120;
  const SampledMatches sampled = sample_matches(scene, 0, 1, opts);
  std::vector<MeasuredMatch> evaluation;
  for (const auto& m : sampled.matches) {
    if (m.true_height > 0.4) evaluation.push_back({m.p_i, m.p_j, m.true_height});
  }
  REQUIRE(evaluation.size() > 50);

  SECTION("70% good votes with 30% corrupted by 10x select within 2%") {
    std::mt19937_64 rng(41);
    std::normal_distribution<double> jitter(1.0, 0.005);
    std::vector<AlphaVote> votes;
    for (int k = 0; k < 70; ++k)
      votes.push_back({ai_true * jitter(rng), aj_true * jitter(rng), k});
    for (int k = 0; k < 30; ++k)
      votes.push_back({ai_true * 10.0 * jitter(rng), aj_true * 10.0 * jitter(rng), 70 + k});
    const AlphaSelection sel = select_alpha_lmeds(votes, evaluation, fam);
    CHECK(sel.alpha_i == Catch::Approx(ai_true).epsilon(0.02));
    CHECK(sel.alpha_j == Catch::Approx(aj_true).epsilon(0.02));
  }

  SECTION("identical votes are returned as-is") {
    std::vector<AlphaVote> votes(12, AlphaVote{ai_true, aj_true, 0});
    AlphaLmedsConfig cfg;
    cfg.refine_rounds = 0;
    const AlphaSelection sel = select_alpha_lmeds(votes, evaluation, fam, cfg);
    CHECK(sel.alpha_i == ai_true);
    CHECK(sel.alpha_j == aj_true);
  }

  SECTION("the winner's median is minimal and selection is permutation invariant") {
    std::mt19937_64 rng(43);
    std::normal_distribution<double> jitter(1.0, 0.02);
    std::vector<AlphaVote> votes;
    for (int k = 0; k < 25; ++k)
      votes.push_back({ai_true * jitter(rng), aj_true * jitter(rng), k});
    AlphaLmedsConfig cfg;
    cfg.refine_rounds = 0;
    const AlphaSelection sel = select_alpha_lmeds(votes, evaluation, fam, cfg);
    for (double med : sel.vote_medians) CHECK(sel.median_error <= med);

    std::reverse(votes.begin(), votes.end());
    const AlphaSelection rev = select_alpha_lmeds(votes, evaluation, fam, cfg);
    CHECK(rev.alpha_i == sel.alpha_i);
    CHECK(rev.alpha_j == sel.alpha_j);
  }

  SECTION("empty votes raise") {
    CHECK_THROWS_AS(select_alpha_lmeds({}, evaluation, fam), error);
  }
}

TEST_CASE("alpha voting pipeline on a noiseless rig", "[calibration]") {
  SceneSpec scene = default_calibration_scene();
  const HomographyFamily fam = true_family(scene.cameras[0], scene.cameras[1]);
  const RelativePose pose = true_relative_pose(scene.cameras[0], scene.cameras[1]);
  const CameraIntrinsics& K_i = scene.cameras[0].intr;
  const CameraIntrinsics& K_j = scene.cameras[1].intr;

  MatchSampleOptions opts;
  opts.n_ground = 80;
  opts.n_body = 120;
  const SampledMatches sampled = sample_matches(scene, 0, 1, opts);
  std::vector<PointMatch> matches;
  for (const auto& m : sampled.matches) matches.push_back({m.p_i, m.p_j});

  std::vector<HeightHypothesis> hyps;
  for (size_t k = 0; k < matches.size(); ++k)
    hyps.push_back(height_hypothesis(matches[k], static_cast<int>(k), fam, pose, K_i, K_j));

  const GroundCluster cluster = cluster_ground(hyps);
  REQUIRE(cluster.ok);

  const AlphaVoteSet vote_set = build_alpha_votes(matches, hyps, cluster, fam, pose, K_i, K_j);
  REQUIRE(vote_set.votes.size() >= 10);
  for (const auto& v : vote_set.votes) {
    CHECK(v.alpha_i == Catch::Approx(fam.frame_i.alpha).epsilon(1e-6));
    CHECK(v.alpha_j == Catch::Approx(fam.frame_j.alpha).epsilon(1e-6));
  }

  const AlphaSelection sel = select_alpha_lmeds(vote_set.votes, vote_set.evaluation, fam);
  CHECK(sel.alpha_i == Catch::Approx(fam.frame_i.alpha).epsilon(1e-6));
  CHECK(sel.alpha_j == Catch::Approx(fam.frame_j.alpha).epsilon(1e-6));
}
