// Pipeline driver: synth | calibrate | heightmap | track | eval over a flat
// key-value config.  Exit codes: 0 success, 2 config error, 3 stage failure.
#include <CLI11.hpp>
#include <cmath>
#include <iostream>

#include "headmap/pipeline.hpp"

int main(int argc, char** argv) {
  CLI::App app{"headmap: multi-camera pedestrian head detection via dense height maps"};
  app.fallthrough();

  std::string config_path;
  double lambda_override = std::numeric_limits<double>::quiet_NaN();
  int theta_l_override = -1;
  int threads_override = 0;
  uint64_t seed_override = 0;
  bool has_seed = false;
  bool dump_config = false;

  app.add_option("--config", config_path, "run configuration file (key = value)");
  app.add_option("--lambda", lambda_override, "override the MRF regularization weight");
  app.add_option("--theta-l", theta_l_override, "override the tracklet length threshold");
  app.add_option("--threads", threads_override, "override the worker thread count");
  app.add_option("--seed", seed_override, "override the random seed")
      ->each([&](const std::string&) { has_seed = true; });
  app.add_flag("--dump-config", dump_config, "print all config defaults and exit");

  auto* synth = app.add_subcommand("synth", "render a synthetic scene and its ground truth");
  auto* calibrate =
      app.add_subcommand("calibrate", "metric calibration from matches and laser distances");
  auto* heightmap = app.add_subcommand("heightmap", "dense height-map estimation (MRF + BP)");
  auto* track = app.add_subcommand("track", "temporal filtering into tracklets and detections");
  auto* eval = app.add_subcommand("eval", "precision/recall against ground-truth detections");
  app.require_subcommand(0, 1);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    app.exit(e);
    return 2;
  }

  if (dump_config) {
    headmap::dump_config_defaults(std::cout);
    return 0;
  }
  if (app.get_subcommands().empty()) {
    std::cerr << "error: expected a subcommand (synth, calibrate, heightmap, track, eval)\n";
    return 2;
  }

  try {
    headmap::RunConfig cfg = headmap::config_from_file(config_path);
    if (!std::isnan(lambda_override)) cfg.mrf.lambda = lambda_override;
    if (theta_l_override >= 0) cfg.tracklet.theta_l = theta_l_override;
    if (threads_override > 0) {
      cfg.threads = threads_override;
      cfg.mrf.threads = threads_override;
    }
    if (has_seed) cfg.seed = seed_override;

    if (synth->parsed()) {
      headmap::run_synth(cfg);
    } else if (calibrate->parsed()) {
      headmap::run_calibrate(cfg);
    } else if (heightmap->parsed()) {
      headmap::run_heightmap(cfg);
    } else if (track->parsed()) {
      headmap::run_track(cfg);
    } else if (eval->parsed()) {
      headmap::run_eval(cfg, std::cout);
    }
  } catch (const headmap::config_error& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const headmap::stage_error& e) {
    std::cerr << "stage failure: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "stage failure: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
