#include <atomic>
#include <csignal>
#include <cstdio>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "mba/error.hpp"
#include "mba/evaluation.hpp"
#include "mba/io.hpp"
#include "mba/ransac.hpp"
#include "mba/relocalization.hpp"
#include "mba/solver.hpp"
#include "mba/synthetic.hpp"

using namespace mba;
using nlohmann::json;

namespace {

std::atomic<bool> g_interrupted{false};

extern "C" void on_sigint(int) { g_interrupted.store(true); }

// Exit code 1: usage, IO and format problems. Exit code 2: the algorithm ran
// but failed.
int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument:
    case ErrorCode::kBadMagic:
    case ErrorCode::kTruncatedFile:
    case ErrorCode::kTrailingData:
    case ErrorCode::kUnsupportedVersion:
    case ErrorCode::kDimensionOverflow:
    case ErrorCode::kConfidenceOutOfRange:
    case ErrorCode::kIoNotFound:
    case ErrorCode::kIoError:
    case ErrorCode::kParseError:
      return 1;
    default:
      return 2;
  }
}

void report(std::string_view code, const std::string& message) {
  std::cerr << "error[" << code << "]: " << message << "\n";
}

struct SharedOptions {
  std::string loss = "mba";
  int kappa = 200;
  double nu = 0.15;
  double chi = 0.2;
  double tau_max = 20.0;
  double tau_bar_max = 10.0;
  int bins = 100;
  int iters_coarse = 25000;
  int iters_fine = 25000;
  double lr = 1e-3;
  double intrinsics_lr_mult = 50.0;
  int workers = 1;
  std::uint64_t seed = 0;
  int progress = 0;
};

void add_shared_flags(CLI::App* cmd, SharedOptions& o) {
  cmd->add_option("--loss", o.loss, "Loss: mba, soft_l1, cauchy, tukey or l2")
      ->check(CLI::IsMember({"mba", "soft_l1", "cauchy", "tukey", "l2"}))
      ->capture_default_str();
  cmd->add_option("--kappa", o.kappa, "Sampled records per directed pair")->capture_default_str();
  cmd->add_option("--nu", o.nu, "Co-visibility threshold for pose-graph edges")->capture_default_str();
  cmd->add_option("--chi", o.chi, "Match confidence threshold")->capture_default_str();
  cmd->add_option("--tau-max", o.tau_max, "Fine-stage residual threshold (px)")->capture_default_str();
  cmd->add_option("--tau-bar-max", o.tau_bar_max, "Coarse-stage threshold (log px)")->capture_default_str();
  cmd->add_option("--bins", o.bins, "Histogram bins")->capture_default_str();
  cmd->add_option("--iters-coarse", o.iters_coarse, "Coarse-stage iterations")->capture_default_str();
  cmd->add_option("--iters-fine", o.iters_fine, "Fine-stage iterations")->capture_default_str();
  cmd->add_option("--lr", o.lr, "Learning rate")->capture_default_str();
  cmd->add_option("--intrinsics-lr-mult", o.intrinsics_lr_mult, "Learning-rate factor for focal lengths")
      ->capture_default_str();
  cmd->add_option("--workers", o.workers, "Worker threads (MBA_WORKERS overrides)")->capture_default_str();
  cmd->add_option("--seed", o.seed, "Random seed")->capture_default_str();
  cmd->add_option("--progress", o.progress, "Print the loss to stderr every N iterations (0: off)")
      ->capture_default_str();
}

OptimizerConfig optimizer_from(const SharedOptions& o) {
  OptimizerConfig c;
  c.iterations_coarse = o.iters_coarse;
  c.iterations_fine = o.iters_fine;
  c.lr = o.lr;
  c.intrinsics_lr_multiplier = o.intrinsics_lr_mult;
  c.tau_max_fine = o.tau_max;
  c.tau_bar_max_coarse = o.tau_bar_max;
  c.bin_count = o.bins;
  c.loss_kind = parse_loss_kind(o.loss);
  c.seed = o.seed;
  c.workers = resolve_worker_count(o.workers);
  c.progress_interval = o.progress > 0 ? o.progress : 100;
  c.validate();
  return c;
}

json config_echo(const SharedOptions& o, int workers) {
  return {{"loss", o.loss},       {"kappa", o.kappa},
          {"nu", o.nu},           {"chi", o.chi},
          {"tau_max", o.tau_max}, {"tau_bar_max", o.tau_bar_max},
          {"bins", o.bins},       {"iters_coarse", o.iters_coarse},
          {"iters_fine", o.iters_fine}, {"lr", o.lr},
          {"intrinsics_lr_mult", o.intrinsics_lr_mult}, {"seed", o.seed},
          {"workers", workers}};
}

StageControl control_from(const SharedOptions& o) {
  StageControl control;
  control.cancel = &g_interrupted;
  if (o.progress > 0) {
    control.progress = [](const ProgressEvent& e) {
      std::cerr << e.stage << " " << e.iteration << " loss " << std::setprecision(6) << e.loss << " inliers "
                << e.inlier_fraction << "\n";
    };
  }
  return control;
}

json stage_json(const StageReport& r) {
  return {{"iterations", r.iterations_run},
          {"initial_loss", r.initial_loss},
          {"final_loss", r.final_loss},
          {"cancelled", r.cancelled}};
}

json histogram_summary(const ResidualHistogram& h) {
  return {{"tau_max", h.tau_max()},
          {"bins", h.bin_count()},
          {"total", h.total()},
          {"below_tau_max", h.count_below_tau_max()},
          {"inlier_fraction", h.total() ? static_cast<double>(h.count_below_tau_max()) / h.total() : 0.0}};
}

CameraIntrinsics intrinsics_of(const ManifestFrame& f) {
  CameraIntrinsics k;
  k.focal = f.intrinsics->focal;
  k.principal_point = Eigen::Vector2d(f.intrinsics->cx, f.intrinsics->cy);
  k.width = f.width;
  k.height = f.height;
  return k;
}

SfmFrameInput load_frame(const SceneManifest& m, const ManifestFrame& f) {
  SfmFrameInput in;
  in.frame_id = f.frame_id;
  in.width = f.width;
  in.height = f.height;
  in.depth = read_depth(m.resolve(f.depth_path));
  if (in.depth.width != f.width || in.depth.height != f.height) {
    throw Error(ErrorCode::kParseError, "depth map of frame " + std::to_string(f.frame_id) +
                                            " does not match the manifest image size");
  }
  if (f.pointmap_path) {
    in.pointmap = read_pointmap(m.resolve(*f.pointmap_path));
    if (in.pointmap->width != f.width || in.pointmap->height != f.height) {
      throw Error(ErrorCode::kParseError, "pointmap of frame " + std::to_string(f.frame_id) +
                                              " does not match the manifest image size");
    }
  }
  if (f.intrinsics) in.intrinsics = intrinsics_of(f);
  return in;
}

std::vector<CorrespondenceSet> load_pairs(const SceneManifest& m) {
  std::vector<CorrespondenceSet> out;
  for (const ManifestPair& p : m.pairs) {
    CorrespondenceSet set = read_correspondences(m.resolve(p.correspondence_path));
    if (set.frame_i != p.i || set.frame_j != p.j) {
      throw Error(ErrorCode::kParseError, p.correspondence_path + ": frame ids do not match the manifest pair");
    }
    out.push_back(std::move(set));
  }
  return out;
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::kIoError, "cannot create " + dir + ": " + ec.message());
}

// ---------------------------------------------------------------- sfm

struct SfmOptions {
  std::string manifest;
  std::string out;
  bool shared_intrinsics = false;
  int ply_stride = 0;
  SharedOptions shared;
};

int run_sfm_command(const SfmOptions& o) {
  const SceneManifest manifest = read_manifest(o.manifest);
  SfmInputs inputs;
  inputs.shared_intrinsics = o.shared_intrinsics || manifest.shared_intrinsics;
  for (const ManifestFrame& f : manifest.frames) inputs.frames.push_back(load_frame(manifest, f));
  inputs.correspondences = load_pairs(manifest);

  SfmConfig cfg;
  cfg.optimizer = optimizer_from(o.shared);
  cfg.kappa = o.shared.kappa;
  cfg.nu = o.shared.nu;
  cfg.chi = o.shared.chi;
  ensure_dir(o.out);

  const SfmResult r = run_sfm(inputs, cfg, control_from(o.shared));

  const std::map<int, FrameState> initial = initial_frame_states(inputs, cfg);
  ResultDocument doc;
  for (const SfmFrameInput& f : inputs.frames) {
    const auto it = r.states.find(f.frame_id);
    doc.frames.push_back(it != r.states.end() ? ResultFrame::from_state(it->second, true)
                                              : ResultFrame::from_state(initial.at(f.frame_id), false));
  }
  json& meta = doc.metadata;
  meta["command"] = "sfm";
  meta["config"] = config_echo(o.shared, cfg.optimizer.workers);
  meta["shared_intrinsics"] = inputs.shared_intrinsics;
  meta["root"] = r.root ? json(*r.root) : json(nullptr);
  meta["registered"] = r.registered.size();
  meta["edges"] = r.edge_count;
  meta["records"] = r.record_count;
  meta["coarse"] = stage_json(r.coarse);
  meta["fine"] = stage_json(r.fine);
  meta["cancelled"] = r.cancelled;
  meta["warnings"] = r.warnings;
  meta["errors"] = r.errors;
  if (r.final_histogram) meta["residual_histogram"] = histogram_summary(*r.final_histogram);
  write_result(std::filesystem::path(o.out) / "result.json", doc);
  if (r.final_histogram) write_histogram_csv(std::filesystem::path(o.out) / "residual_histogram.csv", *r.final_histogram);
  if (o.ply_stride > 0) {
    std::map<int, DepthMap> depths;
    for (const SfmFrameInput& f : inputs.frames) depths[f.frame_id] = f.depth;
    export_ply(std::filesystem::path(o.out) / "points.ply", r.states, depths, o.ply_stride);
  }

  for (const std::string& w : r.warnings) std::cerr << "warning: " << w << "\n";
  for (const std::string& e : r.errors) std::cerr << "note: " << e << "\n";
  std::cout << "registered " << r.registered.size() << " / " << inputs.frames.size() << " frames, " << r.edge_count
            << " edges\n";
  if (r.final_histogram) {
    std::cout << "inlier fraction @" << o.shared.tau_max << "px: "
              << histogram_summary(*r.final_histogram)["inlier_fraction"].get<double>() << "\n";
  }
  if (r.cancelled) {
    report("CANCELLED", "interrupted; partial result written to " + o.out);
    return 2;
  }
  if (r.registered.size() < 2) {
    report("REGISTRATION_FAILURE", "no frame registered beyond the root");
    return 2;
  }
  return 0;
}

// ---------------------------------------------------------------- reloc

struct RelocOptions {
  std::string map;
  std::string manifest;
  std::string out;
  bool no_query_query = false;
  SharedOptions shared;
};

int run_reloc_command(const RelocOptions& o) {
  const ResultDocument map_doc = read_result(o.map);
  const SceneManifest manifest = read_manifest(o.manifest);

  RelocProblem problem;
  for (const ResultFrame& f : map_doc.frames) {
    if (!f.registered) continue;
    FrameState s = f.to_state();
    s.trainable = Trainable::none();
    problem.map_frames[f.frame_id] = s;
  }
  if (problem.map_frames.empty()) throw Error(ErrorCode::kInvalidArgument, "the map has no registered frame");
  for (const ManifestFrame& f : manifest.frames) {
    SfmFrameInput in = load_frame(manifest, f);
    if (problem.map_frames.count(f.frame_id)) {
      problem.map_depths[f.frame_id] = std::move(in.depth);
      continue;
    }
    RelocQuery q;
    q.frame_id = f.frame_id;
    if (in.intrinsics) {
      q.intrinsics = *in.intrinsics;
    } else if (in.pointmap) {
      q.intrinsics = CameraIntrinsics::centered(calibrate_from_pointmap(*in.pointmap), f.width, f.height);
    } else {
      throw Error(ErrorCode::kInvalidArgument,
                  "query " + std::to_string(f.frame_id) + " needs intrinsics or a pointmap in the manifest");
    }
    q.depth = std::move(in.depth);
    problem.queries.push_back(std::move(q));
  }
  problem.correspondences = load_pairs(manifest);

  RelocConfig cfg;
  cfg.optimizer = optimizer_from(o.shared);
  cfg.kappa = o.shared.kappa;
  cfg.nu = o.shared.nu;
  cfg.chi = o.shared.chi;
  cfg.query_query_edges = !o.no_query_query;
  ensure_dir(o.out);

  const RelocResult r = relocalize(problem, cfg, control_from(o.shared));

  ResultDocument doc;
  int succeeded = 0;
  for (const ResultFrame& f : map_doc.frames) {
    if (f.registered) doc.frames.push_back(f);
  }
  for (const RelocQuery& q : problem.queries) {
    const auto it = r.queries.find(q.frame_id);
    const bool ok = it != r.queries.end() && r.success.at(q.frame_id);
    succeeded += ok;
    FrameState s;
    s.frame_id = q.frame_id;
    s.intrinsics = q.intrinsics;
    doc.frames.push_back(ResultFrame::from_state(it != r.queries.end() ? it->second : s, ok));
  }
  json& meta = doc.metadata;
  meta["command"] = "reloc";
  meta["config"] = config_echo(o.shared, cfg.optimizer.workers);
  meta["query_query_edges"] = cfg.query_query_edges;
  meta["queries"] = problem.queries.size();
  meta["succeeded"] = succeeded;
  meta["unreachable"] = r.unreachable;
  meta["cancelled"] = r.cancelled;
  meta["warnings"] = r.warnings;
  meta["errors"] = r.errors;
  write_result(std::filesystem::path(o.out) / "result.json", doc);

  for (const std::string& e : r.errors) std::cerr << "note: " << e << "\n";
  std::cout << "relocalized " << succeeded << " / " << problem.queries.size() << " queries\n";
  if (r.cancelled) {
    report("CANCELLED", "interrupted; partial result written to " + o.out);
    return 2;
  }
  if (succeeded == 0) {
    report(r.unreachable.size() == problem.queries.size() ? "QUERY_UNREACHABLE" : "REGISTRATION_FAILURE",
           "no query was relocalized");
    return 2;
  }
  return 0;
}

// ---------------------------------------------------------------- ransac2v

struct RansacOptions {
  std::string corrs;
  double fx = 0.0;
  double cx = 0.0;
  double cy = 0.0;
  int hypotheses = 64;
  double tau_max = 0.0;
  std::vector<double> grid;
  int thresholds = 100;
  std::uint64_t seed = 0;
  bool eight_point = false;
};

int run_ransac_command(const RansacOptions& o) {
  if (!(o.fx > 0.0)) throw Error(ErrorCode::kInvalidArgument, "--fx must be positive");
  const CorrespondenceSet set = read_correspondences(o.corrs);
  std::vector<Eigen::Vector2d> x1, x2;
  const Eigen::Vector2d c(o.cx, o.cy);
  for (const Correspondence& m : set.matches) {
    x1.push_back((m.src_pixel - c) / o.fx);
    x2.push_back((m.dst_pixel - c) / o.fx);
  }
  MarginalizedRansacOptions opt;
  opt.hypotheses = o.hypotheses;
  opt.threshold_count = o.thresholds;
  opt.seed = o.seed;
  opt.solver = o.eight_point ? MinimalSolver::kEightPoint : MinimalSolver::kFivePoint;
  // Thresholds are distances in normalized coordinates; Sampson residuals are squared.
  const double tau = o.tau_max > 0.0 ? o.tau_max : 3.0 / o.fx;
  opt.tau_max = tau * tau;
  for (const double t : o.grid) opt.thresholds.push_back(t * t);

  const EssentialHypothesis h = estimate_essential_marginalized(x1, x2, opt);
  const auto [pose, in_front] = select_pose(h.essential, x1, x2, &h.inlier_mask);
  const Eigen::IOFormat fmt(Eigen::FullPrecision, 0, " ", "\n", "  ", "");
  std::cout << std::setprecision(17);
  std::cout << "E\n" << h.essential.format(fmt) << "\n";
  std::cout << "R\n" << pose.rotation.format(fmt) << "\n";
  std::cout << "t\n" << pose.translation.transpose().format(fmt) << "\n";
  std::cout << "inliers " << h.inlier_count << " / " << x1.size() << "\n";
  std::cout << "score " << h.score << "\n";
  std::cout << "in_front " << in_front << "\n";
  return 0;
}

// ---------------------------------------------------------------- synth

int run_synth_command(const std::string& config_path, const std::string& out) {
  const std::vector<unsigned char> bytes = read_file_bytes(config_path);
  json j;
  try {
    j = json::parse(bytes.begin(), bytes.end());
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kParseError, config_path + ": " + e.what());
  }
  const SyntheticScene scene = generate_scene(synthetic_config_from_json(j));
  write_scene(scene, out);
  std::cout << "wrote " << scene.truth.size() << " frames and " << scene.correspondences.size()
            << " match files to " << out << "\n";
  return 0;
}

// ---------------------------------------------------------------- eval

std::map<int, FrameState> registered_states(const ResultDocument& doc) {
  std::map<int, FrameState> out;
  for (const ResultFrame& f : doc.frames) {
    if (f.registered) out[f.frame_id] = f.to_state();
  }
  return out;
}

int run_eval_command(const std::string& est_path, const std::string& gt_path, double tau, bool as_json) {
  const auto est = registered_states(read_result(est_path));
  const auto gt = registered_states(read_result(gt_path));
  std::map<int, FrameState> common;
  for (const auto& [id, s] : est) {
    if (gt.count(id)) common[id] = s;
  }
  const MetricReport m = evaluate_poses(common, gt, tau);
  if (as_json) {
    json j = {{"frames_total", m.frames_total},
              {"frames_registered", m.frames_registered},
              {"registration_rate", m.registration_rate},
              {"pairs", m.pairs},
              {"tau_deg", m.tau_deg},
              {"rra", m.rra},
              {"rta", m.rta},
              {"acc", m.acc},
              {"auc", m.auc},
              {"median_rotation_deg", m.median_rotation_deg},
              {"median_translation_deg", m.median_translation_deg}};
    j["ate"] = m.has_ate ? json(m.ate) : json(nullptr);
    j["ate_degenerate"] = m.ate_degenerate;
    std::cout << j.dump(2) << "\n";
    return 0;
  }
  std::ostringstream t;
  t << std::fixed << std::setprecision(1);
  t << "frames      " << m.frames_registered << " / " << m.frames_total << " (" << m.registration_rate << "%)\n";
  t << "pairs       " << m.pairs << "\n";
  t << "RRA@" << tau << "  " << m.rra << "\n";
  t << "RTA@" << tau << "  " << m.rta << "\n";
  t << "ACC@" << tau << "  " << m.acc << "\n";
  t << std::setprecision(4);
  t << "AUC@" << std::setprecision(1) << tau << std::setprecision(4) << "  " << m.auc << "\n";
  t << "median rot  " << m.median_rotation_deg << " deg\n";
  t << "median dir  " << m.median_translation_deg << " deg\n";
  if (m.has_ate) {
    t << "ATE         " << std::setprecision(6) << m.ate << (m.ate_degenerate ? " (degenerate trajectory)" : "")
      << "\n";
  }
  std::cout << t.str();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Marginalized bundle adjustment: structure from motion, relocalization and two-view RANSAC"};
  app.require_subcommand(1);

  SfmOptions sfm;
  CLI::App* sfm_cmd = app.add_subcommand("sfm", "Register frames from depth maps and matches");
  sfm_cmd->add_option("--manifest", sfm.manifest, "Scene manifest (JSON)")->required();
  sfm_cmd->add_option("--out", sfm.out, "Output directory")->required();
  sfm_cmd->add_flag("--shared-intrinsics", sfm.shared_intrinsics, "One focal length for every frame");
  sfm_cmd->add_option("--ply", sfm.ply_stride, "Also export points.ply, sampling every N-th pixel");
  add_shared_flags(sfm_cmd, sfm.shared);

  RelocOptions reloc;
  reloc.shared.iters_coarse = 5000;
  reloc.shared.iters_fine = 5000;
  CLI::App* reloc_cmd = app.add_subcommand("reloc", "Register query frames against a fixed map");
  reloc_cmd->add_option("--map", reloc.map, "Map result file from sfm")->required();
  reloc_cmd->add_option("--manifest", reloc.manifest, "Manifest with map and query frames")->required();
  reloc_cmd->add_option("--out", reloc.out, "Output directory")->required();
  reloc_cmd->add_flag("--no-query-query", reloc.no_query_query, "Drop query-to-query edges");
  add_shared_flags(reloc_cmd, reloc.shared);

  RansacOptions ransac;
  CLI::App* ransac_cmd = app.add_subcommand("ransac2v", "Essential matrix from one match file");
  ransac_cmd->add_option("--corrs", ransac.corrs, "Match file (MBAC)")->required();
  ransac_cmd->add_option("--fx", ransac.fx, "Focal length (px)")->required();
  ransac_cmd->add_option("--cx", ransac.cx, "Principal point x (px)")->required();
  ransac_cmd->add_option("--cy", ransac.cy, "Principal point y (px)")->required();
  ransac_cmd->add_option("--hypotheses", ransac.hypotheses, "Minimal samples")->capture_default_str();
  ransac_cmd->add_option("--tau-max", ransac.tau_max, "Largest threshold, normalized units (default 3 px / fx)");
  ransac_cmd->add_option("--grid", ransac.grid, "Explicit thresholds, normalized units")->delimiter(',');
  ransac_cmd->add_option("--thresholds", ransac.thresholds, "Grid size T for the uniform grid")
      ->capture_default_str();
  ransac_cmd->add_flag("--eight-point", ransac.eight_point, "Use the linear eight-point solver");
  ransac_cmd->add_option("--seed", ransac.seed, "Random seed")->capture_default_str();

  std::string synth_config, synth_out;
  CLI::App* synth_cmd = app.add_subcommand("synth", "Write a synthetic scene with ground truth");
  synth_cmd->add_option("--config", synth_config, "Scene config (JSON)")->required();
  synth_cmd->add_option("--out", synth_out, "Output directory")->required();

  std::string est_path, gt_path;
  double tau = 5.0;
  bool as_json = false;
  CLI::App* eval_cmd = app.add_subcommand("eval", "Compare a result with ground truth");
  eval_cmd->add_option("--est", est_path, "Estimated result file")->required();
  eval_cmd->add_option("--gt", gt_path, "Ground-truth result file")->required();
  eval_cmd->add_option("--tau", tau, "Angular threshold (deg)")->capture_default_str();
  eval_cmd->add_flag("--json", as_json, "Machine-readable output");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    report("USAGE", e.what());
    return 1;
  }

  std::signal(SIGINT, on_sigint);
  try {
    if (*sfm_cmd) return run_sfm_command(sfm);
    if (*reloc_cmd) return run_reloc_command(reloc);
    if (*ransac_cmd) return run_ransac_command(ransac);
    if (*synth_cmd) return run_synth_command(synth_config, synth_out);
    if (*eval_cmd) return run_eval_command(est_path, gt_path, tau, as_json);
  } catch (const Error& e) {
    report(error_code_name(e.code()), e.what());
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    report("INTERNAL", e.what());
    return 2;
  }
  return 1;
}
