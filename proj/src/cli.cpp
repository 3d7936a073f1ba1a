#include "poseforge/cli.hpp"

#include "poseforge/config.hpp"
#include "poseforge/io.hpp"
#include "poseforge/pipeline.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <future>
#include <iostream>

namespace pf::cli {

namespace fs = std::filesystem;

namespace {

struct CommonOptions {
  std::string config_path;
  std::string save_config_path;
  std::vector<std::string> overrides;  // key=value
  int64_t seed = -1;
};

void add_common(CLI::App* cmd, CommonOptions* opts) {
  cmd->add_option("--config", opts->config_path, "pipeline config JSON");
  cmd->add_option("--save-config", opts->save_config_path, "write the effective config");
  cmd->add_option("--set", opts->overrides, "override a config key, key=value");
  cmd->add_option("--seed", opts->seed, "override the config seed");
}

PipelineConfig resolve_config(const CommonOptions& opts) {
  PipelineConfig cfg;
  if (!opts.config_path.empty()) cfg.apply_file(opts.config_path);
  for (const auto& kv : opts.overrides) {
    auto eq = kv.find('=');
    if (eq == std::string::npos) throw DataError("--set expects key=value, got: " + kv);
    cfg.apply_key(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (const char* env = std::getenv("POSE_FORGE_SEED")) cfg.seed = std::strtoull(env, nullptr, 10);
  if (opts.seed >= 0) cfg.seed = static_cast<uint64_t>(opts.seed);
  cfg.validate();
  if (!opts.save_config_path.empty()) cfg.save(opts.save_config_path);
  return cfg;
}

std::string frame_name(int index, const char* suffix) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "frame_%06d%s", index, suffix);
  return buf;
}

RgbdFrame load_frame(const fs::path& dir, int index, const CameraIntrinsics& k) {
  RgbdFrame frame;
  frame.rgb = io::read_ppm(dir / frame_name(index, ".ppm"));
  frame.depth = io::read_pgm16(dir / frame_name(index, ".depth.pgm"));
  frame.mask = io::read_pgm8(dir / frame_name(index, ".mask.pgm"));
  frame.intrinsics = k;
  frame.validate();
  return frame;
}

int count_frames(const fs::path& dir) {
  int n = 0;
  while (fs::exists(dir / frame_name(n, ".ppm"))) ++n;
  return n;
}

struct SequenceData {
  std::vector<RgbdFrame> frames;
  synth::MotionScript script;
};

SequenceData load_sequence(const fs::path& dir, int limit = -1) {
  SequenceData seq;
  seq.script.intrinsics = io::read_intrinsics(dir / "intrinsics.json");
  int n = count_frames(dir);
  if (n == 0) throw DataError("no frames found in " + dir.string());
  if (limit > 0) n = std::min(n, limit);
  for (int i = 0; i < n; ++i) {
    seq.frames.push_back(load_frame(dir, i, seq.script.intrinsics));
    fs::path pose_path = dir / frame_name(i, ".pose.txt");
    if (fs::exists(pose_path)) seq.script.poses.push_back(io::read_pose(pose_path));
  }
  return seq;
}

pipeline::Databases load_databases(const fs::path& dir) {
  pipeline::Databases dbs;
  dbs.class_db = io::read_class_db(dir / "classdb.json");
  dbs.hash_db = io::read_hash_db(dir / "trihash.bin");
  dbs.model_cloud = io::read_cloud_ply(dir / "model_cloud.ply");
  return dbs;
}

// ---- subcommand bodies ----

int cmd_build_db(const std::string& mesh_path, const std::string& out_dir,
                 const PipelineConfig& cfg) {
  synth::TexturedMesh mesh = io::read_mesh_ply(mesh_path);
  fs::create_directories(out_dir);
  pipeline::Databases dbs = pipeline::build_databases(mesh, cfg);

  io::write_class_db(fs::path(out_dir) / "classdb.json", dbs.class_db);
  io::write_hash_db(fs::path(out_dir) / "trihash.bin", dbs.hash_db);
  io::write_cloud_ply(fs::path(out_dir) / "model_cloud.ply", dbs.model_cloud);

  std::cout << "classes: " << dbs.class_db.classes.size()
            << "\ntriangle keys: " << dbs.hash_db.triangles.size()
            << "\nppf keys: " << dbs.hash_db.ppf_templates.size()
            << "\nmodel points: " << dbs.model_cloud.size() << "\n";

  if (dbs.hash_db.triangles.empty()) {
    std::cerr << "warning: fewer than 3 color-pair classes; wrote a PPF-only database\n";
    throw InsufficientClasses("build-db: insufficient classes for semantic triangles");
  }
  return 0;
}

int cmd_estimate(const std::string& rgb_path, const std::string& depth_path,
                 const std::string& mask_path, const std::string& db_dir,
                 const std::string& out_path, const std::string& intrinsics_path,
                 const std::string& overlay_path, const std::string& hypotheses_dump,
                 const PipelineConfig& cfg) {
  CameraIntrinsics k = intrinsics_path.empty() ? cfg.camera : io::read_intrinsics(intrinsics_path);
  RgbdFrame frame;
  frame.rgb = io::read_ppm(rgb_path);
  frame.depth = io::read_pgm16(depth_path);
  frame.mask = io::read_pgm8(mask_path);
  frame.intrinsics = k;
  frame.validate();

  pipeline::Databases dbs = load_databases(db_dir);
  std::vector<reg::PoseHypothesis> hyps;
  pipeline::EstimateResult result;
  try {
    result = pipeline::estimate_frame(frame, dbs, cfg, &hyps);
  } catch (const AlgorithmError& e) {
    std::cerr << "estimation failed: " << e.what() << "\n  hypotheses: " << hyps.size() << "\n";
    throw;
  }
  io::write_pose(out_path, result.pose);
  std::cout << "hypotheses: " << result.hypothesis_count
            << "\ncandidates: " << result.candidates.size()
            << "\nicp iterations: " << result.icp.iterations << "\nicp rms: " << result.icp.rms
            << "\n";

  if (!hypotheses_dump.empty()) {
    std::ofstream f(hypotheses_dump);
    if (!f) throw DataError("cannot write " + hypotheses_dump);
    f << "index,weight,source,feature,tx,ty,tz\n";
    for (size_t i = 0; i < hyps.size(); ++i) {
      const auto& h = hyps[i];
      f << i << ',' << h.weight << ','
        << (h.source == reg::PoseHypothesis::Source::triangle ? "triangle" : "ppf") << ','
        << h.feature_id << ',' << h.pose.translation.x() << ',' << h.pose.translation.y() << ','
        << h.pose.translation.z() << '\n';
    }
  }
  if (!overlay_path.empty())
    io::write_ppm(overlay_path, pipeline::render_overlay(frame, dbs.model_cloud, result.pose));
  return 0;
}

int cmd_track(const std::string& seq_dir, const std::string& db_dir,
              const std::string& init_path, const std::string& out_dir, int stride, bool reinit,
              const PipelineConfig& cfg) {
  SequenceData seq = load_sequence(seq_dir);
  pipeline::Databases dbs = load_databases(db_dir);
  Se3Pose init = io::read_pose(init_path);
  fs::create_directories(out_dir);

  auto run = pipeline::track_sequence(seq.frames, init, dbs, cfg, stride, reinit);
  for (size_t i = 0; i < run.poses.size(); ++i)
    io::write_pose(fs::path(out_dir) / frame_name(run.frame_indices[i], ".pose.txt"),
                   run.poses[i]);

  std::cout << "tracked frames: " << run.poses.size()
            << "\nreinits: " << run.reinit_frames.size() << "\n";
  if (run.lost) {
    std::cerr << "tracking lost at frame " << run.lost_at << "\n";
    throw TrackingLost("track: tracking lost without --reinit");
  }
  return 0;
}

int cmd_synth_shape(uint64_t seed, const std::string& out_dir, const PipelineConfig& cfg) {
  fs::create_directories(out_dir);
  synth::TexturedMesh mesh = synth::generate_shape(seed, cfg.shape_params());
  io::write_mesh_ply(fs::path(out_dir) / "shape.ply", mesh);
  std::cout << "vertices: " << mesh.vertices.size() << "\ntriangles: " << mesh.triangles.size()
            << "\ndiameter: " << mesh.diameter << "\n";
  return 0;
}

int cmd_synth_sequence(const std::string& mesh_path, uint64_t seed, const std::string& out_dir,
                       const PipelineConfig& cfg) {
  synth::TexturedMesh mesh = io::read_mesh_ply(mesh_path);
  fs::create_directories(out_dir);
  synth::Sequence seq = synth::generate_sequence(mesh, cfg.camera, cfg.sequence_params(), seed);
  io::write_intrinsics(fs::path(out_dir) / "intrinsics.json", cfg.camera);
  for (size_t i = 0; i < seq.frames.size(); ++i) {
    int idx = static_cast<int>(i);
    io::write_ppm(fs::path(out_dir) / frame_name(idx, ".ppm"), seq.frames[i].rgb);
    io::write_pgm16(fs::path(out_dir) / frame_name(idx, ".depth.pgm"), seq.frames[i].depth);
    io::write_pgm8(fs::path(out_dir) / frame_name(idx, ".mask.pgm"), seq.frames[i].mask);
    io::write_pose(fs::path(out_dir) / frame_name(idx, ".pose.txt"), seq.script.poses[i]);
  }
  std::cout << "frames: " << seq.frames.size() << "\n";
  return 0;
}

int cmd_eval(const std::string& pose_dir, const std::string& gt_dir,
             const std::string& model_path, const std::string& out_csv,
             const std::string& out_json, int jobs) {
  auto collect = [](const fs::path& dir) {
    std::vector<fs::path> files;
    if (!fs::is_directory(dir)) throw DataError("not a directory: " + dir.string());
    for (const auto& e : fs::directory_iterator(dir)) {
      if (e.path().extension() == ".txt") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    return files;
  };
  auto est_files = collect(pose_dir);
  auto gt_files_all = collect(gt_dir);
  // keep only gt files whose frame name matches an estimated pose
  std::vector<fs::path> gt_files;
  for (const auto& g : gt_files_all) {
    for (const auto& e : est_files)
      if (e.filename() == g.filename()) {
        gt_files.push_back(g);
        break;
      }
  }
  if (gt_files.size() != est_files.size() || est_files.empty())
    throw LengthMismatch("eval: estimated poses do not line up with ground truth");

  synth::TexturedMesh mesh = io::read_mesh_ply(model_path);

  std::vector<metrics::PoseErrorRecord> records(est_files.size());
  auto work = [&](size_t i) {
    Se3Pose est = io::read_pose(est_files[i]);
    Se3Pose gt = io::read_pose(gt_files[i]);
    records[i] = metrics::pose_error_record(est, gt, mesh.vertices, static_cast<int>(i));
  };
  if (jobs > 1) {
    std::vector<std::future<void>> futures;
    std::atomic<size_t> next{0};
    for (int j = 0; j < jobs; ++j)
      futures.push_back(std::async(std::launch::async, [&]() {
        for (size_t i = next++; i < est_files.size(); i = next++) work(i);
      }));
    for (auto& f : futures) f.get();
  } else {
    for (size_t i = 0; i < est_files.size(); ++i) work(i);
  }

  metrics::EvalSummary summary = metrics::summarize(records, mesh.diameter);
  if (!out_csv.empty()) io::write_eval_csv(out_csv, records);
  if (!out_json.empty()) io::write_eval_summary_json(out_json, summary);
  std::cout << "frames: " << summary.frames << "\nadd recall@10%: " << summary.recall
            << "\nadd auc@10%: " << summary.auc << "\nmean add: " << summary.mean_add << "\n";
  return 0;
}

int cmd_ablate(const std::string& seq_dir, const std::string& out_csv, int stride,
               double corrupt_frac, const PipelineConfig& cfg) {
  SequenceData seq = load_sequence(seq_dir);
  if (seq.script.poses.size() != seq.frames.size())
    throw DataError("ablate: sequence lacks ground-truth pose files");
  if (static_cast<int>(seq.frames.size()) < stride + 1)
    throw DataError("ablate: sequence shorter than stride + 1 frames");

  auto records = pipeline::ablate_sequence(seq.frames, seq.script, cfg, stride, corrupt_frac,
                                           cfg.seed);
  std::ofstream f(out_csv);
  if (!f) throw DataError("cannot write " + out_csv);
  f << "pair,epe_raw,epe_filt,rot_raw,rot_filt,trans_raw,trans_filt\n";
  int filt_wins = 0;
  for (const auto& r : records) {
    f << r.pair_index << ',' << r.epe_raw << ',' << r.epe_filt << ',' << r.rot_raw << ','
      << r.rot_filt << ',' << r.trans_raw << ',' << r.trans_filt << '\n';
    if (r.rot_filt <= r.rot_raw && r.trans_filt <= r.trans_raw) ++filt_wins;
  }
  std::cout << "pairs: " << records.size() << "\nfiltered wins: " << filt_wins << "\n";
  return 0;
}

}  // namespace

int run(const std::vector<std::string>& args) {
  CLI::App app{"pose-forge: zero-shot 6D pose estimation and tracking on RGB-D frames"};
  app.require_subcommand(1);

  // build-db
  auto* build = app.add_subcommand("build-db", "build class + triangle hash databases from a mesh");
  std::string mesh_path, out_dir;
  CommonOptions build_opts;
  build->add_option("--mesh", mesh_path, "textured mesh PLY")->required();
  build->add_option("--out", out_dir, "output directory")->required();
  add_common(build, &build_opts);

  // estimate
  auto* estimate = app.add_subcommand("estimate", "single-frame pose estimation");
  std::string rgb_path, depth_path, mask_path, db_dir, pose_out, intr_path, overlay_path,
      hyp_dump;
  CommonOptions est_opts;
  estimate->add_option("--rgb", rgb_path, "color PPM")->required();
  estimate->add_option("--depth", depth_path, "16-bit depth PGM, millimeters")->required();
  estimate->add_option("--mask", mask_path, "object mask PGM")->required();
  estimate->add_option("--db", db_dir, "database directory from build-db")->required();
  estimate->add_option("--out", pose_out, "output pose text file")->required();
  estimate->add_option("--intrinsics", intr_path, "intrinsics JSON (default: config camera)");
  estimate->add_option("--overlay", overlay_path, "write overlay PPM");
  estimate->add_option("--hypotheses-dump", hyp_dump, "write hypothesis CSV");
  add_common(estimate, &est_opts);

  // track
  auto* trackc = app.add_subcommand("track", "track a sequence from an initial pose");
  std::string seq_dir, track_db, init_path, track_out;
  int stride = 1;
  bool reinit = false;
  CommonOptions track_opts;
  trackc->add_option("--seq", seq_dir, "sequence directory")->required();
  trackc->add_option("--db", track_db, "database directory")->required();
  trackc->add_option("--init", init_path, "initial pose text file")->required();
  trackc->add_option("--out", track_out, "output directory for per-frame poses")->required();
  trackc->add_option("--stride", stride, "process every N-th frame");
  trackc->add_flag("--reinit", reinit, "re-run estimation when tracking is lost");
  add_common(trackc, &track_opts);

  // synth
  auto* synthc = app.add_subcommand("synth", "generate synthetic shapes and sequences");
  synthc->require_subcommand(1);
  auto* shape = synthc->add_subcommand("shape", "generate a textured mesh");
  std::string shape_out;
  CommonOptions shape_opts;
  shape->add_option("--out", shape_out, "output directory")->required();
  add_common(shape, &shape_opts);  // --seed doubles as the shape seed

  auto* seqc = synthc->add_subcommand("sequence", "render a motion sequence for a mesh");
  std::string seq_mesh, seq_out;
  CommonOptions seq_opts;
  seqc->add_option("--mesh", seq_mesh, "textured mesh PLY")->required();
  seqc->add_option("--out", seq_out, "output directory")->required();
  add_common(seqc, &seq_opts);  // --seed doubles as the trajectory seed

  // eval
  auto* evalc = app.add_subcommand("eval", "compare estimated poses against ground truth");
  std::string eval_poses, eval_gt, eval_model, eval_csv, eval_json;
  int jobs = 1;
  evalc->add_option("--poses", eval_poses, "directory of estimated pose files")->required();
  evalc->add_option("--gt", eval_gt, "directory of ground-truth pose files")->required();
  evalc->add_option("--model", eval_model, "model mesh PLY")->required();
  evalc->add_option("--out-csv", eval_csv, "per-frame error CSV");
  evalc->add_option("--out-json", eval_json, "summary JSON");
  evalc->add_option("--jobs", jobs, "parallel workers");

  // ablate
  auto* ablate = app.add_subcommand("ablate", "filtered vs unfiltered raw-estimator comparison");
  std::string ab_seq, ab_csv;
  int ab_stride = 5;
  double ab_corrupt = 0.0;
  CommonOptions ab_opts;
  ablate->add_option("--seq", ab_seq, "sequence directory with ground truth")->required();
  ablate->add_option("--out", ab_csv, "comparison CSV")->required();
  ablate->add_option("--stride", ab_stride, "frame pair stride");
  ablate->add_option("--corrupt-frac", ab_corrupt, "fraction of matches deliberately corrupted");
  add_common(ablate, &ab_opts);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (build->parsed()) return cmd_build_db(mesh_path, out_dir, resolve_config(build_opts));
    if (estimate->parsed())
      return cmd_estimate(rgb_path, depth_path, mask_path, db_dir, pose_out, intr_path,
                          overlay_path, hyp_dump, resolve_config(est_opts));
    if (trackc->parsed())
      return cmd_track(seq_dir, track_db, init_path, track_out, stride, reinit,
                       resolve_config(track_opts));
    if (shape->parsed()) {
      PipelineConfig cfg = resolve_config(shape_opts);
      return cmd_synth_shape(cfg.seed, shape_out, cfg);
    }
    if (seqc->parsed()) {
      PipelineConfig cfg = resolve_config(seq_opts);
      return cmd_synth_sequence(seq_mesh, cfg.seed, seq_out, cfg);
    }
    if (evalc->parsed()) return cmd_eval(eval_poses, eval_gt, eval_model, eval_csv, eval_json, jobs);
    if (ablate->parsed())
      return cmd_ablate(ab_seq, ab_csv, ab_stride, ab_corrupt, resolve_config(ab_opts));
  } catch (const AlgorithmError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}

}  // namespace pf::cli
