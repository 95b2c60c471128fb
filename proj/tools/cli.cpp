#include "cli.hpp"

#include "tubenerf/checkpoint.hpp"
#include "tubenerf/dataset.hpp"
#include "tubenerf/densify.hpp"
#include "tubenerf/metrics.hpp"
#include "tubenerf/segmentation.hpp"
#include "tubenerf/trainer.hpp"
#include "tubenerf/version.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

namespace tubenerf::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json stamp() { return {{"version", std::string(version())}, {"git", std::string(git_revision())}}; }

void write_summary(const fs::path& out_dir, const std::string& command, const std::vector<std::string>& args,
                   json body) {
  fs::create_directories(out_dir);
  body["command"] = command;
  body["argv"] = args;
  body["build"] = stamp();
  std::ofstream out(out_dir / (command + "_summary.json"));
  if (!out) throw DataError("cannot write summary into " + out_dir.string());
  out << body.dump(2) << '\n';
}

Dataset open_dataset(const fs::path& dir) {
  try {
    return load_dataset(dir);
  } catch (const std::exception& e) {
    throw DataError(std::string("dataset: ") + e.what());
  }
}

json read_json_file(const fs::path& path) {
  if (path.extension() == ".toml") throw UsageError("TOML configs are not supported; use JSON: " + path.string());
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open config " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw UsageError("config " + path.string() + ": " + e.what());
  }
}

/// --config, else $TUBENERF_CONFIG, else built-in defaults.
TrainConfig load_train_config(const std::string& flag) {
  std::string path = flag;
  if (path.empty()) {
    if (const char* env = std::getenv(kConfigEnv)) path = env;
  }
  if (path.empty()) return {};
  const json j = read_json_file(path);
  try {
    return train_config_from_json(j.contains("train") ? j.at("train") : j);
  } catch (const std::exception& e) {
    throw UsageError("config " + path + ": " + e.what());
  }
}

std::vector<std::size_t> frames_from_manifest(const json& manifest, const std::string& key) {
  if (!manifest.contains("split")) throw DataError("manifest has no split");
  return manifest.at("split").at(key).get<std::vector<std::size_t>>();
}

TrainedModel open_model(const fs::path& path, int jobs) {
  const fs::path manifest = fs::is_directory(path) ? path / "manifest.json" : path;
  try {
    TrainedModel m = TrainedModel::load(manifest);
    m.set_jobs(jobs);
    return m;
  } catch (const std::exception& e) {
    throw DataError(std::string("model: ") + e.what());
  }
}

std::size_t frame_position(const Dataset& data, std::size_t id) {
  for (std::size_t i = 0; i < data.frames.size(); ++i) {
    if (data.frames[i].id == id) return i;
  }
  throw DataError("dataset has no frame " + frame_name(id));
}

// --- subcommands -------------------------------------------------------------

struct GenData {
  std::string preset = "curved-tube";
  std::string phantom_config;
  int frames = 0;
  int width = 0;
  int height = 0;
  std::string out;
};

void gen_data(const GenData& o, int jobs, const std::vector<std::string>& args) {
  TubePhantomConfig cfg;
  try {
    cfg = TubePhantomConfig::preset_named(o.preset);
    if (!o.phantom_config.empty()) from_json(read_json_file(o.phantom_config), cfg);
    if (o.frames > 0) cfg.frame_count = o.frames;
    if (o.width > 0) cfg.width = o.width;
    if (o.height > 0) cfg.height = o.height;
    cfg.validate();
  } catch (const UsageError&) {
    throw;
  } catch (const std::exception& e) {
    throw UsageError(e.what());
  }
  Dataset data;
  try {
    data = generate_phantom(cfg, jobs);
  } catch (const std::exception& e) {
    throw DataError(std::string("phantom: ") + e.what());
  }
  save_dataset(o.out, data);
  json body;
  body["config"] = cfg;
  body["frames"] = data.frames.size();
  body["intrinsics"] = {{"width", data.intrinsics.width}, {"height", data.intrinsics.height},
                        {"fx", data.intrinsics.fx}, {"fy", data.intrinsics.fy},
                        {"cx", data.intrinsics.cx}, {"cy", data.intrinsics.cy}};
  write_summary(o.out, "gen-data", args, body);
}

struct DivideOpts {
  std::string dataset;
  std::string out;
  std::string config;
};

void divide_cmd(const DivideOpts& o, const std::vector<std::string>& args) {
  const TrainConfig cfg = load_train_config(o.config);
  const Dataset data = open_dataset(o.dataset);
  const Trajectory traj = trajectory_of(data);
  const Division d = divide(traj, cfg.divide);
  const json j = division_to_json(d, traj, cfg.divide);
  fs::create_directories(o.out);
  std::ofstream(fs::path(o.out) / "blocks.json") << j.dump(2) << '\n';
  write_summary(o.out, "divide", args, {{"config", cfg.divide}, {"blocks", d.blocks.size()}});
}

struct TrainOpts {
  std::string dataset;
  std::string out;
  std::string config;
  std::optional<int> views;
  std::optional<int> stages;
  std::optional<std::uint64_t> seed;
  std::optional<long> iterations;
  bool single_block = false;
  bool verbose = false;
};

void train_cmd(const TrainOpts& o, int jobs, const std::vector<std::string>& args) {
  TrainConfig cfg = load_train_config(o.config);
  if (o.views) cfg.views = *o.views;
  if (o.stages) cfg.stages = *o.stages;
  if (o.seed) cfg.seed = *o.seed;
  if (o.iterations) cfg.iterations_per_stage = *o.iterations;
  if (o.single_block) cfg.divide_blocks = false;
  cfg.jobs = jobs;
  try {
    cfg.validate();
  } catch (const std::exception& e) {
    throw UsageError(e.what());
  }
  const Dataset data = open_dataset(o.dataset);
  ProgressFn progress;
  if (o.verbose) {
    progress = [](std::size_t block, const IterationRecord& r) {
      if (r.iteration % 100 == 0) {
        std::fprintf(stderr, "block %zu stage %d iter %ld loss %.6g\n", block, r.stage, r.iteration, r.total);
      }
    };
  }
  const TrainAllResult res = train_all(data, cfg, o.out, progress);
  json blocks = json::array();
  for (const auto& b : res.blocks) {
    json e = {{"block", b.block}, {"ok", b.ok}, {"frames", b.frames.size()}};
    if (!b.history.empty()) e["final_loss"] = b.history.back().total;
    if (!b.ok) e["error"] = b.error;
    blocks.push_back(e);
  }
  write_summary(o.out, "train", args, {{"config", cfg}, {"blocks", blocks}});
  for (const auto& b : res.blocks) {
    if (!b.ok) {
      if (b.error.find("non-finite") != std::string::npos) throw std::domain_error(b.error);
      throw DataError("block " + std::to_string(b.block) + ": " + b.error);
    }
  }
}

struct RenderOpts {
  std::string model;
  std::string dataset;
  std::string out;
  std::vector<std::size_t> frames;
};

void render_cmd(const RenderOpts& o, int jobs, const std::vector<std::string>& args) {
  const TrainedModel model = open_model(o.model, jobs);
  const Dataset data = open_dataset(o.dataset);
  std::vector<std::size_t> positions;
  if (o.frames.empty()) {
    positions = frames_from_manifest(model.manifest(), "test");
  } else {
    for (const auto id : o.frames) positions.push_back(frame_position(data, id));
  }
  const fs::path out(o.out);
  fs::create_directories(out / "rgb");
  fs::create_directories(out / "depth");
  json rendered = json::array();
  for (const auto p : positions) {
    const Frame& f = data.frames[p];
    BlockSelection sel;
    const RenderedImage img = model.render(f.pose, data.intrinsics, &sel);
    const std::string name = frame_name(f.id);
    write_png_rgb(out / "rgb" / (name + ".png"), img.rgb);
    write_pfm(out / "depth" / (name + ".pfm"), img.depth);
    rendered.push_back({{"frame", f.id}, {"blocks", sel.blocks}, {"weights", sel.weights}, {"fallback", sel.fallback}});
  }
  write_summary(out, "render", args, {{"render", model.render_config()}, {"frames", rendered}});
}

struct EvalOpts {
  std::string model;
  std::string dataset;
  std::string out;
  std::string frames = "test";
};

void eval_cmd(const EvalOpts& o, int jobs, const std::vector<std::string>& args) {
  const TrainedModel model = open_model(o.model, jobs);
  const Dataset data = open_dataset(o.dataset);
  if (o.frames != "test" && o.frames != "train") throw UsageError("--frames must be test or train");
  const auto positions = frames_from_manifest(model.manifest(), o.frames);
  if (positions.empty()) throw DataError("no " + o.frames + " frames to evaluate");
  const json hash_source = model.manifest().value("train_config", json());
  const EvalReport report = evaluate(model, data, positions, hash_source);
  const fs::path out(o.out);
  fs::create_directories(out);
  std::ofstream(out / "report.json") << report_to_json(report).dump(2) << '\n';
  write_report_csv(out / "report.csv", report);
  write_summary(out, "eval", args,
                {{"frames", o.frames},
                 {"mean_psnr", report.mean_psnr},
                 {"mean_ssim", report.mean_ssim},
                 {"mean_ms_ssim", report.mean_ms_ssim},
                 {"mean_depth_mse", report.mean_depth_mse},
                 {"config_hash", report.config_hash}});
}

struct WarpOpts {
  std::string dataset;
  std::string out;
  std::size_t frame = 0;
  std::size_t to_frame = 0;
};

void warp_cmd(const WarpOpts& o, const std::vector<std::string>& args) {
  const Dataset data = open_dataset(o.dataset);
  const Frame& src = data.frames[frame_position(data, o.frame)];
  const Frame& dst = data.frames[frame_position(data, o.to_frame)];
  const PseudoLabel label = warp(src.rgb, src.depth, src.pose, dst.pose, data.intrinsics);
  const fs::path out(o.out);
  fs::create_directories(out);
  const auto& K = data.intrinsics;
  write_png_rgb(out / "pseudo_rgb.png", label.rgb);
  write_pfm(out / "pseudo_depth.pfm", label.depth);
  write_png_mask(out / "mask.png", label.valid, K.width, K.height);
  write_png_rgb(out / "target_rgb.png", dst.rgb);
  double err = 0.0;
  for (int y = 0; y < K.height; ++y) {
    for (int x = 0; x < K.width; ++x) {
      if (!label.valid[static_cast<std::size_t>(y) * K.width + x]) continue;
      for (int c = 0; c < 3; ++c) err += std::abs(label.rgb.at(x, y, c) - dst.rgb.at(x, y, c));
    }
  }
  const std::size_t valid = label.valid_count();
  write_summary(out, "warp-preview", args,
                {{"frame", o.frame},
                 {"to_frame", o.to_frame},
                 {"valid_pixels", valid},
                 {"mean_abs_rgb_error", valid ? err / (3.0 * valid) : 0.0}});
}

}  // namespace

int run(const std::vector<std::string>& args) {
  CLI::App app{"Staged radiance-field reconstruction for tubular scenes"};
  app.require_subcommand(1);
  int jobs = 1;
  app.add_option("--jobs", jobs, "Worker threads for per-frame and per-block work")->check(CLI::PositiveNumber);
  app.set_version_flag("--version", std::string(version()) + " (" + std::string(git_revision()) + ")");

  GenData gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Generate a synthetic tube phantom dataset");
  gen_cmd->add_option("--preset", gen.preset, "straight-tube, curved-tube or l-tube");
  gen_cmd->add_option("--phantom-config", gen.phantom_config, "JSON file overriding phantom parameters");
  gen_cmd->add_option("--frames", gen.frames, "Frame count");
  gen_cmd->add_option("--width", gen.width, "Image width");
  gen_cmd->add_option("--height", gen.height, "Image height");
  gen_cmd->add_option("--out", gen.out, "Output dataset directory")->required();

  DivideOpts div;
  auto* div_cmd = app.add_subcommand("divide", "Split a trajectory into overlapping blocks");
  div_cmd->add_option("--dataset", div.dataset, "Dataset directory")->required();
  div_cmd->add_option("--out", div.out, "Output directory")->required();
  div_cmd->add_option("--config", div.config, "JSON config file");

  TrainOpts tr;
  auto* tr_cmd = app.add_subcommand("train", "Train every block of a dataset");
  tr_cmd->add_option("--dataset", tr.dataset, "Dataset directory")->required();
  tr_cmd->add_option("--out", tr.out, "Model output directory")->required();
  tr_cmd->add_option("--config", tr.config, std::string("JSON config file (default: $") + kConfigEnv + ")");
  tr_cmd->add_option("--views", tr.views, "Pose families: 1 original, 2 +helix, 3 +spin")->check(CLI::Range(1, 3));
  tr_cmd->add_option("--stages", tr.stages, "Stage count")->check(CLI::PositiveNumber);
  tr_cmd->add_option("--seed", tr.seed, "Random seed");
  tr_cmd->add_option("--iterations", tr.iterations, "Iterations per stage")->check(CLI::NonNegativeNumber);
  tr_cmd->add_flag("--single-block", tr.single_block, "Train the whole trajectory as one block");
  tr_cmd->add_flag("-v,--verbose", tr.verbose, "Print progress to stderr");

  RenderOpts rn;
  auto* rn_cmd = app.add_subcommand("render", "Render frames from a trained model");
  rn_cmd->add_option("--model", rn.model, "Model directory or manifest.json")->required();
  rn_cmd->add_option("--dataset", rn.dataset, "Dataset directory (for poses and intrinsics)")->required();
  rn_cmd->add_option("--out", rn.out, "Output directory")->required();
  rn_cmd->add_option("--frames", rn.frames, "Frame ids (default: held-out split)");

  EvalOpts ev;
  auto* ev_cmd = app.add_subcommand("eval", "Score renders against ground truth");
  ev_cmd->add_option("--model", ev.model, "Model directory or manifest.json")->required();
  ev_cmd->add_option("--dataset", ev.dataset, "Dataset directory")->required();
  ev_cmd->add_option("--out", ev.out, "Report directory")->required();
  ev_cmd->add_option("--frames", ev.frames, "Which split to score: test or train");

  WarpOpts wp;
  auto* wp_cmd = app.add_subcommand("warp-preview", "Warp one frame into another's pose");
  wp_cmd->add_option("--dataset", wp.dataset, "Dataset directory")->required();
  wp_cmd->add_option("--frame", wp.frame, "Source frame id")->required();
  wp_cmd->add_option("--to-frame", wp.to_frame, "Target frame id")->required();
  wp_cmd->add_option("--out", wp.out, "Output directory")->required();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e, std::cerr, std::cerr);
    std::cerr << app.help();
    return usage;
  }

  try {
    if (*gen_cmd) gen_data(gen, jobs, args);
    if (*div_cmd) divide_cmd(div, args);
    if (*tr_cmd) train_cmd(tr, jobs, args);
    if (*rn_cmd) render_cmd(rn, jobs, args);
    if (*ev_cmd) eval_cmd(ev, jobs, args);
    if (*wp_cmd) warp_cmd(wp, args);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return usage;
  } catch (const std::domain_error& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return numeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return data;
  }
  return ok;
}

}  // namespace tubenerf::cli
