#include "videxp/cli.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <future>
#include <iostream>
#include <optional>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "videxp/evaluation.hpp"
#include "videxp/image_io.hpp"
#include "videxp/run_config.hpp"
#include "videxp/tensor_io.hpp"

namespace videxp {

namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;

struct Input {
  fs::path path;
  std::string id;
};

Input describe_input(const std::string& p) {
  fs::path path(p);
  std::string id = path.filename().string();
  if (fs::is_directory(path)) {
    if (id.empty()) id = path.parent_path().filename().string();
  } else {
    id = path.stem().string();
  }
  return {path, id};
}

VideoTensor load_video(const fs::path& path) {
  if (fs::is_directory(path)) return import_frames(path);
  return read_video(path);
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

unsigned worker_count(int requested) {
  if (requested > 0) return static_cast<unsigned>(requested);
  return std::max(1u, std::thread::hardware_concurrency());
}

// Runs job(i) for i in [0, n) on up to `workers` threads, in index batches.
template <typename Job>
void fan_out(std::size_t n, unsigned workers, Job job) {
  if (workers <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) job(i);
    return;
  }
  std::vector<std::future<void>> running;
  std::size_t next = 0;
  while (next < n || !running.empty()) {
    while (next < n && running.size() < workers) running.push_back(std::async(std::launch::async, job, next++));
    running.front().get();
    running.erase(running.begin());
  }
}

json trajectory_json(const AttributionResult& r, const RunConfig& cfg, const std::string& video_id,
                     const std::string& model_desc) {
  json points = json::array();
  for (const auto& p : r.trajectory) {
    json q = {{"iteration", p.iteration},   {"score", p.score},   {"regularizer", p.regularizer},
              {"realized_ratio", p.realized_ratio}, {"lambda", p.lambda}};
    if (p.frame >= 0) q["frame"] = p.frame;
    points.push_back(std::move(q));
  }
  json meta = {{"video_id", video_id},
               {"model", model_desc},
               {"class", cfg.target_class},
               {"method", to_string(r.method)},
               {"ratio", r.ratio},
               {"final_score", r.final_score},
               {"realized_ratio", r.realized_ratio},
               {"best_iteration", r.best_iteration},
               {"crop", {{"row_offset", r.crop.row_offset}, {"col_offset", r.crop.col_offset},
                         {"height", r.crop.height}, {"width", r.crop.width}}},
               {"seed_dims", r.seed.values.dims()},
               {"warnings", r.warnings},
               {"optim", to_json(cfg.optim)}};
  if (r.method == Method::STEP) {
    meta["kernel_dims"] = cfg.optim.kernel_extents;  // (T, H, W)
    meta["kernel_stride"] = cfg.optim.kernel_stride;
    meta["kernel_axes"] = "THW";
  }
  return {{"metadata", meta}, {"trajectory", points}};
}

// Flags shared by attribute and extremal, applied on top of the config file.
struct RunFlags {
  std::string config_path;
  std::vector<std::string> inputs;
  std::optional<Index> target_class;
  std::optional<std::string> method;
  std::optional<double> ratio;
  std::optional<int> iterations;
  std::optional<std::uint64_t> rng_seed;
  std::optional<std::string> model;
  std::optional<std::string> out_dir;
  bool batch = false;
  int jobs = 0;
  bool overlay = false;

  void add_to(CLI::App* app) {
    app->add_option("inputs", inputs, "video .vtf file(s) or frame directories");
    app->add_option("-c,--config", config_path, "JSON run config (see docs/config.md)");
    app->add_option("--class", target_class, "target class index");
    app->add_option("--method", method, "EP2D, EP3D, EP3D_EVENLY, EP3D_GAUSS or STEP");
    app->add_option("--ratio", ratio, "preservation ratio a");
    app->add_option("--iterations", iterations, "SGD iterations");
    app->add_option("--rng-seed", rng_seed, "seed-mask initialization seed");
    app->add_option("--model", model, "builtin:planted|linear|constant or bridge:<command>");
    app->add_option("-o,--out", out_dir, "output directory (created if missing)");
    app->add_flag("--batch", batch, "allow several inputs, fanned out over worker threads");
    app->add_option("-j,--jobs", jobs, "worker threads for --batch (default: hardware threads)");
    app->add_flag("--overlay", overlay, "also export overlay PNGs per video");
  }

  RunConfig resolve() const {
    RunConfig cfg = config_path.empty() ? RunConfig{} : load_run_config(config_path);
    if (target_class) cfg.target_class = *target_class;
    if (method) cfg.optim.method = parse_method(*method);
    if (ratio) cfg.optim.ratio = *ratio;
    if (iterations) cfg.optim.iterations = *iterations;
    if (rng_seed) cfg.optim.rng_seed = *rng_seed;
    if (model) {
      if (*model != cfg.model) cfg.model_options = json::object();
      cfg.model = *model;
    }
    if (out_dir) cfg.output_dir = *out_dir;
    if (!inputs.empty()) cfg.input = inputs.front();
    validate(cfg);
    return cfg;
  }

  std::vector<std::string> input_list(const RunConfig& cfg) const {
    std::vector<std::string> list = inputs;
    if (list.empty() && cfg.input) list.push_back(*cfg.input);
    if (list.empty()) throw ValidationError("no input video given");
    if (list.size() > 1 && !batch) throw ValidationError("several inputs need --batch");
    return list;
  }
};

struct VideoJob {
  Input input;
  VideoTensor video;
};

std::vector<VideoJob> load_inputs(const std::vector<std::string>& list) {
  std::vector<VideoJob> jobs;
  for (const auto& p : list) {
    Input in = describe_input(p);
    jobs.push_back({in, load_video(in.path)});
  }
  return jobs;
}

fs::path output_dir(const RunConfig& cfg) {
  fs::path out = cfg.output_dir ? fs::path(*cfg.output_dir) : fs::path(".");
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw IoError("cannot create output directory " + out.string() + ": " + ec.message());
  return out;
}

// Models that are not concurrency-safe (bridges) get one instance shared by
// all videos, and the videos run one after another.
template <typename PerVideo>
void for_each_video(const RunConfig& cfg, std::vector<VideoJob>& jobs, int requested_jobs, PerVideo per_video) {
  const bool bridged = cfg.model.rfind("bridge:", 0) == 0;
  if (bridged) {
    std::unique_ptr<ModelAdapter> shared;
    for (auto& j : jobs) {
      if (!shared || shared->input_dims() != j.video.dims()) {
        shared = make_model(cfg, j.video.dims(), j.input.id, j.input.path.parent_path());
      }
      per_video(j, *shared);
    }
    return;
  }
  std::vector<std::unique_ptr<ModelAdapter>> models;
  for (auto& j : jobs) {
    const fs::path dir = j.input.path.has_parent_path() ? j.input.path.parent_path() : fs::path(".");
    models.push_back(make_model(cfg, j.video.dims(), j.input.id, dir));
  }
  std::vector<std::exception_ptr> errors(jobs.size());
  fan_out(jobs.size(), worker_count(requested_jobs), [&](std::size_t i) {
    try {
      per_video(jobs[i], *models[i]);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  });
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

std::string summary_line(const std::string& id, const AttributionResult& r) {
  std::ostringstream s;
  s << id << ": method=" << to_string(r.method) << " ratio=" << r.ratio << " final_score=" << r.final_score
    << " realized_ratio=" << r.realized_ratio << " best_iteration=" << r.best_iteration;
  return s.str();
}

int cmd_attribute(const RunFlags& flags, bool print_config, std::ostream& out, std::ostream& err) {
  const RunConfig cfg = flags.resolve();
  if (print_config) {
    out << to_json(cfg).dump(2) << '\n';
    return kExitOk;
  }
  const auto list = flags.input_list(cfg);
  auto jobs = load_inputs(list);
  const fs::path out_dir = output_dir(cfg);
  std::mutex log_mutex;
  for_each_video(cfg, jobs, flags.jobs, [&](VideoJob& job, ModelAdapter& model) {
    const AttributionResult r = optimize_mask(job.video, model, cfg.target_class, cfg.optim);
    write_tensor(r.mask, out_dir / (job.input.id + ".mask.vtf"));
    write_json(out_dir / (job.input.id + ".trajectory.json"), trajectory_json(r, cfg, job.input.id, cfg.model));
    if (flags.overlay) export_overlay(job.video, r.mask, out_dir / (job.input.id + ".overlay"));
    std::lock_guard lock(log_mutex);
    err << summary_line(job.input.id, r) << '\n';
    for (const auto& w : r.warnings) err << job.input.id << ": warning: " << w << '\n';
  });
  return kExitOk;
}

struct ExtremalFlags {
  std::optional<std::string> ratios;
  std::optional<std::string> phi0_mode;
  std::optional<double> phi0;
  bool exhaustive = false;

  void add_to(CLI::App* app) {
    app->add_option("--ratios", ratios, "ascending ratio list, or preset r2plus1d / vgg16lstm");
    app->add_option("--phi0-mode", phi0_mode, "relative (factor x clean score), preserve (clean - eps), absolute");
    app->add_option("--phi0", phi0, "factor, epsilon or absolute bound for the chosen mode");
    app->add_flag("--exhaustive", exhaustive, "optimize every ratio even after the bound is met");
  }

  void apply(RunConfig& cfg) const {
    if (ratios) cfg.extremal.ratios = parse_ratio_list(*ratios);
    if (phi0_mode) cfg.extremal.phi0_mode = parse_phi0_mode(*phi0_mode);
    if (phi0) cfg.extremal.phi0_value = *phi0;
    if (exhaustive) cfg.extremal.exhaustive = true;
    validate(cfg);
  }
};

int cmd_extremal(const RunFlags& flags, const ExtremalFlags& ex, bool print_config, std::ostream& out,
                 std::ostream& err) {
  RunConfig cfg = flags.resolve();
  ex.apply(cfg);
  if (print_config) {
    out << to_json(cfg).dump(2) << '\n';
    return kExitOk;
  }
  const auto list = flags.input_list(cfg);
  auto jobs = load_inputs(list);
  const fs::path out_dir = output_dir(cfg);
  std::mutex log_mutex;
  for_each_video(cfg, jobs, flags.jobs, [&](VideoJob& job, ModelAdapter& model) {
    const double clean = model.forward(job.video)[cfg.target_class];
    const double phi0 = resolve_phi0(cfg.extremal.phi0_mode, clean, cfg.extremal.phi0_value);
    ExtremalOptions opts;
    opts.exhaustive = cfg.extremal.exhaustive;
    opts.parallel = list.size() == 1;
    const ExtremalOutcome o = extremal_search(job.video, model, cfg.target_class, cfg.optim, cfg.extremal.ratios,
                                              phi0, opts);
    json evaluated = json::array();
    for (const auto& e : o.evaluated) {
      evaluated.push_back({{"ratio", e.ratio}, {"final_score", e.final_score}, {"realized_ratio", e.realized_ratio},
                           {"meets_bound", e.final_score >= phi0}});
    }
    const json report = {{"video_id", job.input.id},
                         {"method", to_string(cfg.optim.method)},
                         {"class", cfg.target_class},
                         {"clean_score", clean},
                         {"phi0_mode", to_string(cfg.extremal.phi0_mode)},
                         {"phi0", phi0},
                         {"ratios", cfg.extremal.ratios},
                         {"a_star", o.ratio},
                         {"bound_unmet", o.bound_unmet},
                         {"evaluated", evaluated}};
    write_json(out_dir / (job.input.id + ".extremal.json"), report);
    write_tensor(o.result.mask, out_dir / (job.input.id + ".mask.vtf"));
    RunConfig chosen = cfg;
    chosen.optim.ratio = o.ratio;
    write_json(out_dir / (job.input.id + ".trajectory.json"),
               trajectory_json(o.result, chosen, job.input.id, cfg.model));
    if (flags.overlay) export_overlay(job.video, o.result.mask, out_dir / (job.input.id + ".overlay"));
    std::lock_guard lock(log_mutex);
    err << job.input.id << ": a*=" << o.ratio << (o.bound_unmet ? " (bound unmet)" : "") << " phi0=" << phi0
        << " clean_score=" << clean << '\n';
  });
  return kExitOk;
}

struct EvaluateFlags {
  std::string masks;
  std::string annotations;
  std::string metric = "both";
  std::optional<std::string> out_dir;
  std::string method_label;
  std::string model_label;
  double tolerance = kPointingTolerance;
  int jobs = 0;
};

int cmd_evaluate(const EvaluateFlags& f, bool print_config, std::ostream& out, std::ostream& err) {
  if (f.metric != "spt" && f.metric != "tpt" && f.metric != "both") {
    throw ValidationError("--metric must be spt, tpt or both");
  }
  if (!(f.tolerance >= 0.0)) throw ValidationError("--tolerance must be non-negative");
  if (print_config) {
    out << json{{"masks", f.masks}, {"annotations", f.annotations}, {"metric", f.metric},
                {"out", f.out_dir ? json(*f.out_dir) : json(f.masks)}, {"method", f.method_label},
                {"model", f.model_label}, {"tolerance", f.tolerance}}
               .dump(2)
        << '\n';
    return kExitOk;
  }
  const AnnotationSet ann = read_annotations(f.annotations);
  std::vector<std::pair<std::string, fs::path>> found;
  std::vector<std::string> missing;
  for (const auto& [id, _] : ann.videos) {
    const fs::path a = fs::path(f.masks) / (id + ".mask.vtf");
    const fs::path b = fs::path(f.masks) / (id + ".vtf");
    if (fs::exists(a)) {
      found.emplace_back(id, a);
    } else if (fs::exists(b)) {
      found.emplace_back(id, b);
    } else {
      missing.push_back(id);
    }
  }
  if (found.empty()) throw ValidationError("no masks in " + f.masks + " match the annotated videos");

  std::vector<VideoScore> scores(found.size());
  std::vector<std::exception_ptr> errors(found.size());
  fan_out(found.size(), worker_count(f.jobs), [&](std::size_t i) {
    try {
      VideoAnnotation a = ann.videos.at(found[i].first);
      if (f.metric == "spt") a.segments.clear();
      if (f.metric == "tpt") a.boxes.clear();
      scores[i] = score_video(found[i].first, read_mask(found[i].second), a, f.tolerance);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  });
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);

  MetricReport report = aggregate(scores, f.method_label, f.model_label);
  for (const auto& id : missing) report.warnings.push_back("no mask for annotated video '" + id + "'");
  const fs::path out_dir = f.out_dir ? fs::path(*f.out_dir) : fs::path(f.masks);
  fs::create_directories(out_dir);
  write_json(out_dir / "report.json", to_json(report));
  const std::string table = format_table({report});
  write_text(out_dir / "report.txt", table);
  for (const auto& w : report.warnings) err << "warning: " << w << '\n';
  err << table;
  return kExitOk;
}

struct BenchFlags {
  Index instances = 20;
  std::string dims = "16,64,64,1";
  std::uint64_t seed = 0;
  std::string out_dir = "bench";
  PlantedOptions planted = benchmark_planted_options();
  double volume_fraction = 0.08;
  double segment_fraction = 9.0 / 16.0;
};

VideoTensor::Dims parse_dims(const std::string& text) {
  std::vector<Index> v;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      v.push_back(std::stol(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ValidationError("bad dims '" + text + "' (expected T,H,W[,C])");
    }
  }
  if (v.size() == 3) v.push_back(1);
  if (v.size() != 4) throw ValidationError("bad dims '" + text + "' (expected T,H,W[,C])");
  for (Index d : v)
    if (d < 1) throw ValidationError("dims must be positive");
  return {v[0], v[1], v[2], v[3]};
}

std::string instance_id(Index k) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "planted_%03ld", static_cast<long>(k));
  return buf;
}

json bench_json(const BenchFlags& f) {
  const PlantedOptions& p = f.planted;
  return {{"instances", f.instances},
          {"dims", f.dims},
          {"seed", f.seed},
          {"out", f.out_dir},
          {"alpha", p.alpha},
          {"texture_amplitude", p.texture_amplitude},
          {"decoys", p.decoy_count},
          {"decoy_size", p.decoy_size},
          {"decoy_weight", p.decoy_weight},
          {"volume_fraction", f.volume_fraction},
          {"segment_fraction", f.segment_fraction}};
}

int cmd_bench(BenchFlags f, bool print_config, std::ostream& out, std::ostream& err) {
  if (f.instances < 1) throw ValidationError("--instances must be >= 1");
  const auto dims = parse_dims(f.dims);
  f.planted.channels = dims[3];
  if (print_config) {
    out << bench_json(f).dump(2) << '\n';
    return kExitOk;
  }
  fs::create_directories(f.out_dir);
  AnnotationSet ann;
  json manifest = {{"format", "videxp-planted/1"}, {"videos", json::object()}};
  for (Index k = 0; k < f.instances; ++k) {
    const std::uint64_t s = f.seed + static_cast<std::uint64_t>(k);
    const PlantedLayout layout = random_planted_layout(dims, s, f.volume_fraction, f.segment_fraction);
    const PlantedInstance inst = make_planted_instance(dims, layout.region, layout.segment, s, f.planted);
    const std::string id = instance_id(k);
    write_tensor(inst.video, fs::path(f.out_dir) / (id + ".vtf"));
    VideoAnnotation va;
    va.label = 1;
    const PixelBox& r = inst.annotation.region;
    for (Index t = inst.annotation.segment.begin; t <= inst.annotation.segment.end; ++t) {
      va.boxes.push_back({t, Box{r.col_begin, r.row_begin, r.col_end, r.row_end}});
    }
    va.segments.push_back({inst.annotation.segment.begin, inst.annotation.segment.end});
    ann.videos.emplace(id, std::move(va));
    manifest["videos"][id] = to_json(planted_spec(inst));
  }
  json annotations = to_json(ann);
  for (auto& [id, v] : annotations["videos"].items()) v["dims"] = {dims[0], dims[1], dims[2]};
  write_json(fs::path(f.out_dir) / "annotations.json", annotations);
  write_json(fs::path(f.out_dir) / "planted.json", manifest);
  err << "wrote " << f.instances << " planted videos to " << f.out_dir << '\n';
  return kExitOk;
}

int cmd_overlay(const std::string& video, const std::string& mask, const std::string& out_dir, bool print_config,
                std::ostream& out, std::ostream& err) {
  if (print_config) {
    out << json{{"video", video}, {"mask", mask}, {"out", out_dir}}.dump(2) << '\n';
    return kExitOk;
  }
  const VideoTensor x = load_video(video);
  const MaskVolume m = read_mask(mask);
  const auto written = export_overlay(x, m, out_dir);
  err << "wrote " << written.size() << " overlay frames to " << out_dir << '\n';
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Spatiotemporal extremal-perturbation attribution for video classifiers", "videxp"};
  app.require_subcommand(1);
  bool print_config = false;
  app.add_flag("--print-config", print_config, "print the resolved configuration as JSON and exit");

  RunFlags attr_flags;
  auto* attribute = app.add_subcommand("attribute", "optimize a preservation mask at one ratio");
  attr_flags.add_to(attribute);

  RunFlags ext_flags;
  ExtremalFlags ext_only;
  auto* extremal = app.add_subcommand("extremal", "sweep ratios and report the smallest meeting phi0");
  ext_flags.add_to(extremal);
  ext_only.add_to(extremal);

  EvaluateFlags eval_flags;
  auto* evaluate = app.add_subcommand("evaluate", "spatial / temporal pointing game over a masks directory");
  evaluate->add_option("--masks", eval_flags.masks, "directory of <video_id>.mask.vtf files")->required();
  evaluate->add_option("--annotations", eval_flags.annotations, "annotation JSON")->required();
  evaluate->add_option("--metric", eval_flags.metric, "spt, tpt or both");
  evaluate->add_option("-o,--out", eval_flags.out_dir, "report directory (default: the masks directory)");
  evaluate->add_option("--method", eval_flags.method_label, "method label for the report");
  evaluate->add_option("--model", eval_flags.model_label, "model label for the report");
  evaluate->add_option("--tolerance", eval_flags.tolerance, "S-PT distance tolerance in pixels");
  evaluate->add_option("-j,--jobs", eval_flags.jobs, "worker threads");

  BenchFlags bench_flags;
  auto* bench = app.add_subcommand("bench", "write a planted-signal dataset with annotations");
  bench->add_option("-n,--instances", bench_flags.instances, "number of videos");
  bench->add_option("--dims", bench_flags.dims, "T,H,W[,C]");
  bench->add_option("--seed", bench_flags.seed, "base seed; instance k uses seed + k");
  bench->add_option("-o,--out", bench_flags.out_dir, "output directory");
  bench->add_option("--alpha", bench_flags.planted.alpha, "planted logit gain");
  bench->add_option("--texture", bench_flags.planted.texture_amplitude, "checkerboard amplitude");
  bench->add_option("--decoys", bench_flags.planted.decoy_count, "single-frame decoy patches outside the segment");
  bench->add_option("--decoy-size", bench_flags.planted.decoy_size, "decoy side length in pixels");
  bench->add_option("--decoy-weight", bench_flags.planted.decoy_weight, "decoy logit weight relative to alpha");
  bench->add_option("--volume-fraction", bench_flags.volume_fraction, "planted region volume fraction");
  bench->add_option("--segment-fraction", bench_flags.segment_fraction, "planted segment length fraction");

  std::string ov_video, ov_mask, ov_out = "overlay";
  auto* overlay = app.add_subcommand("overlay", "blend a mask over its video as PNG frames");
  overlay->add_option("--video", ov_video, "video .vtf or frame directory")->required();
  overlay->add_option("--mask", ov_mask, "mask .vtf")->required();
  overlay->add_option("-o,--out", ov_out, "output directory");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "videxp: " << e.what() << '\n';
    return kExitValidation;
  }

  try {
    if (attribute->parsed()) return cmd_attribute(attr_flags, print_config, out, err);
    if (extremal->parsed()) return cmd_extremal(ext_flags, ext_only, print_config, out, err);
    if (evaluate->parsed()) return cmd_evaluate(eval_flags, print_config, out, err);
    if (bench->parsed()) return cmd_bench(bench_flags, print_config, out, err);
    if (overlay->parsed()) return cmd_overlay(ov_video, ov_mask, ov_out, print_config, out, err);
  } catch (const ModelError& e) {
    err << "videxp: model failure: " << e.what() << '\n';
    return kExitModel;
  } catch (const ProtocolError& e) {
    err << "videxp: bridge protocol error: " << e.what() << '\n';
    return kExitModel;
  } catch (const Error& e) {
    err << "videxp: " << e.what() << '\n';
    return kExitValidation;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "videxp: " << e.what() << '\n';
    return kExitValidation;
  } catch (const nlohmann::json::exception& e) {
    err << "videxp: " << e.what() << '\n';
    return kExitValidation;
  }
  return kExitValidation;
}

}  // namespace videxp
