#include "videxp/run_config.hpp"

#include <cctype>
#include <fstream>
#include <set>
#include <sstream>

namespace videxp {

namespace {

using json = nlohmann::json;

void reject_unknown(const json& obj, const std::set<std::string>& allowed, const std::string& where) {
  if (!obj.is_object()) throw ValidationError(where + " must be an object");
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    if (!allowed.count(it.key())) throw ValidationError("unknown key '" + it.key() + "' in " + where);
  }
}

template <typename T>
T get_as(const json& j, const std::string& key) {
  try {
    return j.get<T>();
  } catch (const json::exception&) {
    throw ValidationError("config key '" + key + "' has the wrong type: " + j.dump());
  }
}

double get_number(const json& j, const std::string& key) {
  if (!j.is_number()) throw ValidationError("config key '" + key + "' must be a number");
  return j.get<double>();
}

long long get_integer(const json& j, const std::string& key) {
  if (!j.is_number_integer()) throw ValidationError("config key '" + key + "' must be an integer");
  return j.get<long long>();
}

bool get_bool(const json& j, const std::string& key) {
  if (!j.is_boolean()) throw ValidationError("config key '" + key + "' must be a boolean");
  return j.get<bool>();
}

std::array<Index, 3> get_triple(const json& j, const std::string& key) {
  if (!j.is_array() || j.size() != 3) throw ValidationError("config key '" + key + "' must be [T, H, W]");
  std::array<Index, 3> out{};
  for (int a = 0; a < 3; ++a) out[a] = static_cast<Index>(get_integer(j[a], key));
  return out;
}

json box_json(const PixelBox& b) { return json::array({b.col_begin, b.row_begin, b.col_end, b.row_end}); }

PixelBox box_from(const json& j, const std::string& where) {
  if (!j.is_array() || j.size() != 4) throw ValidationError(where + " must be [x_min, y_min, x_max, y_max]");
  const auto x0 = get_integer(j[0], where), y0 = get_integer(j[1], where);
  const auto x1 = get_integer(j[2], where), y1 = get_integer(j[3], where);
  return PixelBox{y0, y1, x0, x1};
}

FrameSpan span_from(const json& j, const std::string& where) {
  if (!j.is_array() || j.size() != 2) throw ValidationError(where + " must be [t_start, t_end]");
  return FrameSpan{get_integer(j[0], where), get_integer(j[1], where)};
}

const std::set<std::string> kOptimKeys = {
    "method",      "ratio",          "iterations",     "step_size",     "momentum",
    "lambda_max",  "lambda_warmup_fraction",            "delta_t",       "kernel_extents",
    "kernel_stride", "step_area_term", "blur_sigma",     "seed_factor",   "smooth_max_temperature",
    "init_noise",  "rng_seed"};

std::string model_kind(const std::string& source) {
  const auto colon = source.find(':');
  if (colon == std::string::npos) {
    throw ValidationError("model source '" + source + "' must be builtin:<name> or bridge:<command>");
  }
  return source.substr(0, colon);
}

std::string model_name(const std::string& source) { return source.substr(source.find(':') + 1); }

void check_model_options(const std::string& source, const json& opts) {
  const std::string kind = model_kind(source);
  const std::string name = model_name(source);
  if (kind == "bridge") {
    if (split_command(name).empty()) throw ValidationError("bridge model needs a command line");
    reject_unknown(opts, {}, "model_options for a bridge model");
    return;
  }
  if (kind != "builtin") throw ValidationError("unknown model source kind '" + kind + "'");
  if (name == "planted") {
    reject_unknown(opts, {"manifest", "video_id", "spec"}, "model_options for builtin:planted");
    if (opts.contains("spec") && opts.contains("manifest")) {
      throw ValidationError("builtin:planted takes either 'spec' or 'manifest', not both");
    }
    if (opts.contains("manifest") && !opts["manifest"].is_string()) {
      throw ValidationError("model_options.manifest must be a path string");
    }
    if (opts.contains("video_id") && !opts["video_id"].is_string()) {
      throw ValidationError("model_options.video_id must be a string");
    }
    if (opts.contains("spec")) planted_spec_from_json(opts["spec"]);
  } else if (name == "linear") {
    reject_unknown(opts, {"classes", "seed", "scale"}, "model_options for builtin:linear");
    if (opts.contains("classes") && get_integer(opts["classes"], "classes") < 1) {
      throw ValidationError("model_options.classes must be >= 1");
    }
    if (opts.contains("seed") && get_integer(opts["seed"], "seed") < 0) {
      throw ValidationError("model_options.seed must be non-negative");
    }
    if (opts.contains("scale")) get_number(opts["scale"], "scale");
  } else if (name == "constant") {
    reject_unknown(opts, {"scores"}, "model_options for builtin:constant");
    if (!opts.contains("scores") || !opts["scores"].is_array() || opts["scores"].empty()) {
      throw ValidationError("builtin:constant needs model_options.scores");
    }
  } else {
    throw ValidationError("unknown builtin model '" + name + "' (expected planted, linear or constant)");
  }
}

void check_ratios(const std::vector<double>& r) {
  if (r.empty()) throw ValidationError("ratio list is empty");
  for (std::size_t k = 0; k < r.size(); ++k) {
    if (!(r[k] > 0.0 && r[k] <= 1.0)) throw ValidationError("ratios must lie in (0,1]");
    if (k > 0 && !(r[k] > r[k - 1])) throw ValidationError("ratios must be strictly ascending");
  }
}

}  // namespace

void merge_optim(const json& j, OptimConfig& cfg) {
  reject_unknown(j, kOptimKeys, "optim");
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& k = it.key();
    const json& v = it.value();
    if (k == "method") cfg.method = parse_method(get_as<std::string>(v, k));
    else if (k == "ratio") cfg.ratio = get_number(v, k);
    else if (k == "iterations") cfg.iterations = static_cast<int>(get_integer(v, k));
    else if (k == "step_size") cfg.step_size = get_number(v, k);
    else if (k == "momentum") cfg.momentum = get_number(v, k);
    else if (k == "lambda_max") cfg.lambda_max = get_number(v, k);
    else if (k == "lambda_warmup_fraction") cfg.lambda_warmup_fraction = get_number(v, k);
    else if (k == "delta_t") cfg.delta_t = static_cast<int>(get_integer(v, k));
    else if (k == "kernel_extents") cfg.kernel_extents = get_triple(v, k);
    else if (k == "kernel_stride") cfg.kernel_stride = get_triple(v, k);
    else if (k == "step_area_term") cfg.step_area_term = get_bool(v, k);
    else if (k == "blur_sigma") cfg.blur_sigma = v.is_null() ? std::nullopt : std::optional<double>(get_number(v, k));
    else if (k == "seed_factor") cfg.seed_factor = static_cast<int>(get_integer(v, k));
    else if (k == "smooth_max_temperature") cfg.smooth_max_temperature = get_number(v, k);
    else if (k == "init_noise") cfg.init_noise = get_number(v, k);
    else if (k == "rng_seed") {
      if (get_integer(v, k) < 0) throw ValidationError("rng_seed must be non-negative");
      cfg.rng_seed = v.get<std::uint64_t>();
    }
  }
}

json to_json(const OptimConfig& c) {
  return {{"method", to_string(c.method)},
          {"ratio", c.ratio},
          {"iterations", c.iterations},
          {"step_size", c.step_size},
          {"momentum", c.momentum},
          {"lambda_max", c.lambda_max},
          {"lambda_warmup_fraction", c.lambda_warmup_fraction},
          {"delta_t", c.delta_t},
          {"kernel_extents", c.kernel_extents},
          {"kernel_stride", c.kernel_stride},
          {"step_area_term", c.step_area_term},
          {"blur_sigma", c.blur_sigma ? json(*c.blur_sigma) : json(nullptr)},
          {"seed_factor", c.seed_factor},
          {"smooth_max_temperature", c.smooth_max_temperature},
          {"init_noise", c.init_noise},
          {"rng_seed", c.rng_seed}};
}

std::vector<double> parse_ratio_list(const std::string& text) {
  std::string t;
  for (char ch : text) t.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
  if (t == "r2plus1d" || t == "r(2+1)d") return {0.02, 0.05, 0.1, 0.2};
  if (t == "vgg16lstm") return {0.05, 0.1, 0.2, 0.3};
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto b = item.find_first_not_of(" \t");
    if (b == std::string::npos) throw ValidationError("empty entry in ratio list '" + text + "'");
    const auto e = item.find_last_not_of(" \t");
    item = item.substr(b, e - b + 1);
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(item, &used);
    } catch (const std::exception&) {
      throw ValidationError("bad ratio '" + item + "'");
    }
    if (used != item.size()) throw ValidationError("bad ratio '" + item + "'");
    out.push_back(v);
  }
  check_ratios(out);
  return out;
}

RunConfig parse_run_config(const json& doc) {
  reject_unknown(doc, {"model", "model_options", "input", "output_dir", "class", "optim", "extremal", "bridge"},
                 "config");
  RunConfig cfg;
  if (doc.contains("model")) cfg.model = get_as<std::string>(doc["model"], "model");
  if (doc.contains("model_options")) cfg.model_options = doc["model_options"];
  if (doc.contains("input")) cfg.input = get_as<std::string>(doc["input"], "input");
  if (doc.contains("output_dir")) cfg.output_dir = get_as<std::string>(doc["output_dir"], "output_dir");
  if (doc.contains("class")) cfg.target_class = static_cast<Index>(get_integer(doc["class"], "class"));
  if (doc.contains("optim")) merge_optim(doc["optim"], cfg.optim);
  if (doc.contains("extremal")) {
    const json& e = doc["extremal"];
    reject_unknown(e, {"ratios", "phi0_mode", "phi0", "exhaustive"}, "extremal");
    if (e.contains("ratios")) {
      if (e["ratios"].is_string()) {
        cfg.extremal.ratios = parse_ratio_list(e["ratios"].get<std::string>());
      } else {
        cfg.extremal.ratios = get_as<std::vector<double>>(e["ratios"], "extremal.ratios");
        check_ratios(cfg.extremal.ratios);
      }
    }
    if (e.contains("phi0_mode")) cfg.extremal.phi0_mode = parse_phi0_mode(get_as<std::string>(e["phi0_mode"], "phi0_mode"));
    if (e.contains("phi0")) cfg.extremal.phi0_value = get_number(e["phi0"], "extremal.phi0");
    if (e.contains("exhaustive")) cfg.extremal.exhaustive = get_bool(e["exhaustive"], "extremal.exhaustive");
  }
  if (doc.contains("bridge")) {
    const json& b = doc["bridge"];
    reject_unknown(b, {"handshake_timeout_ms", "call_timeout_ms"}, "bridge");
    if (b.contains("handshake_timeout_ms")) {
      cfg.bridge.handshake_timeout = std::chrono::milliseconds(get_integer(b["handshake_timeout_ms"], "handshake_timeout_ms"));
    }
    if (b.contains("call_timeout_ms")) {
      cfg.bridge.call_timeout = std::chrono::milliseconds(get_integer(b["call_timeout_ms"], "call_timeout_ms"));
    }
  }
  validate(cfg);
  return cfg;
}

void validate(const RunConfig& cfg) {
  validate(cfg.optim);
  check_model_options(cfg.model, cfg.model_options);
  if (cfg.target_class < 0) throw ValidationError("class must be non-negative");
  check_ratios(cfg.extremal.ratios);
  if (cfg.extremal.phi0_mode == Phi0Mode::Absolute && !cfg.extremal.phi0_value) {
    throw ValidationError("phi0_mode absolute needs extremal.phi0");
  }
  if (cfg.bridge.handshake_timeout.count() <= 0 || cfg.bridge.call_timeout.count() <= 0) {
    throw ValidationError("bridge timeouts must be positive");
  }
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  json doc;
  try {
    doc = json::parse(in, nullptr, true, /*ignore_comments=*/true);
  } catch (const json::parse_error& e) {
    throw ValidationError("config " + path.string() + ": " + e.what());
  }
  return parse_run_config(doc);
}

json to_json(const RunConfig& cfg) {
  json j = {{"model", cfg.model},
            {"model_options", cfg.model_options},
            {"class", cfg.target_class},
            {"optim", to_json(cfg.optim)},
            {"extremal",
             {{"ratios", cfg.extremal.ratios},
              {"phi0_mode", to_string(cfg.extremal.phi0_mode)},
              {"phi0", cfg.extremal.phi0_value ? json(*cfg.extremal.phi0_value) : json(nullptr)},
              {"exhaustive", cfg.extremal.exhaustive}}},
            {"bridge",
             {{"handshake_timeout_ms", cfg.bridge.handshake_timeout.count()},
              {"call_timeout_ms", cfg.bridge.call_timeout.count()}}}};
  j["input"] = cfg.input ? json(*cfg.input) : json(nullptr);
  j["output_dir"] = cfg.output_dir ? json(*cfg.output_dir) : json(nullptr);
  return j;
}

PlantedRegionModel PlantedSpec::model() const { return PlantedRegionModel(dims, region, segment, alpha, decoys); }

json to_json(const PlantedSpec& s) {
  json decoys = json::array();
  for (const auto& d : s.decoys) {
    decoys.push_back({{"box", box_json(d.box)}, {"segment", {d.span.begin, d.span.end}}, {"weight", d.weight}});
  }
  return {{"dims", s.dims},
          {"region", box_json(s.region)},
          {"segment", {s.segment.begin, s.segment.end}},
          {"alpha", s.alpha},
          {"decoys", decoys}};
}

PlantedSpec planted_spec_from_json(const json& j) {
  reject_unknown(j, {"dims", "region", "segment", "alpha", "decoys"}, "planted spec");
  PlantedSpec s;
  if (!j.contains("dims") || !j["dims"].is_array() || j["dims"].size() != 4) {
    throw ValidationError("planted spec needs dims [T, H, W, C]");
  }
  for (int a = 0; a < 4; ++a) s.dims[a] = static_cast<Index>(get_integer(j["dims"][a], "dims"));
  if (!j.contains("region") || !j.contains("segment")) throw ValidationError("planted spec needs region and segment");
  s.region = box_from(j["region"], "planted region");
  s.segment = span_from(j["segment"], "planted segment");
  if (j.contains("alpha")) s.alpha = get_number(j["alpha"], "alpha");
  if (j.contains("decoys")) {
    if (!j["decoys"].is_array()) throw ValidationError("planted decoys must be an array");
    for (const json& d : j["decoys"]) {
      reject_unknown(d, {"box", "segment", "weight"}, "planted decoy");
      if (!d.contains("box") || !d.contains("segment") || !d.contains("weight")) {
        throw ValidationError("planted decoy needs box, segment and weight");
      }
      s.decoys.push_back({box_from(d["box"], "decoy box"), span_from(d["segment"], "decoy segment"),
                          get_number(d["weight"], "decoy weight")});
    }
  }
  s.model();  // range checks
  return s;
}

PlantedSpec planted_spec(const PlantedInstance& inst) {
  const PlantedRegionModel m = inst.model();
  PlantedSpec s;
  s.dims = inst.video.dims();
  s.region = m.region();
  s.segment = m.segment();
  s.alpha = m.alpha();
  s.decoys = m.decoys();
  return s;
}

std::unique_ptr<ModelAdapter> make_model(const RunConfig& cfg, const VideoTensor::Dims& dims,
                                         const std::string& video_id, const std::filesystem::path& video_dir) {
  validate(cfg);
  const std::string kind = model_kind(cfg.model);
  const std::string name = model_name(cfg.model);
  const json& o = cfg.model_options;
  std::unique_ptr<ModelAdapter> model;
  if (kind == "bridge") {
    model = spawn_bridge(split_command(name), cfg.bridge);
  } else if (name == "planted") {
    PlantedSpec spec;
    if (o.contains("spec")) {
      spec = planted_spec_from_json(o["spec"]);
    } else {
      const std::string path = o.contains("manifest") ? o["manifest"].get<std::string>()
                                                      : (video_dir / "planted.json").string();
      std::ifstream in(path);
      if (!in) throw IoError("cannot open planted manifest " + path);
      json doc;
      try {
        doc = json::parse(in);
      } catch (const json::parse_error& e) {
        throw ValidationError("planted manifest " + path + ": " + e.what());
      }
      const std::string id = o.contains("video_id") ? o["video_id"].get<std::string>() : video_id;
      if (!doc.contains("videos") || !doc["videos"].contains(id)) {
        throw ValidationError("planted manifest " + path + " has no video '" + id + "'");
      }
      spec = planted_spec_from_json(doc["videos"][id]);
    }
    model = std::make_unique<PlantedRegionModel>(spec.model());
  } else if (name == "linear") {
    const Index classes = o.contains("classes") ? o["classes"].get<Index>() : 2;
    const std::uint64_t seed = o.contains("seed") ? o["seed"].get<std::uint64_t>() : 0;
    const double scale = o.contains("scale") ? o["scale"].get<double>() : 0.05;
    model = std::make_unique<LinearSoftmaxModel>(LinearSoftmaxModel::random(dims, classes, seed, scale));
  } else {
    const auto scores = get_as<std::vector<double>>(o["scores"], "scores");
    model = std::make_unique<ConstantModel>(dims, Eigen::Map<const Eigen::VectorXd>(scores.data(), scores.size()));
  }
  if (model->input_dims() != dims) {
    throw ValidationError("model expects " + format_dims(model->input_dims()) + " but the video is " +
                          format_dims(dims));
  }
  return model;
}

}  // namespace videxp
