#include "videxp/optimizer.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <future>
#include <limits>
#include <random>

namespace videxp {

namespace {

std::string normalize(std::string s) {
  std::string out;
  for (char ch : s) {
    if (ch == '-' || ch == '_' || ch == ' ') continue;
    out.push_back(static_cast<char>(std::toupper(static_cast<unsigned char>(ch))));
  }
  return out;
}

}  // namespace

std::string to_string(Method m) {
  switch (m) {
    case Method::EP2D: return "EP2D";
    case Method::EP3D: return "EP3D";
    case Method::EP3D_EVENLY: return "EP3D_EVENLY";
    case Method::EP3D_GAUSS: return "EP3D_GAUSS";
    case Method::STEP: return "STEP";
  }
  return "?";
}

Method parse_method(const std::string& name) {
  const std::string n = normalize(name);
  if (n == "EP2D" || n == "EP") return Method::EP2D;
  if (n == "EP3D") return Method::EP3D;
  if (n == "EP3DEVENLY") return Method::EP3D_EVENLY;
  if (n == "EP3DGAUSS") return Method::EP3D_GAUSS;
  if (n == "STEP") return Method::STEP;
  throw ValidationError("unknown method '" + name + "' (expected EP2D, EP3D, EP3D_EVENLY, EP3D_GAUSS or STEP)");
}

void validate(const OptimConfig& cfg) {
  if (!(cfg.ratio > 0.0 && cfg.ratio <= 1.0)) throw ValidationError("ratio must lie in (0,1]");
  if (cfg.iterations < 1) throw ValidationError("iterations must be >= 1");
  if (!(cfg.step_size > 0.0)) throw ValidationError("step_size must be positive");
  if (!(cfg.momentum >= 0.0 && cfg.momentum < 1.0)) throw ValidationError("momentum must lie in [0,1)");
  if (!(cfg.lambda_max > 0.0)) throw ValidationError("lambda_max must be positive");
  if (!(cfg.lambda_warmup_fraction > 0.0 && cfg.lambda_warmup_fraction <= 1.0)) {
    throw ValidationError("lambda_warmup_fraction must lie in (0,1]");
  }
  if (cfg.delta_t < 0) throw ValidationError("delta_t must be non-negative");
  for (int a = 0; a < 3; ++a) {
    if (cfg.kernel_extents[a] < 1 || cfg.kernel_stride[a] < 1) {
      throw ValidationError("kernel extents and strides must be >= 1");
    }
  }
  if (cfg.blur_sigma && !(*cfg.blur_sigma > 0.0)) throw ValidationError("blur sigma must be positive");
  if (cfg.seed_factor < 1) throw ValidationError("seed_factor must be >= 1");
  if (!(cfg.smooth_max_temperature > 0.0)) throw ValidationError("smooth_max_temperature must be positive");
  if (!(cfg.init_noise >= 0.0 && cfg.init_noise < 0.5)) throw ValidationError("init_noise must lie in [0,0.5)");
}

CropWindow crop_for_factor(Index height, Index width, int factor) {
  CropWindow c;
  c.height = (height / factor) * factor;
  c.width = (width / factor) * factor;
  if (c.height == 0 || c.width == 0) {
    throw ValidationError("frames of " + std::to_string(height) + "x" + std::to_string(width) +
                          " are smaller than the seed factor " + std::to_string(factor));
  }
  c.row_offset = (height - c.height) / 2;
  c.col_offset = (width - c.width) / 2;
  return c;
}

namespace {

void embed(const MaskVolume& cropped, const CropWindow& crop, Index first_frame, MaskVolume& full) {
  for (Index t = 0; t < cropped.dim(0); ++t)
    frame(full, first_frame + t).block(crop.row_offset, crop.col_offset, crop.height, crop.width) =
        frame(cropped, t);
}

MaskVolume extract(const MaskVolume& full, const CropWindow& crop, Index first_frame, Index frames) {
  MaskVolume out({frames, crop.height, crop.width});
  for (Index t = 0; t < frames; ++t)
    frame(out, t) = frame(full, first_frame + t).block(crop.row_offset, crop.col_offset, crop.height, crop.width);
  return out;
}

struct RegularizerValue {
  double loss = 0.0;
  MaskVolume gradient;
  bool saturated = false;
};

// Everything one SGD run needs that does not change between iterations.
struct Problem {
  const OptimConfig& cfg;
  ModelAdapter& model;
  Index target_class;
  Perturbation<double> perturbation;
  CropWindow crop;
  SmoothMaxUpsampler<double> upsampler;
  std::optional<TemporalSmoother> smoother;
  std::optional<EllipsoidKernel> kernel;

  RegularizerValue regularize(const MaskVolume& m, Method method) const {
    RegularizerValue r;
    switch (method) {
      case Method::EP2D:
      case Method::EP3D:
      case Method::EP3D_GAUSS: {
        auto a = area_loss(m, cfg.ratio);
        r.loss = a.loss;
        r.gradient = std::move(a.gradient);
        break;
      }
      case Method::EP3D_EVENLY: {
        auto a = area_loss_per_frame(m, cfg.ratio);
        r.loss = a.loss;
        r.gradient = std::move(a.gradient);
        break;
      }
      case Method::STEP: {
        auto lk = smoothness_loss(m, *kernel, cfg.ratio);
        r.loss = lk.loss;
        r.gradient = std::move(lk.gradient);
        r.saturated = lk.saturated;
        if (cfg.step_area_term) {
          auto a = area_loss(m, cfg.ratio);
          r.loss += a.loss;
          r.gradient.data() += a.gradient.data();
        }
        break;
      }
    }
    return r;
  }
};

struct SeedRun {
  Volume<double> best_seed;
  MaskVolume best_mask;  // cropped, active frames only
  double best_score = 0.0;
  int best_iteration = -1;
  bool saturated = false;
};

// Optimizes the seed for frames [first_frame, first_frame + frames). Frames
// outside that range keep mask 0 (EP2D) and the crop margin is always 0.
SeedRun run_seed(Problem& p, Method method, Index first_frame, Index frames, std::mt19937_64& rng,
                 std::vector<TrajectoryPoint>& trajectory) {
  const OptimConfig& cfg = p.cfg;
  const Index T = p.perturbation.original().dim(0);
  const Index H = p.perturbation.original().dim(1), W = p.perturbation.original().dim(2);
  const Index seed_h = p.crop.height / cfg.seed_factor, seed_w = p.crop.width / cfg.seed_factor;

  Volume<double> seed({frames, seed_h, seed_w});
  std::uniform_real_distribution<double> noise(-cfg.init_noise, cfg.init_noise);
  for (Index i = 0; i < seed.size(); ++i) seed.data()[i] = std::clamp(cfg.ratio + noise(rng), 0.0, 1.0);
  Eigen::ArrayXd velocity = Eigen::ArrayXd::Zero(seed.size());

  const bool gauss = method == Method::EP3D_GAUSS;
  const double warmup_iters = cfg.lambda_warmup_fraction * cfg.iterations;
  MaskVolume full({T, H, W});

  SeedRun run;
  double best_objective = std::numeric_limits<double>::infinity();

  for (int it = 0; it < cfg.iterations; ++it) {
    const double lambda = cfg.lambda_max * std::min(1.0, it / warmup_iters);

    const Volume<double> smoothed = gauss ? temporal_smooth(seed, *p.smoother) : seed;
    const MaskVolume mask = p.upsampler.forward(smoothed);
    embed(mask, p.crop, first_frame, full);
    const VideoTensor perturbed = p.perturbation.apply(full);

    double score = 0.0;
    VideoTensor score_grad;
    try {
      score = p.model.forward(perturbed)[p.target_class];
      score_grad = p.model.gradient(perturbed, p.target_class);
    } catch (const std::exception& e) {
      throw OptimizationAborted("model failed at iteration " + std::to_string(it) + ": " + e.what(), trajectory);
    }
    if (!std::isfinite(score)) {
      throw OptimizationAborted("model returned a non-finite score at iteration " + std::to_string(it), trajectory);
    }

    const RegularizerValue reg = p.regularize(mask, method);
    run.saturated = run.saturated || reg.saturated;

    MaskVolume grad_mask = extract(p.perturbation.vjp(score_grad), p.crop, first_frame, frames);
    grad_mask.data() = -grad_mask.data() + lambda * reg.gradient.data();
    Volume<double> grad_seed = p.upsampler.vjp(smoothed, grad_mask);
    if (gauss) grad_seed = temporal_smooth_vjp(*p.smoother, grad_seed);
    if (!grad_seed.all_finite()) {
      throw OptimizationAborted("non-finite seed gradient at iteration " + std::to_string(it) +
                                    " (score " + std::to_string(score) + ", regularizer " +
                                    std::to_string(reg.loss) + ")",
                                trajectory);
    }

    const double realized = mask.data().mean();
    trajectory.push_back({it, frames == T ? Index{-1} : first_frame, score, reg.loss, realized, lambda});

    const double objective = cfg.lambda_max * reg.loss - score;
    if (objective < best_objective) {
      best_objective = objective;
      run.best_seed = seed;
      run.best_mask = mask;
      run.best_score = score;
      run.best_iteration = it;
    }

    velocity = cfg.momentum * velocity + grad_seed.data();
    seed.data() = (seed.data() - cfg.step_size * velocity).max(0.0).min(1.0);
  }
  return run;
}

}  // namespace

AttributionResult optimize_mask(const VideoTensor& x, ModelAdapter& model, Index target_class,
                                const OptimConfig& cfg) {
  validate(cfg);
  validate_video(x);
  if (x.dims() != model.input_dims()) {
    throw ValidationError("video dims " + format_dims(x.dims()) + " do not match model input dims " +
                          format_dims(model.input_dims()));
  }
  if (target_class < 0 || target_class >= model.class_count()) {
    throw ValidationError("class index " + std::to_string(target_class) + " out of range");
  }

  const Index T = x.dim(0), H = x.dim(1), W = x.dim(2);
  const CropWindow crop = crop_for_factor(H, W, cfg.seed_factor);
  const BlurSpec blur_spec = cfg.blur_sigma ? BlurSpec{*cfg.blur_sigma} : default_blur(H, W);

  Problem p{cfg,
            model,
            target_class,
            Perturbation<double>(x, blur_spec),
            crop,
            SmoothMaxUpsampler<double>(crop.height / cfg.seed_factor, crop.width / cfg.seed_factor, cfg.seed_factor,
                                       cfg.smooth_max_temperature),
            std::nullopt,
            std::nullopt};
  if (cfg.method == Method::EP3D_GAUSS) p.smoother = make_temporal_smoother(cfg.delta_t);
  if (cfg.method == Method::STEP) {
    p.kernel = build_ellipsoid_kernel(cfg.kernel_extents[0], cfg.kernel_extents[1], cfg.kernel_extents[2],
                                      cfg.kernel_stride);
    correlation_output_dims({T, crop.height, crop.width}, *p.kernel);
  }

  AttributionResult result;
  result.method = cfg.method;
  result.ratio = cfg.ratio;
  result.crop = crop;
  result.mask = MaskVolume({T, H, W});
  result.seed.factor = cfg.seed_factor;

  std::mt19937_64 rng(cfg.rng_seed);
  bool saturated = false;

  if (cfg.method == Method::EP2D) {
    result.seed.values = Volume<double>({T, crop.height / cfg.seed_factor, crop.width / cfg.seed_factor});
    const Index cells = result.seed.values.dim(1) * result.seed.values.dim(2);
    for (Index t = 0; t < T; ++t) {
      SeedRun run = run_seed(p, Method::EP2D, t, 1, rng, result.trajectory);
      result.seed.values.data().segment(t * cells, cells) = run.best_seed.data();
      embed(run.best_mask, crop, t, result.mask);
      result.best_iteration = std::max(result.best_iteration, run.best_iteration);
    }
    try {
      result.final_score = model.forward(p.perturbation.apply(result.mask))[target_class];
    } catch (const std::exception& e) {
      throw OptimizationAborted(std::string("model failed scoring the assembled mask: ") + e.what(),
                                result.trajectory);
    }
  } else {
    SeedRun run = run_seed(p, cfg.method, 0, T, rng, result.trajectory);
    result.seed.values = std::move(run.best_seed);
    embed(run.best_mask, crop, 0, result.mask);
    result.final_score = run.best_score;
    result.best_iteration = run.best_iteration;
    saturated = run.saturated;
  }

  result.realized_ratio = extract(result.mask, crop, 0, T).data().mean();
  if (saturated) {
    result.warnings.push_back("smoothness template requested more ones than there are correlation outputs; "
                              "ones count saturated");
  }
  return result;
}

double preservation_objective(const MaskVolume& m, const VideoTensor& x, ModelAdapter& model, Index target_class,
                              double lambda, const BlurSpec& blur) {
  return lambda * m.data().abs().sum() - model.forward(perturb(x, m, blur))[target_class];
}

Phi0Mode parse_phi0_mode(const std::string& name) {
  const std::string n = normalize(name);
  if (n == "RELATIVE") return Phi0Mode::Relative;
  if (n == "PRESERVE") return Phi0Mode::Preserve;
  if (n == "ABSOLUTE") return Phi0Mode::Absolute;
  throw ValidationError("unknown phi0 mode '" + name + "' (expected relative, preserve or absolute)");
}

std::string to_string(Phi0Mode mode) {
  switch (mode) {
    case Phi0Mode::Relative: return "relative";
    case Phi0Mode::Preserve: return "preserve";
    case Phi0Mode::Absolute: return "absolute";
  }
  return "?";
}

double resolve_phi0(Phi0Mode mode, double clean_score, std::optional<double> value) {
  switch (mode) {
    case Phi0Mode::Relative: return value.value_or(0.8) * clean_score;
    case Phi0Mode::Preserve: return clean_score - value.value_or(0.01);
    case Phi0Mode::Absolute:
      if (!value) throw ValidationError("absolute phi0 mode needs an explicit value");
      return *value;
  }
  return 0.0;
}

ExtremalOutcome extremal_search(const VideoTensor& x, ModelAdapter& model, Index target_class, const OptimConfig& cfg,
                                const std::vector<double>& ratios, double phi0, const ExtremalOptions& options) {
  if (ratios.empty()) throw ValidationError("extremal search needs at least one ratio");
  for (std::size_t k = 0; k < ratios.size(); ++k) {
    if (!(ratios[k] > 0.0 && ratios[k] <= 1.0)) throw ValidationError("swept ratios must lie in (0,1]");
    if (k > 0 && !(ratios[k] > ratios[k - 1])) throw ValidationError("swept ratios must be strictly ascending");
  }

  auto run_one = [&](double a) {
    OptimConfig c = cfg;
    c.ratio = a;
    return optimize_mask(x, model, target_class, c);
  };

  std::vector<AttributionResult> results;
  if (options.parallel && model.concurrency_safe() && ratios.size() > 1) {
    std::vector<std::future<AttributionResult>> jobs;
    for (double a : ratios) jobs.push_back(std::async(std::launch::async, run_one, a));
    for (auto& j : jobs) results.push_back(j.get());
  } else {
    for (double a : ratios) {
      results.push_back(run_one(a));
      if (!options.exhaustive && results.back().final_score >= phi0) break;
    }
  }

  ExtremalOutcome out;
  out.phi0 = phi0;
  std::optional<std::size_t> chosen;
  for (std::size_t k = 0; k < results.size(); ++k) {
    out.evaluated.push_back({ratios[k], results[k].final_score, results[k].realized_ratio});
    if (!chosen && results[k].final_score >= phi0) chosen = k;
  }
  if (chosen) {
    out.ratio = ratios[*chosen];
    out.result = std::move(results[*chosen]);
  } else {
    out.bound_unmet = true;
    out.ratio = ratios.back();
    out.result = std::move(results.back());
  }
  return out;
}

}  // namespace videxp
