#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "videxp/mask_param.hpp"
#include "videxp/models.hpp"
#include "videxp/objectives.hpp"
#include "videxp/perturbation.hpp"

namespace videxp {

enum class Method {
  EP2D,         // per-frame extremal perturbation, frames optimized independently
  EP3D,         // one spatiotemporal area budget
  EP3D_EVENLY,  // identical area budget on every frame
  EP3D_GAUSS,   // EP3D with temporal Gaussian smoothing of the seed
  STEP,         // EP3D regularized by the ellipsoid smoothness loss
};

std::string to_string(Method m);
/// Accepts the enum spellings plus "EP", "EP-3D", "EP-3D-Evenly", case-insensitively.
Method parse_method(const std::string& name);

struct OptimConfig {
  Method method = Method::EP3D;
  double ratio = 0.1;
  int iterations = 800;
  double step_size = 0.05;
  double momentum = 0.9;
  double lambda_max = 300.0;
  double lambda_warmup_fraction = 0.5;
  int delta_t = 1;                                 // EP3D_GAUSS
  std::array<Index, 3> kernel_extents{7, 11, 11};  // STEP, (T, H, W)
  std::array<Index, 3> kernel_stride{1, 11, 11};
  bool step_area_term = true;  // STEP adds the plain area loss to L_K
  std::optional<double> blur_sigma;  // unset: max(H, W) / 10
  int seed_factor = 7;
  double smooth_max_temperature = kDefaultSmoothMaxTemperature;
  double init_noise = 0.01;
  std::uint64_t rng_seed = 0;
};

void validate(const OptimConfig& cfg);

struct TrajectoryPoint {
  int iteration = 0;
  Index frame = -1;  // EP2D: frame being optimized
  double score = 0.0;
  double regularizer = 0.0;
  double realized_ratio = 0.0;
  double lambda = 0.0;
};

/// Central region covered by the seed; the mask is 0 outside it.
struct CropWindow {
  Index row_offset = 0, col_offset = 0, height = 0, width = 0;
};

CropWindow crop_for_factor(Index height, Index width, int factor);

struct AttributionResult {
  Method method = Method::EP3D;
  double ratio = 0.0;
  MaskVolume mask;  // input resolution
  SeedMask<double> seed;
  CropWindow crop;
  std::vector<TrajectoryPoint> trajectory;
  double final_score = 0.0;
  double realized_ratio = 0.0;  // mean mask value over the crop
  int best_iteration = -1;
  std::vector<std::string> warnings;
};

/// Thrown when the model fails or gradients turn non-finite mid-run.
class OptimizationAborted : public ModelError {
 public:
  OptimizationAborted(const std::string& what, std::vector<TrajectoryPoint> partial)
      : ModelError(what), partial_(std::move(partial)) {}
  const std::vector<TrajectoryPoint>& partial_trajectory() const { return partial_; }

 private:
  std::vector<TrajectoryPoint> partial_;
};

/// SGD with momentum on the seed mask, clamped to [0,1] after each step.
/// The regularizer weight ramps linearly from 0 to lambda_max over the warmup
/// fraction. Returns the iterate minimizing lambda_max * R - Phi_c.
AttributionResult optimize_mask(const VideoTensor& x, ModelAdapter& model, Index target_class,
                                const OptimConfig& cfg);

/// lambda * sum |m| - Phi_c(m (x) x).
double preservation_objective(const MaskVolume& m, const VideoTensor& x, ModelAdapter& model, Index target_class,
                              double lambda, const BlurSpec& blur);

enum class Phi0Mode {
  Relative,  // factor * Phi_c(x), factor default 0.8
  Preserve,  // Phi_c(x) - epsilon, epsilon default 0.01
  Absolute,
};

Phi0Mode parse_phi0_mode(const std::string& name);
std::string to_string(Phi0Mode mode);
double resolve_phi0(Phi0Mode mode, double clean_score, std::optional<double> value = std::nullopt);

struct ExtremalOptions {
  bool exhaustive = false;  // run every ratio even after the bound is met
  bool parallel = true;     // honoured only for concurrency-safe models
};

struct RatioOutcome {
  double ratio = 0.0;
  double final_score = 0.0;
  double realized_ratio = 0.0;
};

struct ExtremalOutcome {
  double ratio = 0.0;  // a*
  bool bound_unmet = false;
  double phi0 = 0.0;
  AttributionResult result;
  std::vector<RatioOutcome> evaluated;
};

/// Smallest ratio whose optimized mask keeps Phi_c >= phi0.
ExtremalOutcome extremal_search(const VideoTensor& x, ModelAdapter& model, Index target_class, const OptimConfig& cfg,
                                const std::vector<double>& ratios, double phi0, const ExtremalOptions& options = {});

}  // namespace videxp
