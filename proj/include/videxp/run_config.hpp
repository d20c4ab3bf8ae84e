#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "videxp/bridge.hpp"
#include "videxp/models.hpp"
#include "videxp/optimizer.hpp"

namespace videxp {

struct ExtremalSettings {
  std::vector<double> ratios{0.02, 0.05, 0.1, 0.2};
  Phi0Mode phi0_mode = Phi0Mode::Relative;
  std::optional<double> phi0_value;  // factor, epsilon or absolute bound depending on the mode
  bool exhaustive = false;
};

/// Effective configuration of one CLI run. See docs/config.md.
struct RunConfig {
  /// builtin:planted | builtin:linear | builtin:constant | bridge:<command line>
  std::string model = "builtin:planted";
  nlohmann::json model_options = nlohmann::json::object();
  std::optional<std::string> input;
  std::optional<std::string> output_dir;
  Index target_class = 1;
  OptimConfig optim;
  ExtremalSettings extremal;
  BridgeOptions bridge;
};

/// Strict parse: unknown keys and ill-typed values are ValidationErrors.
RunConfig parse_run_config(const nlohmann::json& doc);
RunConfig load_run_config(const std::filesystem::path& path);
nlohmann::json to_json(const RunConfig& cfg);
/// Re-validates everything, including model-source syntax and options.
void validate(const RunConfig& cfg);

nlohmann::json to_json(const OptimConfig& cfg);
/// Applies the keys present in `j` on top of `cfg`.
void merge_optim(const nlohmann::json& j, OptimConfig& cfg);

/// "0.02,0.05,0.1,0.2" or a preset name: r2plus1d, vgg16lstm.
std::vector<double> parse_ratio_list(const std::string& text);

/// Planted-model description written by `videxp bench`, one entry per video.
struct PlantedSpec {
  VideoTensor::Dims dims{};
  PixelBox region;
  FrameSpan segment;
  double alpha = 1.2;
  std::vector<PlantedRegionModel::Decoy> decoys;

  PlantedRegionModel model() const;
};

nlohmann::json to_json(const PlantedSpec& spec);
PlantedSpec planted_spec_from_json(const nlohmann::json& j);
PlantedSpec planted_spec(const PlantedInstance& inst);

/// Builds the configured model for videos of the given dims. builtin:planted
/// reads an inline spec, or the entry `video_id` of a manifest; without an
/// explicit manifest path it uses planted.json in `video_dir`.
std::unique_ptr<ModelAdapter> make_model(const RunConfig& cfg, const VideoTensor::Dims& dims,
                                         const std::string& video_id = "",
                                         const std::filesystem::path& video_dir = ".");

}  // namespace videxp
