#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "videxp/tensor.hpp"

namespace videxp {

/// Pixel box in (x, y) = (column, row) order, inclusive on both ends.
struct Box {
  Index x_min = 0, y_min = 0, x_max = 0, y_max = 0;
};

struct FrameBox {
  Index frame = 0;
  Box box;
};

struct Segment {
  Index t_start = 0, t_end = 0;  // inclusive
};

struct VideoAnnotation {
  std::vector<FrameBox> boxes;
  std::vector<Segment> segments;
  std::optional<Index> label;
};

/// Annotations keyed by video id. See docs/annotations.md for the JSON schema.
struct AnnotationSet {
  std::map<std::string, VideoAnnotation> videos;
};

AnnotationSet parse_annotations(const nlohmann::json& doc);
nlohmann::json to_json(const AnnotationSet& set);
AnnotationSet read_annotations(const std::string& path);
void write_annotations(const std::string& path, const AnnotationSet& set);

/// Throws ValidationError when a box or segment falls outside (T, H, W).
void validate_annotation(const VideoAnnotation& ann, Index frames, Index height, Index width);

inline constexpr double kPointingTolerance = 7.0;

struct PixelPoint {
  Index row = 0, col = 0;
};

/// Euclidean distance from a pixel to the box rectangle, 0 inside.
double point_box_distance(const PixelPoint& p, const Box& box);

/// Largest pixel of frame t; ties go to the smallest row-major index.
PixelPoint frame_argmax(const MaskVolume& m, Index t);

/// Frame whose largest pixel is largest; ties go to the earliest frame.
Index temporal_argmax(const MaskVolume& m);

struct FrameHit {
  Index frame = 0;
  PixelPoint peak;
  double distance = 0.0;
  bool hit = false;
};

/// One entry per annotated box, in annotation order.
std::vector<FrameHit> spatial_pointing(const MaskVolume& m, const VideoAnnotation& ann,
                                       double tolerance = kPointingTolerance);

bool temporal_pointing(const MaskVolume& m, const Segment& segment);

struct HitCount {
  Index hits = 0;
  Index total = 0;

  double rate() const;  // throws ValidationError when total == 0
  HitCount& operator+=(const HitCount& o) {
    hits += o.hits;
    total += o.total;
    return *this;
  }
};

/// Per-video outcome; S-PT counts annotated frames, T-PT counts segments.
struct VideoScore {
  std::string video_id;
  HitCount spatial;
  HitCount temporal;
};

VideoScore score_video(const std::string& video_id, const MaskVolume& m, const VideoAnnotation& ann,
                       double tolerance = kPointingTolerance);

struct MetricReport {
  std::string method;
  std::string model;
  HitCount spatial;   // pooled over annotated frames
  HitCount temporal;  // pooled over videos with a segment
  double spatial_per_video_mean = 0.0;  // mean of per-video S-PT rates
  Index spatial_videos = 0;
  std::vector<std::string> warnings;
  std::vector<VideoScore> videos;
};

/// Pools hits and totals. Videos with no annotated frame are excluded from
/// S-PT with a warning. Empty input is a ValidationError.
MetricReport aggregate(const std::vector<VideoScore>& scores, const std::string& method = "",
                       const std::string& model = "");
/// Merges reports by summing their hits and totals.
MetricReport merge(const std::vector<MetricReport>& reports);

nlohmann::json to_json(const MetricReport& report);
/// Aligned plain-text table, one row per report.
std::string format_table(const std::vector<MetricReport>& reports);

}  // namespace videxp
