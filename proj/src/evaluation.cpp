#include "videxp/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "videxp/errors.hpp"

namespace videxp {

namespace {

using json = nlohmann::json;

void reject_unknown(const json& obj, const std::set<std::string>& allowed, const std::string& where) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    if (!allowed.count(it.key())) throw ValidationError("unknown key '" + it.key() + "' in " + where);
  }
}

Index as_index(const json& v, const std::string& what) {
  if (!v.is_number_integer()) throw ValidationError(what + " must be an integer");
  return v.get<Index>();
}

Box parse_box(const json& v, const std::string& where) {
  if (!v.is_array() || v.size() != 4) throw ValidationError(where + ": box must be [x_min, y_min, x_max, y_max]");
  Box b{as_index(v[0], where), as_index(v[1], where), as_index(v[2], where), as_index(v[3], where)};
  if (b.x_min > b.x_max || b.y_min > b.y_max) throw ValidationError(where + ": box has min > max");
  return b;
}

Segment parse_segment(const json& v, const std::string& where) {
  if (!v.is_array() || v.size() != 2) throw ValidationError(where + ": segment must be [t_start, t_end]");
  Segment s{as_index(v[0], where), as_index(v[1], where)};
  if (s.t_start > s.t_end) throw ValidationError(where + ": segment has t_start > t_end");
  return s;
}

std::string fmt(double v, int prec) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", prec, v);
  return buf;
}

}  // namespace

AnnotationSet parse_annotations(const json& doc) {
  if (!doc.is_object()) throw ValidationError("annotation document must be a JSON object");
  reject_unknown(doc, {"videos", "format"}, "annotation document");
  if (doc.contains("format") && doc["format"] != "videxp-annotations/1") {
    throw ValidationError("unsupported annotation format " + doc["format"].dump());
  }
  if (!doc.contains("videos") || !doc["videos"].is_object()) {
    throw ValidationError("annotation document needs a 'videos' object");
  }
  AnnotationSet set;
  for (auto it = doc["videos"].begin(); it != doc["videos"].end(); ++it) {
    const std::string where = "video '" + it.key() + "'";
    const json& v = it.value();
    if (!v.is_object()) throw ValidationError(where + " must be an object");
    reject_unknown(v, {"label", "boxes", "segments", "dims"}, where);
    VideoAnnotation ann;
    if (v.contains("label")) ann.label = as_index(v["label"], where + " label");
    if (v.contains("boxes")) {
      if (!v["boxes"].is_array()) throw ValidationError(where + ": boxes must be an array");
      for (const json& fb : v["boxes"]) {
        if (!fb.is_object()) throw ValidationError(where + ": box entries must be objects");
        reject_unknown(fb, {"frame", "box"}, where + " box entry");
        if (!fb.contains("frame") || !fb.contains("box")) throw ValidationError(where + ": box entry needs frame and box");
        const Index f = as_index(fb["frame"], where + " frame");
        if (f < 0) throw ValidationError(where + ": negative frame index");
        ann.boxes.push_back({f, parse_box(fb["box"], where)});
      }
    }
    if (v.contains("segments")) {
      if (!v["segments"].is_array()) throw ValidationError(where + ": segments must be an array");
      for (const json& s : v["segments"]) ann.segments.push_back(parse_segment(s, where));
    }
    for (const auto& s : ann.segments)
      if (s.t_start < 0) throw ValidationError(where + ": negative segment start");
    for (const auto& fb : ann.boxes)
      if (fb.box.x_min < 0 || fb.box.y_min < 0) throw ValidationError(where + ": negative box coordinate");
    if (v.contains("dims")) {
      const json& d = v["dims"];
      if (!d.is_array() || d.size() != 3) throw ValidationError(where + ": dims must be [T, H, W]");
      validate_annotation(ann, as_index(d[0], where), as_index(d[1], where), as_index(d[2], where));
    }
    set.videos.emplace(it.key(), std::move(ann));
  }
  return set;
}

json to_json(const AnnotationSet& set) {
  json videos = json::object();
  for (const auto& [id, ann] : set.videos) {
    json v = json::object();
    if (ann.label) v["label"] = *ann.label;
    json boxes = json::array();
    for (const auto& fb : ann.boxes) {
      boxes.push_back({{"frame", fb.frame}, {"box", {fb.box.x_min, fb.box.y_min, fb.box.x_max, fb.box.y_max}}});
    }
    v["boxes"] = std::move(boxes);
    json segs = json::array();
    for (const auto& s : ann.segments) segs.push_back({s.t_start, s.t_end});
    v["segments"] = std::move(segs);
    videos[id] = std::move(v);
  }
  return {{"format", "videxp-annotations/1"}, {"videos", std::move(videos)}};
}

AnnotationSet read_annotations(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open annotations " + path);
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ValidationError("annotations " + path + ": " + e.what());
  }
  return parse_annotations(doc);
}

void write_annotations(const std::string& path, const AnnotationSet& set) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write annotations " + path);
  out << to_json(set).dump(2) << '\n';
  if (!out) throw IoError("write failed for " + path);
}

void validate_annotation(const VideoAnnotation& ann, Index frames, Index height, Index width) {
  for (const auto& fb : ann.boxes) {
    if (fb.frame < 0 || fb.frame >= frames) {
      throw ValidationError("annotated frame " + std::to_string(fb.frame) + " outside [0," + std::to_string(frames) + ")");
    }
    const Box& b = fb.box;
    if (b.x_min < 0 || b.y_min < 0 || b.x_max >= width || b.y_max >= height || b.x_min > b.x_max ||
        b.y_min > b.y_max) {
      throw ValidationError("box outside a " + std::to_string(height) + "x" + std::to_string(width) + " frame");
    }
  }
  for (const auto& s : ann.segments) {
    if (s.t_start < 0 || s.t_end >= frames || s.t_start > s.t_end) {
      throw ValidationError("segment [" + std::to_string(s.t_start) + "," + std::to_string(s.t_end) + "] outside [0," +
                            std::to_string(frames) + ")");
    }
  }
}

double point_box_distance(const PixelPoint& p, const Box& box) {
  const double dx = static_cast<double>(std::max({box.x_min - p.col, Index{0}, p.col - box.x_max}));
  const double dy = static_cast<double>(std::max({box.y_min - p.row, Index{0}, p.row - box.y_max}));
  return std::hypot(dx, dy);
}

PixelPoint frame_argmax(const MaskVolume& m, Index t) {
  const Index H = m.dim(1), W = m.dim(2);
  const double* base = m.data().data() + t * H * W;
  Index best = 0;
  for (Index k = 1; k < H * W; ++k)
    if (base[k] > base[best]) best = k;
  return {best / W, best % W};
}

Index temporal_argmax(const MaskVolume& m) {
  Index best = 0;
  double best_value = -std::numeric_limits<double>::infinity();
  for (Index t = 0; t < m.dim(0); ++t) {
    const double v = frame(m, t).maxCoeff();
    if (v > best_value) {
      best_value = v;
      best = t;
    }
  }
  return best;
}

std::vector<FrameHit> spatial_pointing(const MaskVolume& m, const VideoAnnotation& ann, double tolerance) {
  validate_annotation(ann, m.dim(0), m.dim(1), m.dim(2));
  std::vector<FrameHit> out;
  out.reserve(ann.boxes.size());
  for (const auto& fb : ann.boxes) {
    FrameHit h;
    h.frame = fb.frame;
    h.peak = frame_argmax(m, fb.frame);
    h.distance = point_box_distance(h.peak, fb.box);
    h.hit = h.distance <= tolerance;
    out.push_back(h);
  }
  return out;
}

bool temporal_pointing(const MaskVolume& m, const Segment& segment) {
  if (segment.t_start < 0 || segment.t_end >= m.dim(0) || segment.t_start > segment.t_end) {
    throw ValidationError("segment outside the mask's frame range");
  }
  const Index t = temporal_argmax(m);
  return segment.t_start <= t && t <= segment.t_end;
}

double HitCount::rate() const {
  if (total <= 0) throw ValidationError("hit rate of an empty count");
  return static_cast<double>(hits) / static_cast<double>(total);
}

VideoScore score_video(const std::string& video_id, const MaskVolume& m, const VideoAnnotation& ann,
                       double tolerance) {
  VideoScore s;
  s.video_id = video_id;
  for (const auto& h : spatial_pointing(m, ann, tolerance)) {
    s.spatial.hits += h.hit;
    ++s.spatial.total;
  }
  if (!ann.segments.empty()) {
    const Index t = temporal_argmax(m);
    const bool hit = std::any_of(ann.segments.begin(), ann.segments.end(),
                                 [&](const Segment& g) { return g.t_start <= t && t <= g.t_end; });
    s.temporal = {hit ? 1 : 0, 1};
  }
  return s;
}

MetricReport aggregate(const std::vector<VideoScore>& scores, const std::string& method, const std::string& model) {
  if (scores.empty()) throw ValidationError("nothing to aggregate");
  MetricReport r;
  r.method = method;
  r.model = model;
  double per_video = 0.0;
  for (const auto& s : scores) {
    if (s.spatial.total == 0) {
      r.warnings.push_back("video '" + s.video_id + "' has no annotated frames; excluded from S-PT");
    } else {
      r.spatial += s.spatial;
      per_video += s.spatial.rate();
      ++r.spatial_videos;
    }
    r.temporal += s.temporal;
  }
  if (r.spatial.total == 0 && r.temporal.total == 0) throw ValidationError("no annotated frames or segments");
  r.spatial_per_video_mean = r.spatial_videos ? per_video / static_cast<double>(r.spatial_videos) : 0.0;
  r.videos = scores;
  return r;
}

MetricReport merge(const std::vector<MetricReport>& reports) {
  if (reports.empty()) throw ValidationError("nothing to merge");
  std::vector<VideoScore> all;
  for (const auto& r : reports) all.insert(all.end(), r.videos.begin(), r.videos.end());
  MetricReport m;
  m.method = reports.front().method;
  m.model = reports.front().model;
  double per_video = 0.0;
  for (const auto& r : reports) {
    m.spatial += r.spatial;
    m.temporal += r.temporal;
    per_video += r.spatial_per_video_mean * static_cast<double>(r.spatial_videos);
    m.spatial_videos += r.spatial_videos;
    m.warnings.insert(m.warnings.end(), r.warnings.begin(), r.warnings.end());
  }
  m.spatial_per_video_mean = m.spatial_videos ? per_video / static_cast<double>(m.spatial_videos) : 0.0;
  m.videos = std::move(all);
  return m;
}

json to_json(const MetricReport& r) {
  auto count = [](const HitCount& c) -> json {
    json j = {{"hits", c.hits}, {"total", c.total}};
    j["hit_rate"] = c.total > 0 ? json(c.rate()) : json(nullptr);
    return j;
  };
  json videos = json::array();
  for (const auto& v : r.videos) {
    videos.push_back({{"video_id", v.video_id}, {"s_pt", count(v.spatial)}, {"t_pt", count(v.temporal)}});
  }
  return {{"method", r.method},
          {"model", r.model},
          {"s_pt", count(r.spatial)},
          {"t_pt", count(r.temporal)},
          {"s_pt_per_video_mean", r.spatial_per_video_mean},
          {"warnings", r.warnings},
          {"videos", videos}};
}

std::string format_table(const std::vector<MetricReport>& reports) {
  const std::vector<std::string> head = {"method", "model", "S-PT", "hits/total", "S-PT/video", "T-PT", "hits/total"};
  std::vector<std::vector<std::string>> rows;
  for (const auto& r : reports) {
    auto rate = [](const HitCount& c) { return c.total > 0 ? fmt(c.rate(), 4) : std::string("-"); };
    auto frac = [](const HitCount& c) { return std::to_string(c.hits) + "/" + std::to_string(c.total); };
    rows.push_back({r.method.empty() ? "-" : r.method, r.model.empty() ? "-" : r.model, rate(r.spatial),
                    frac(r.spatial), r.spatial_videos ? fmt(r.spatial_per_video_mean, 4) : "-", rate(r.temporal),
                    frac(r.temporal)});
  }
  std::vector<std::size_t> width(head.size());
  for (std::size_t c = 0; c < head.size(); ++c) {
    width[c] = head[c].size();
    for (const auto& row : rows) width[c] = std::max(width[c], row[c].size());
  }
  std::ostringstream out;
  auto line = [&](const std::vector<std::string>& cells) {
    for (std::size_t c = 0; c < cells.size(); ++c) {
      if (c) out << "  ";
      // text columns left-aligned, numbers right-aligned
      if (c < 2) {
        out << cells[c] << std::string(width[c] - cells[c].size(), ' ');
      } else {
        out << std::string(width[c] - cells[c].size(), ' ') << cells[c];
      }
    }
    out << '\n';
  };
  line(head);
  std::size_t total = 0;
  for (auto w : width) total += w;
  out << std::string(total + 2 * (width.size() - 1), '-') << '\n';
  for (const auto& row : rows) line(row);
  return out.str();
}

}  // namespace videxp
