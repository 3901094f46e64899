#pragma once
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "textspot/bezier.hpp"
#include "textspot/rng.hpp"
#include "textspot/tensor.hpp"
#include "textspot/types.hpp"

// Synthetic glyph-on-curve dataset generation and annotation ingestion.
// Dataset layout on disk:
//   <dir>/manifest.json
//   <dir>/images/img_#####.pgm          (binary 8-bit P5)
//   <dir>/annotations/img_#####.json
// Full-mode instance schema:
//   {"top_ctrl": [[x,y]*4], "bottom_ctrl": [[x,y]*4], "transcript": str, "script": str}
// Line-mode instances carry {"center_line": [[x,y]*m]} instead of controls.

namespace textspot {

// 5x7 glyph patterns for 'a'..'z' (blocky, mutually distinct).
inline const char* const* glyph_rows(char symbol) {
  static const char* font[26][7] = {
      {"01110", "10001", "10001", "11111", "10001", "10001", "10001"},  // a
      {"11110", "10001", "10001", "11110", "10001", "10001", "11110"},  // b
      {"01111", "10000", "10000", "10000", "10000", "10000", "01111"},  // c
      {"11110", "10001", "10001", "10001", "10001", "10001", "11110"},  // d
      {"11111", "10000", "10000", "11110", "10000", "10000", "11111"},  // e
      {"11111", "10000", "10000", "11110", "10000", "10000", "10000"},  // f
      {"01111", "10000", "10000", "10111", "10001", "10001", "01110"},  // g
      {"10001", "10001", "10001", "11111", "10001", "10001", "10001"},  // h
      {"11111", "00100", "00100", "00100", "00100", "00100", "11111"},  // i
      {"00001", "00001", "00001", "00001", "10001", "10001", "01110"},  // j
      {"10001", "10010", "10100", "11000", "10100", "10010", "10001"},  // k
      {"10000", "10000", "10000", "10000", "10000", "10000", "11111"},  // l
      {"10001", "11011", "10101", "10101", "10001", "10001", "10001"},  // m
      {"10001", "11001", "10101", "10011", "10001", "10001", "10001"},  // n
      {"01110", "10001", "10001", "10001", "10001", "10001", "01110"},  // o
      {"11110", "10001", "10001", "11110", "10000", "10000", "10000"},  // p
      {"01110", "10001", "10001", "10001", "10101", "10010", "01101"},  // q
      {"11110", "10001", "10001", "11110", "10100", "10010", "10001"},  // r
      {"01111", "10000", "10000", "01110", "00001", "00001", "11110"},  // s
      {"11111", "00100", "00100", "00100", "00100", "00100", "00100"},  // t
      {"10001", "10001", "10001", "10001", "10001", "10001", "01110"},  // u
      {"10001", "10001", "10001", "01010", "01010", "00100", "00100"},  // v
      {"10001", "10001", "10001", "10101", "10101", "11011", "10001"},  // w
      {"10001", "01010", "00100", "00100", "00100", "01010", "10001"},  // x
      {"10001", "01010", "00100", "00100", "00100", "00100", "00100"},  // y
      {"11111", "00010", "00100", "00100", "01000", "10000", "11111"},  // z
  };
  if (symbol < 'a' || symbol > 'z') throw std::runtime_error("glyph_rows: no pattern for symbol");
  return font[symbol - 'a'];
}

inline bool glyph_pixel(char symbol, int row, int col) {
  return glyph_rows(symbol)[row][col] == '1';
}

// ---------------------------------------------------------------------------
// PGM image IO (binary P5, 8-bit)
// ---------------------------------------------------------------------------
struct Image {
  int h = 0, w = 0;
  std::vector<double> pixels;  // row-major, [0,1]

  double& at(int y, int x) { return pixels[size_t(y) * size_t(w) + size_t(x)]; }
  double at(int y, int x) const { return pixels[size_t(y) * size_t(w) + size_t(x)]; }

  Tensor tensor() const {
    return Tensor::from({h, w, 1}, pixels);
  }
};

inline void write_pgm(const std::string& path, const Image& img) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("write_pgm: cannot open " + path);
  f << "P5\n" << img.w << " " << img.h << "\n255\n";
  for (double v : img.pixels) {
    int b = int(std::lround(std::min(std::max(v, 0.0), 1.0) * 255.0));
    f.put(char(b));
  }
}

inline Image read_pgm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("read_pgm: cannot open " + path);
  std::string magic;
  f >> magic;
  if (magic != "P5") throw std::runtime_error("read_pgm: " + path + " is not binary PGM");
  int w, h, maxv;
  f >> w >> h >> maxv;
  f.get();
  Image img;
  img.w = w;
  img.h = h;
  img.pixels.resize(size_t(w) * size_t(h), 0.0);
  for (auto& v : img.pixels) {
    int b = f.get();
    if (b < 0) throw std::runtime_error("read_pgm: truncated " + path);
    v = double(b) / double(maxv);
  }
  return img;
}

// ---------------------------------------------------------------------------
// generation
// ---------------------------------------------------------------------------
struct GenConfig {
  int count = 200;
  int image_h = 64;
  int image_w = 256;
  int n_points = 25;
  std::vector<ScriptSpec> scripts = {{"latin", "abcdefghijkl", 0}};
  uint64_t seed = 7;
  int min_instances = 1;
  int max_instances = 3;
  int min_len = 3;
  int max_len = 8;
  double curvature = 1.0;  // vertical control-point swing, in glyph heights
  bool line_mode = false;
};

struct GeneratedInstance {
  BezierCurve top_ctrl, bottom_ctrl;
  std::string transcript;
  int script = 0;
  TextInstanceGT gt;  // sampled at n_points
};

namespace detail {

constexpr int kGlyphScale = 2;  // 5x7 pattern -> 10x14 pixels
constexpr int kGlyphW = 5 * kGlyphScale;
constexpr int kGlyphH = 7 * kGlyphScale;

inline TextInstanceGT sample_gt(const BezierCurve& top, const BezierCurve& bottom, int n,
                                const std::string& transcript, int script,
                                const ScriptSpec& spec) {
  TextInstanceGT gt;
  BezierCurve center = center_from_sides(top, bottom);
  gt.center = sample_uniform(center, n);
  gt.top = sample_uniform(top, n);
  gt.bottom = sample_uniform(bottom, n);
  gt.transcript = transcript;
  gt.labels = transcript_labels(transcript, spec);
  gt.script = script;
  return gt;
}

// One instance placed inside a horizontal stripe [y0,y1] (normalized).
// Returns false when a fitting curve was not found within the retry budget.
inline bool make_instance(Rng& rng, const GenConfig& cfg, double y0, double y1, int script,
                          GeneratedInstance& out) {
  const auto& spec = cfg.scripts[size_t(script)];
  const double W = cfg.image_w, H = cfg.image_h;
  const double glyph_h_norm = detail::kGlyphH / H;
  const double glyph_w_norm = detail::kGlyphW / W;

  for (int attempt = 0; attempt < 24; ++attempt) {
    int len = cfg.min_len + rng.randint(cfg.max_len - cfg.min_len + 1);
    std::string text;
    for (int i = 0; i < len; ++i) text.push_back(spec.alphabet[size_t(rng.randint(int(spec.alphabet.size())))]);
    // keep CTC-admissible for the configured point count
    int repeats = 0;
    for (size_t i = 0; i + 1 < text.size(); ++i)
      if (text[i] == text[i + 1]) ++repeats;
    if (cfg.n_points < len + repeats) continue;

    double x0 = rng.uniform(10.0 / W, 40.0 / W);
    double x1 = rng.uniform(1.0 - 40.0 / W, 1.0 - 10.0 / W);
    double span = x1 - x0;
    if (span * W < double(len) * (detail::kGlyphW + 2)) continue;

    const double band = rng.uniform(7.5, 8.5) / H;
    const double margin = 1.5 / H;
    const double ext_y = std::max(band, glyph_h_norm / 2) + margin;
    // curvature and slant budgets come out of the vertical slack the stripe
    // actually offers, so crowded images degrade toward straight bands
    double slack = 0.5 * (y1 - y0) - ext_y;
    if (slack <= 0) return false;
    double mid = 0.5 * (y0 + y1);
    double amp = cfg.curvature * rng.uniform(-1.0, 1.0) *
                 std::min(slack * 0.8, 0.5 * glyph_h_norm);
    double slant = rng.uniform(-1.0, 1.0) * std::min(slack * 0.5, 0.3 * glyph_h_norm);

    BezierCurve center;
    for (int j = 0; j < 4; ++j) {
      double tx = x0 + span * j / 3.0;
      double ty = mid + slant * (j / 3.0 - 0.5) + ((j == 1 || j == 2) ? amp : 0.0);
      center.ctrl[size_t(j)] = {tx, ty};
    }
    BezierCurve top = center, bottom = center;
    for (int j = 0; j < 4; ++j) {
      top.ctrl[size_t(j)].y -= band;
      bottom.ctrl[size_t(j)].y += band;
    }
    // boundary curves and the full glyph band must stay inside the stripe
    // with a safety margin against stamping roundoff
    bool ok = true;
    for (int j = 0; j < 4 && ok; ++j)
      ok = top.ctrl[size_t(j)].y >= y0 + margin && bottom.ctrl[size_t(j)].y <= y1 - margin &&
           top.ctrl[size_t(j)].y >= 0.0 && bottom.ctrl[size_t(j)].y <= 1.0;
    if (ok) {
      Polyline probe = sample_uniform(center_from_sides(top, bottom), 32);
      for (const Vec2& p : probe) {
        if (p.y - ext_y < y0 || p.y + ext_y > y1 || p.x - glyph_w_norm / 2 < margin ||
            p.x + glyph_w_norm / 2 > 1.0 - margin) {
          ok = false;
          break;
        }
      }
    }
    if (!ok) continue;
    out.top_ctrl = top;
    out.bottom_ctrl = bottom;
    out.transcript = text;
    out.script = script;
    out.gt = sample_gt(top, bottom, cfg.n_points, text, script, spec);
    return true;
  }
  return false;
}

inline void stamp_glyphs(Image& img, const GeneratedInstance& inst) {
  BezierCurve center = center_from_sides(inst.top_ctrl, inst.bottom_ctrl);
  const int L = int(inst.transcript.size());
  for (int i = 0; i < L; ++i) {
    double t = (i + 0.5) / double(L);
    Vec2 p = bernstein_eval(center, t);
    int cx = int(std::lround(p.x * img.w));
    int cy = int(std::lround(p.y * img.h));
    char symbol = inst.transcript[size_t(i)];
    for (int r = 0; r < 7; ++r)
      for (int c = 0; c < 5; ++c) {
        if (!glyph_pixel(symbol, r, c)) continue;
        for (int sy = 0; sy < detail::kGlyphScale; ++sy)
          for (int sx = 0; sx < detail::kGlyphScale; ++sx) {
            int y = cy - detail::kGlyphH / 2 + r * detail::kGlyphScale + sy;
            int x = cx - detail::kGlyphW / 2 + c * detail::kGlyphScale + sx;
            if (y >= 0 && y < img.h && x >= 0 && x < img.w) img.at(y, x) = 1.0;
          }
      }
  }
}

inline nlohmann::json point_list(const Polyline& pts) {
  nlohmann::json arr = nlohmann::json::array();
  for (const Vec2& p : pts) arr.push_back({p.x, p.y});
  return arr;
}

inline nlohmann::json ctrl_list(const BezierCurve& c) {
  nlohmann::json arr = nlohmann::json::array();
  for (const Vec2& p : c.ctrl) arr.push_back({p.x, p.y});
  return arr;
}

}  // namespace detail

struct GeneratedImage {
  Image image;
  std::vector<GeneratedInstance> instances;
};

// Deterministic per-image generation: stream (seed, index).
inline GeneratedImage generate_image(const GenConfig& cfg, int index) {
  Rng rng = Rng(cfg.seed).fork(uint64_t(index));
  GeneratedImage out;
  out.image.h = cfg.image_h;
  out.image.w = cfg.image_w;
  out.image.pixels.assign(size_t(cfg.image_h) * size_t(cfg.image_w), 0.0);
  int want = cfg.min_instances + rng.randint(cfg.max_instances - cfg.min_instances + 1);
  for (int i = 0; i < want; ++i) {
    double y0 = double(i) / want;
    double y1 = double(i + 1) / want;
    int script = rng.randint(int(cfg.scripts.size()));
    GeneratedInstance inst;
    if (detail::make_instance(rng, cfg, y0, y1, script, inst)) {
      detail::stamp_glyphs(out.image, inst);
      out.instances.push_back(std::move(inst));
    }
    // an unfittable stripe is skipped; the image keeps its other instances
  }
  return out;
}

inline void generate_dataset(const GenConfig& cfg, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(dir) / "images");
  fs::create_directories(fs::path(dir) / "annotations");
  nlohmann::json manifest;
  manifest["seed"] = cfg.seed;
  manifest["image_size"] = {cfg.image_h, cfg.image_w};
  manifest["n_points"] = cfg.n_points;
  manifest["line_mode"] = cfg.line_mode;
  auto& scripts = manifest["scripts"] = nlohmann::json::array();
  for (const auto& s : cfg.scripts) scripts.push_back({{"name", s.name}, {"alphabet", s.alphabet}});
  auto& images = manifest["images"] = nlohmann::json::array();
  char name[64];
  for (int i = 0; i < cfg.count; ++i) {
    GeneratedImage gi = generate_image(cfg, i);
    std::snprintf(name, sizeof(name), "img_%05d", i);
    std::string img_rel = std::string("images/") + name + ".pgm";
    std::string ann_rel = std::string("annotations/") + name + ".json";
    write_pgm((fs::path(dir) / img_rel).string(), gi.image);
    nlohmann::json ann;
    ann["image"] = img_rel;
    auto& inst_arr = ann["instances"] = nlohmann::json::array();
    for (const auto& inst : gi.instances) {
      nlohmann::json ij;
      if (cfg.line_mode) {
        ij["center_line"] = detail::point_list(inst.gt.center);
      } else {
        ij["top_ctrl"] = detail::ctrl_list(inst.top_ctrl);
        ij["bottom_ctrl"] = detail::ctrl_list(inst.bottom_ctrl);
      }
      ij["transcript"] = inst.transcript;
      ij["script"] = cfg.scripts[size_t(inst.script)].name;
      inst_arr.push_back(std::move(ij));
    }
    std::ofstream(fs::path(dir) / ann_rel) << ann.dump(1) << "\n";
    images.push_back({{"image", img_rel},
                      {"annotation", ann_rel},
                      {"width", cfg.image_w},
                      {"height", cfg.image_h},
                      {"instances", int(gi.instances.size())}});
  }
  std::ofstream(fs::path(dir) / "manifest.json") << manifest.dump(1) << "\n";
}

// ---------------------------------------------------------------------------
// ingestion
// ---------------------------------------------------------------------------
enum class AnnotationMode { kFull, kLine };

// Arc-length resampling of a polyline to n points.
inline Polyline resample_polyline(const Polyline& line, int n) {
  if (line.size() < 2) throw std::runtime_error("resample_polyline: need at least 2 points");
  if (n < 2) throw std::runtime_error("resample_polyline: n < 2");
  std::vector<double> cum(line.size(), 0.0);
  for (size_t i = 1; i < line.size(); ++i) {
    double dx = line[i].x - line[i - 1].x, dy = line[i].y - line[i - 1].y;
    cum[i] = cum[i - 1] + std::sqrt(dx * dx + dy * dy);
  }
  double total = cum.back();
  Polyline out(size_t(n), Vec2{});
  for (int k = 0; k < n; ++k) {
    double target = total * double(k) / double(n - 1);
    size_t seg = 1;
    while (seg + 1 < line.size() && cum[seg] < target) ++seg;
    double seg_len = cum[seg] - cum[seg - 1];
    double t = seg_len > 0 ? (target - cum[seg - 1]) / seg_len : 0.0;
    out[size_t(k)] = {line[seg - 1].x + t * (line[seg].x - line[seg - 1].x),
                      line[seg - 1].y + t * (line[seg].y - line[seg - 1].y)};
  }
  return out;
}

namespace detail {

inline Vec2 parse_point(const nlohmann::json& j, const std::string& where) {
  if (!j.is_array() || j.size() != 2)
    throw std::runtime_error(where + ": point must be [x,y]");
  double x = j[0].get<double>(), y = j[1].get<double>();
  if (!(x >= 0.0 && x <= 1.0 && y >= 0.0 && y <= 1.0))
    throw std::runtime_error(where + ": coordinate (" + std::to_string(x) + "," +
                             std::to_string(y) + ") outside [0,1]");
  return {x, y};
}

inline BezierCurve parse_ctrl(const nlohmann::json& j, const std::string& where) {
  if (!j.is_array() || j.size() != 4)
    throw std::runtime_error(where + ": expected 4 control points");
  BezierCurve c;
  for (int i = 0; i < 4; ++i) c.ctrl[size_t(i)] = parse_point(j[size_t(i)], where);
  return c;
}

}  // namespace detail

inline std::vector<TextInstanceGT> load_annotations(const std::string& path, AnnotationMode mode,
                                                    int n_points,
                                                    const std::vector<ScriptSpec>& scripts) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("load_annotations: cannot open " + path);
  nlohmann::json j;
  try {
    f >> j;
  } catch (const std::exception& e) {
    throw std::runtime_error("load_annotations: " + path + ": malformed JSON: " + e.what());
  }
  std::vector<TextInstanceGT> out;
  int idx = -1;
  for (const auto& ij : j.value("instances", nlohmann::json::array())) {
    ++idx;
    const std::string where = path + " instance " + std::to_string(idx);
    std::string transcript = ij.value("transcript", std::string());
    if (transcript.empty()) throw std::runtime_error(where + ": empty transcript");
    int script;
    if (ij.contains("script")) {
      std::string name = ij.at("script");
      script = -1;
      for (size_t s = 0; s < scripts.size(); ++s)
        if (scripts[s].name == name) script = int(s);
      if (script < 0) throw std::runtime_error(where + ": unknown script '" + name + "'");
    } else {
      script = infer_script(transcript, scripts);
    }
    TextInstanceGT gt;
    gt.transcript = transcript;
    gt.script = script;
    try {
      gt.labels = transcript_labels(transcript, scripts[size_t(script)]);  // validates symbols
    } catch (const std::exception& e) {
      throw std::runtime_error(where + ": " + e.what());
    }
    if (mode == AnnotationMode::kFull) {
      if (!ij.contains("top_ctrl") || !ij.contains("bottom_ctrl"))
        throw std::runtime_error(where + ": full mode requires top_ctrl and bottom_ctrl");
      BezierCurve top = detail::parse_ctrl(ij.at("top_ctrl"), where);
      BezierCurve bottom = detail::parse_ctrl(ij.at("bottom_ctrl"), where);
      BezierCurve center = center_from_sides(top, bottom);
      gt.top = sample_uniform(top, n_points);
      gt.bottom = sample_uniform(bottom, n_points);
      gt.center = sample_uniform(center, n_points);
    } else {
      nlohmann::json line;
      if (ij.contains("center_line")) {
        line = ij.at("center_line");
      } else if (ij.contains("top_ctrl")) {
        // full annotations consumed in line mode: derive the center line
        BezierCurve top = detail::parse_ctrl(ij.at("top_ctrl"), where);
        BezierCurve bottom = detail::parse_ctrl(ij.at("bottom_ctrl"), where);
        gt.center = sample_uniform(center_from_sides(top, bottom), n_points);
        // keep boundaries around for perturbation half-heights, then strip
        gt.top = sample_uniform(top, n_points);
        gt.bottom = sample_uniform(bottom, n_points);
        out.push_back(std::move(gt));
        continue;
      } else {
        throw std::runtime_error(where + ": line mode requires center_line");
      }
      Polyline pts;
      for (const auto& pj : line) pts.push_back(detail::parse_point(pj, where));
      gt.center = resample_polyline(pts, n_points);
    }
    out.push_back(std::move(gt));
  }
  return out;
}

// Strip boundary annotations (line-annotation training).
inline void drop_boundaries(std::vector<TextInstanceGT>& gts) {
  for (auto& gt : gts) {
    gt.top.clear();
    gt.bottom.clear();
  }
}

// Annotation-noise simulation: shift center points toward one randomly
// chosen boundary by shift_pct of the local half-height, then contract the
// polyline toward its midpoint by shrink_pct of its extent.
inline void perturb_lines(std::vector<TextInstanceGT>& gts, double shift_pct, double shrink_pct,
                          uint64_t seed) {
  if (shift_pct < 0 || shift_pct > 100 || shrink_pct < 0 || shrink_pct > 100)
    throw std::runtime_error("perturb_lines: percentages must be in [0,100]");
  Rng rng(seed ^ 0x5eedf00dULL);
  for (auto& gt : gts) {
    if (shift_pct > 0) {
      if (!gt.has_boundary())
        throw std::runtime_error("perturb_lines: shift needs boundary annotations for half-height");
      bool toward_top = rng.coin();
      const Polyline& target = toward_top ? gt.top : gt.bottom;
      for (size_t i = 0; i < gt.center.size(); ++i) {
        gt.center[i].x += (shift_pct / 100.0) * (target[i].x - gt.center[i].x);
        gt.center[i].y += (shift_pct / 100.0) * (target[i].y - gt.center[i].y);
      }
    }
    if (shrink_pct > 0 && !gt.center.empty()) {
      Vec2 mid = gt.center[gt.center.size() / 2];
      double keep = 1.0 - shrink_pct / 100.0;
      for (auto& p : gt.center) {
        p.x = mid.x + keep * (p.x - mid.x);
        p.y = mid.y + keep * (p.y - mid.y);
      }
    }
  }
}

// ---------------------------------------------------------------------------
// dataset handle
// ---------------------------------------------------------------------------
struct DatasetItem {
  std::string image_path;
  std::string annotation_path;
  std::vector<TextInstanceGT> gts;
};

struct Dataset {
  std::string dir;
  int image_h = 0, image_w = 0;
  int n_points = 0;
  std::vector<ScriptSpec> scripts;
  std::vector<DatasetItem> items;

  Image load_image(size_t idx) const { return read_pgm(items[idx].image_path); }
};

inline Dataset load_dataset(const std::string& dir, AnnotationMode mode, int n_points,
                            const std::vector<ScriptSpec>& scripts) {
  namespace fs = std::filesystem;
  std::ifstream mf((fs::path(dir) / "manifest.json").string());
  if (!mf) throw std::runtime_error("load_dataset: no manifest.json in " + dir);
  nlohmann::json manifest;
  mf >> manifest;
  Dataset ds;
  ds.dir = dir;
  ds.image_h = manifest.at("image_size")[0];
  ds.image_w = manifest.at("image_size")[1];
  ds.n_points = n_points;
  ds.scripts = scripts;
  for (const auto& entry : manifest.at("images")) {
    DatasetItem item;
    item.image_path = (fs::path(dir) / entry.at("image").get<std::string>()).string();
    item.annotation_path = (fs::path(dir) / entry.at("annotation").get<std::string>()).string();
    item.gts = load_annotations(item.annotation_path, mode, n_points, scripts);
    ds.items.push_back(std::move(item));
  }
  return ds;
}

}  // namespace textspot
