#pragma once
#include <string>
#include <vector>

#include <json.hpp>

#include "textspot/config.hpp"
#include "textspot/model.hpp"

// Post-processing of model outputs into spotting results: greedy collapse
// transcript decoding, script routing, confidence filtering, and polygon
// assembly. Set prediction: no non-maximum suppression.

namespace textspot {

struct SpottingResult {
  Polyline polygon;      // 2N ring (empty in line mode)
  Polyline center_line;  // N points
  std::string transcript;
  double confidence = 0.0;
  int script = -1;  // -1 when monolingual
};

// Greedy CTC-style decoding: per-point argmax, collapse consecutive
// repeats, drop the blank/background class, map survivors to symbols.
inline std::string decode_transcript(const double* logits, int n_points, int classes,
                                     const std::string& alphabet) {
  std::string out;
  int prev = -1;
  for (int n = 0; n < n_points; ++n) {
    const double* row = logits + size_t(n) * size_t(classes);
    int arg = 0;
    double mx = row[0];
    for (int c = 1; c < classes; ++c)
      if (row[c] > mx) {
        mx = row[c];
        arg = c;
      }
    if (arg != prev && arg != kCtcBlank) {
      if (arg - 1 < int(alphabet.size())) out.push_back(alphabet[size_t(arg - 1)]);
    }
    prev = arg;
  }
  return out;
}

// Argmax routing over script logits; ties to the lowest script index.
inline int route_script(const double* script_logits, int script_count) {
  int arg = 0;
  double mx = script_logits[0];
  for (int s = 1; s < script_count; ++s)
    if (script_logits[s] > mx) {
      mx = script_logits[s];
      arg = s;
    }
  return arg;
}

// Final-layer readout: keep instances whose mean-sigmoid confidence clears
// the threshold, decode transcripts (routing through the predicted script's
// head in multilingual mode), and assemble the boundary polygon.
inline std::vector<SpottingResult> finalize(const SpotterOutput& out, const ModelConfig& cfg,
                                            double threshold = 0.4) {
  if (out.layers.empty()) throw std::runtime_error("finalize: no decoder outputs");
  const DecoderLayerOutput& last = out.layers.back();
  const int K = cfg.num_proposals;
  const int N = cfg.points_per_curve;
  std::vector<double> conf = SpotterModel::instance_confidence(last);
  std::vector<SpottingResult> results;
  for (int k = 0; k < K; ++k) {
    if (conf[size_t(k)] < threshold) continue;
    SpottingResult r;
    r.confidence = conf[size_t(k)];
    for (int n = 0; n < N; ++n)
      r.center_line.push_back({last.centers.at((k * N + n) * 2), last.centers.at((k * N + n) * 2 + 1)});
    int head = 0;
    if (cfg.multilingual) {
      r.script = route_script(last.script_logits.data().data() + size_t(k) * size_t(cfg.script_count()),
                              cfg.script_count());
      head = r.script;
    }
    const Tensor& cl = last.char_logits[size_t(head)];
    const int C = cl.shape()[2];
    r.transcript = decode_transcript(cl.data().data() + size_t(k) * size_t(N) * size_t(C), N, C,
                                     cfg.scripts[size_t(head)].alphabet);
    if (last.top_points.defined()) {
      Polyline top, bottom;
      for (int n = 0; n < N; ++n) {
        top.push_back({last.top_points.at((k * N + n) * 2), last.top_points.at((k * N + n) * 2 + 1)});
        bottom.push_back(
            {last.bottom_points.at((k * N + n) * 2), last.bottom_points.at((k * N + n) * 2 + 1)});
      }
      r.polygon.reserve(size_t(2 * N));
      for (int n = 0; n < N; ++n) r.polygon.push_back(top[size_t(n)]);
      for (int n = N; n-- > 0;) r.polygon.push_back(bottom[size_t(n)]);
    }
    results.push_back(std::move(r));
  }
  return results;
}

inline nlohmann::json result_to_json(const SpottingResult& r) {
  nlohmann::json poly = nlohmann::json::array();
  for (const Vec2& p : r.polygon) poly.push_back({p.x, p.y});
  nlohmann::json line = nlohmann::json::array();
  for (const Vec2& p : r.center_line) line.push_back({p.x, p.y});
  nlohmann::json j = {{"polygon", poly},
                      {"center_line", line},
                      {"transcript", r.transcript},
                      {"score", r.confidence}};
  if (r.script >= 0) j["script"] = r.script;
  return j;
}

inline SpottingResult result_from_json(const nlohmann::json& j) {
  SpottingResult r;
  for (const auto& p : j.at("polygon")) r.polygon.push_back({p[0], p[1]});
  for (const auto& p : j.at("center_line")) r.center_line.push_back({p[0], p[1]});
  r.transcript = j.at("transcript");
  r.confidence = j.at("score");
  r.script = j.value("script", -1);
  return r;
}

}  // namespace textspot
