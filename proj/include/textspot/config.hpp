#pragma once
#include <string>
#include <vector>

#include <json.hpp>

#include "textspot/types.hpp"

namespace textspot {

// Model hyper-parameters. Defaults are the toy configuration; the full-size
// setting (D=256, 6+6 layers, K=100, 8 heads) is reachable through JSON.
struct ModelConfig {
  int d_model = 32;
  int heads = 4;
  int enc_layers = 2;
  int dec_layers = 3;
  int ffn_mult = 4;
  int num_proposals = 20;   // K
  int points_per_curve = 25;  // N
  int sampling_points = 4;    // deformable sampling points per head per level
  std::vector<int> backbone_channels = {8, 16};  // stem widths before the D-wide level maps
  std::vector<int> feature_strides = {8, 16};
  int image_h = 64;
  int image_w = 256;
  bool multilingual = false;
  bool line_mode = false;
  std::vector<ScriptSpec> scripts = {{"latin", "abcdefghijkl", 0}};
  uint64_t seed = 1;

  int script_count() const { return int(scripts.size()); }

  int level_pixels(int level) const {
    int s = feature_strides[size_t(level)];
    return (image_h / s) * (image_w / s);
  }

  int total_pixels() const {
    int t = 0;
    for (size_t l = 0; l < feature_strides.size(); ++l) t += level_pixels(int(l));
    return t;
  }

  void validate() const {
    auto fail = [](const std::string& m) { throw std::runtime_error("config: " + m); };
    if (d_model % 4 != 0) fail("d_model must be divisible by 4 for the positional encoding");
    if (d_model % heads != 0) fail("d_model must be divisible by heads");
    if (enc_layers < 0 || dec_layers < 0) fail("negative layer count");
    if (points_per_curve < 2) fail("points_per_curve must be >= 2");
    if (sampling_points < 1) fail("sampling_points must be >= 1");
    if (backbone_channels.size() != 2) fail("backbone_channels must list two stem widths");
    if (feature_strides.empty()) fail("need at least one feature level");
    for (size_t l = 0; l < feature_strides.size(); ++l)
      if (feature_strides[l] != (8 << l))
        fail("feature_strides must be 8,16,32,... got stride " + std::to_string(feature_strides[l]));
    int max_stride = feature_strides.back();
    if (image_h % max_stride != 0 || image_w % max_stride != 0)
      fail("image dims must be multiples of the largest stride");
    if (num_proposals < 1) fail("num_proposals must be >= 1");
    if (num_proposals > total_pixels())
      fail("num_proposals K=" + std::to_string(num_proposals) + " exceeds feature pixel count " +
           std::to_string(total_pixels()));
    if (scripts.empty()) fail("script table is empty");
    for (const auto& s : scripts) {
      if (s.name.empty()) fail("script with empty name");
      if (s.alphabet.empty() && s.classes <= 1) fail("script '" + s.name + "' has no classes");
    }
    if (!multilingual && scripts.size() != 1) fail("monolingual mode requires exactly one script");
  }

  nlohmann::json to_json() const {
    nlohmann::json sj = nlohmann::json::array();
    for (const auto& s : scripts)
      sj.push_back({{"name", s.name}, {"alphabet", s.alphabet}, {"classes", s.classes}});
    return {{"d_model", d_model},
            {"heads", heads},
            {"enc_layers", enc_layers},
            {"dec_layers", dec_layers},
            {"ffn_mult", ffn_mult},
            {"num_proposals", num_proposals},
            {"points_per_curve", points_per_curve},
            {"sampling_points", sampling_points},
            {"backbone_channels", backbone_channels},
            {"feature_strides", feature_strides},
            {"image_h", image_h},
            {"image_w", image_w},
            {"multilingual", multilingual},
            {"line_mode", line_mode},
            {"scripts", sj},
            {"seed", seed}};
  }

  static ModelConfig from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.d_model = j.value("d_model", c.d_model);
    c.heads = j.value("heads", c.heads);
    c.enc_layers = j.value("enc_layers", c.enc_layers);
    c.dec_layers = j.value("dec_layers", c.dec_layers);
    c.ffn_mult = j.value("ffn_mult", c.ffn_mult);
    c.num_proposals = j.value("num_proposals", c.num_proposals);
    c.points_per_curve = j.value("points_per_curve", c.points_per_curve);
    c.sampling_points = j.value("sampling_points", c.sampling_points);
    c.backbone_channels = j.value("backbone_channels", c.backbone_channels);
    c.feature_strides = j.value("feature_strides", c.feature_strides);
    c.image_h = j.value("image_h", c.image_h);
    c.image_w = j.value("image_w", c.image_w);
    c.multilingual = j.value("multilingual", c.multilingual);
    c.line_mode = j.value("line_mode", c.line_mode);
    c.seed = j.value("seed", c.seed);
    if (j.contains("scripts")) {
      c.scripts.clear();
      for (const auto& sj : j.at("scripts")) {
        ScriptSpec s;
        s.name = sj.at("name");
        s.alphabet = sj.value("alphabet", std::string());
        s.classes = sj.value("classes", 0);
        c.scripts.push_back(s);
      }
    }
    return c;
  }
};

}  // namespace textspot
