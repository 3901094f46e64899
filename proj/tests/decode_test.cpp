#include <gtest/gtest.h>

#include <cmath>

#include "textspot/decode.hpp"
#include "textspot/rng.hpp"

using namespace textspot;

namespace {

// logits [N,C] with the argmax forced to a given class sequence
std::vector<double> logits_for(const std::vector<int>& argmax, int C) {
  std::vector<double> out(argmax.size() * size_t(C), 0.0);
  for (size_t n = 0; n < argmax.size(); ++n) out[n * size_t(C) + size_t(argmax[n])] = 5.0;
  return out;
}

}  // namespace

TEST(DecodeTranscript, CollapseRule) {
  // b h h e b l l b o  (b = background) -> "helo"
  std::vector<int> seq = {0, 8, 8, 5, 0, 12, 12, 0, 15};
  auto lv = logits_for(seq, 27);
  EXPECT_EQ(decode_transcript(lv.data(), int(seq.size()), 27, "abcdefghijklmnopqrstuvwxyz"),
            "helo");
}

TEST(DecodeTranscript, AllBackgroundEmpty) {
  std::vector<int> seq(6, 0);
  auto lv = logits_for(seq, 13);
  EXPECT_EQ(decode_transcript(lv.data(), 6, 13, "abcdefghijkl"), "");
}

TEST(DecodeTranscript, BackgroundSeparatesRepeats) {
  std::vector<int> seq = {1, 0, 1};
  auto lv = logits_for(seq, 3);
  EXPECT_EQ(decode_transcript(lv.data(), 3, 3, "ab"), "aa");
  // without the separator the repeat collapses
  std::vector<int> seq2 = {1, 1, 1};
  auto lv2 = logits_for(seq2, 3);
  EXPECT_EQ(decode_transcript(lv2.data(), 3, 3, "ab"), "a");
}

TEST(DecodeTranscript, ArgmaxInvariantUnderMonotoneTransform) {
  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> lv(8 * 5);
    for (auto& v : lv) v = rng.uniform(-3, 3);
    std::string base = decode_transcript(lv.data(), 8, 5, "abcd");
    std::vector<double> scaled = lv;
    double a = rng.uniform(0.5, 4.0), b = rng.uniform(-2, 2);
    for (auto& v : scaled) v = a * v + b;
    EXPECT_EQ(decode_transcript(scaled.data(), 8, 5, "abcd"), base);
  }
}

TEST(RouteScript, ArgmaxWithLowTieBreak) {
  std::vector<double> one_hot = {-1, 3, 0};
  EXPECT_EQ(route_script(one_hot.data(), 3), 1);
  std::vector<double> tie = {2, 2, 1};
  EXPECT_EQ(route_script(tie.data(), 3), 0);
  // temperature scaling never changes the routing
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> lv(4);
    for (auto& v : lv) v = rng.uniform(-2, 2);
    int base = route_script(lv.data(), 4);
    double t = rng.uniform(0.1, 5.0);
    std::vector<double> scaled = lv;
    for (auto& v : scaled) v *= t;
    EXPECT_EQ(route_script(scaled.data(), 4), base);
  }
}

namespace {

// hand-built single-layer output for finalize tests
SpotterOutput make_output(const ModelConfig& cfg, const std::vector<double>& inst_logit_rows) {
  SpotterOutput out;
  const int K = cfg.num_proposals, N = cfg.points_per_curve;
  DecoderLayerOutput lo;
  std::vector<double> inst(size_t(K) * size_t(N), 0.0);
  for (int k = 0; k < K; ++k)
    for (int n = 0; n < N; ++n) inst[size_t(k * N + n)] = inst_logit_rows[size_t(k)];
  lo.inst_logits = Tensor::from({K, N}, inst);
  std::vector<double> centers(size_t(K) * size_t(N) * 2, 0.0);
  for (int k = 0; k < K; ++k)
    for (int n = 0; n < N; ++n) {
      centers[size_t((k * N + n) * 2)] = 0.1 + 0.8 * n / double(N - 1);
      centers[size_t((k * N + n) * 2 + 1)] = 0.2 + 0.2 * k;
    }
  lo.centers = Tensor::from({K, N, 2}, centers);
  int C = cfg.scripts[0].resolved_classes();
  std::vector<double> chad(size_t(K) * size_t(N) * size_t(C), 0.0);
  for (int k = 0; k < K; ++k)
    for (int n = 0; n < N; ++n) chad[size_t((k * N + n) * C) + 1] = 4.0;  // all 'a'
  lo.char_logits.push_back(Tensor::from({K, N, C}, chad));
  std::vector<double> bd(size_t(K) * size_t(N) * 2, 0.0);
  for (auto& v : bd) v = -0.05;
  lo.top_points = add(lo.centers, Tensor::from({K, N, 2}, bd));
  for (auto& v : bd) v = 0.05;
  lo.bottom_points = add(lo.centers, Tensor::from({K, N, 2}, bd));
  out.layers.push_back(std::move(lo));
  return out;
}

}  // namespace

TEST(Finalize, ThresholdFiltersAndMonotonicity) {
  ModelConfig cfg;
  cfg.num_proposals = 3;
  cfg.points_per_curve = 4;
  SpotterOutput out = make_output(cfg, {2.0, 0.0, -2.0});  // conf ~ .88, .5, .12
  auto all = finalize(out, cfg, 0.0);
  EXPECT_EQ(all.size(), 3u);
  auto none = finalize(out, cfg, 1.0 + 1e-9);
  EXPECT_TRUE(none.empty());
  size_t prev = all.size();
  for (double th : {0.2, 0.4, 0.6, 0.95}) {
    size_t n = finalize(out, cfg, th).size();
    EXPECT_LE(n, prev);  // non-increasing in threshold
    prev = n;
  }
  auto mid = finalize(out, cfg, 0.4);
  ASSERT_EQ(mid.size(), 2u);
  EXPECT_NEAR(mid[0].confidence, sigmoid_scalar(2.0), 1e-12);
  EXPECT_EQ(mid[0].transcript, "a");
  ASSERT_EQ(mid[0].polygon.size(), 8u);  // 2N ring
  EXPECT_NEAR(mid[0].polygon[0].y, 0.2 - 0.05, 1e-12);
  EXPECT_NEAR(mid[0].polygon[7].y, 0.2 + 0.05, 1e-12);
}

TEST(Finalize, DuplicatesKeptNoNms) {
  ModelConfig cfg;
  cfg.num_proposals = 2;
  cfg.points_per_curve = 4;
  SpotterOutput out = make_output(cfg, {3.0, 3.0});
  // make instance 1 an exact duplicate of instance 0
  auto& lo = out.layers[0];
  std::vector<double> c = lo.centers.data();
  for (int n = 0; n < 4; ++n) {
    c[size_t((4 + n) * 2)] = c[size_t(n * 2)];
    c[size_t((4 + n) * 2 + 1)] = c[size_t(n * 2 + 1)];
  }
  lo.centers = Tensor::from({2, 4, 2}, c);
  auto res = finalize(out, cfg, 0.4);
  EXPECT_EQ(res.size(), 2u);  // both survive, set prediction
}

TEST(Finalize, JsonRoundTrip) {
  ModelConfig cfg;
  cfg.num_proposals = 1;
  cfg.points_per_curve = 4;
  SpotterOutput out = make_output(cfg, {1.0});
  auto res = finalize(out, cfg, 0.1);
  ASSERT_EQ(res.size(), 1u);
  res[0].script = 1;
  nlohmann::json j = result_to_json(res[0]);
  SpottingResult back = result_from_json(j);
  EXPECT_EQ(back.transcript, res[0].transcript);
  EXPECT_EQ(back.script, 1);
  EXPECT_EQ(back.polygon.size(), res[0].polygon.size());
  EXPECT_DOUBLE_EQ(back.confidence, res[0].confidence);
}
