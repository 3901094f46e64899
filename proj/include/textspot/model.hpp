#pragma once
#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "textspot/bezier.hpp"
#include "textspot/config.hpp"
#include "textspot/matching.hpp"
#include "textspot/nn.hpp"
#include "textspot/query.hpp"

// The spotting model: a small stride-pyramid convnet, a deformable-attention
// encoder that emits scored Bezier center-curve proposals per pixel, and a
// decoder over explicit point queries (intra-group attention within an
// instance, inter-group across instances, deformable cross-attention into
// the image memory) with parallel prediction heads and per-layer coordinate
// refinement. Multilingual mode adds a script token per instance, per-script
// recognition heads, and a script-identification head.

namespace textspot {

struct FeatureLevel {
  Tensor map;  // [H, W, D]
  int h = 0, w = 0;
  std::vector<Vec2> centers;  // pixel-center coordinates, row-major
};

struct MultiScaleFeatures {
  std::vector<FeatureLevel> levels;

  int total_pixels() const {
    int t = 0;
    for (const auto& l : levels) t += l.h * l.w;
    return t;
  }

  std::vector<Vec2> all_centers() const {
    std::vector<Vec2> out;
    for (const auto& l : levels) out.insert(out.end(), l.centers.begin(), l.centers.end());
    return out;
  }
};

// Multi-scale deformable attention: per query, per head, per level, per
// point, a linear layer on the query predicts a sampling offset and an
// attention logit; weights are softmax-normalized over (levels x points)
// jointly; output is the attention-weighted sum of bilinearly sampled
// values through an output projection.
struct DeformableAttention {
  std::string name;
  int dim = 0, heads = 0, levels = 0, points = 0;

  void init(ParamStore& store, Rng& rng) {
    Linear val{name + ".val", dim, dim};
    val.init(store, rng);
    Linear out{name + ".out", dim, dim};
    out.init(store, rng);
    const int hlp = heads * levels * points;
    Linear off{name + ".off", dim, hlp * 2};
    off.init(store, rng, /*zero_weight=*/true);
    // spread the initial sampling pattern: head h looks along angle
    // 2*pi*h/heads, point p at radius p+1 (level-pixel units)
    Param& ob = store.get(name + ".off.b");
    for (int h = 0; h < heads; ++h) {
      double ang = 2.0 * M_PI * double(h) / double(heads);
      for (int l = 0; l < levels; ++l)
        for (int p = 0; p < points; ++p) {
          size_t base = size_t(((h * levels + l) * points + p) * 2);
          ob.value[base] = std::cos(ang) * double(p + 1);
          ob.value[base + 1] = std::sin(ang) * double(p + 1);
        }
    }
    Linear attn{name + ".attn", dim, hlp};
    attn.init(store, rng, /*zero_weight=*/true);  // uniform weights at start
  }

  // Value projection of per-level memory, done once per layer.
  std::vector<FeatureLevel> project_values(GraphContext& g,
                                           const std::vector<FeatureLevel>& mem) const {
    Linear val{name + ".val", dim, dim};
    std::vector<FeatureLevel> out;
    for (const auto& lvl : mem) {
      FeatureLevel v;
      v.h = lvl.h;
      v.w = lvl.w;
      v.centers = lvl.centers;
      v.map = reshape(val.forward(g, reshape(lvl.map, {lvl.h * lvl.w, dim})), {lvl.h, lvl.w, dim});
      out.push_back(std::move(v));
    }
    return out;
  }

  Tensor forward(GraphContext& g, const Tensor& queries, const std::vector<Vec2>& refs,
                 const std::vector<FeatureLevel>& values) const {
    const Shape& qs = queries.shape();
    if (qs.size() != 2 || qs[1] != dim)
      op_fail("deformable_attention", "queries must be [M,D], got " + shape_str(qs));
    const int M = qs[0];
    if (int(refs.size()) != M) op_fail("deformable_attention", "reference point count mismatch");
    for (const Vec2& r : refs)
      if (!std::isfinite(r.x) || !std::isfinite(r.y))
        op_fail("deformable_attention", "non-finite reference point");
    if (int(values.size()) != levels) op_fail("deformable_attention", "level count mismatch");
    const int hd = dim / heads;
    const int lp = levels * points;

    Linear off_l{name + ".off", dim, heads * lp * 2};
    Linear attn_l{name + ".attn", dim, heads * lp};
    Linear out_l{name + ".out", dim, dim};

    Tensor off = off_l.forward(g, queries);                     // [M, H*L*P*2]
    Tensor attn = softmax(reshape(attn_l.forward(g, queries), {M * heads, lp}));
    Tensor attn3 = reshape(attn, {M, heads, lp});

    std::vector<double> ref_flat(size_t(M) * 2);
    for (int i = 0; i < M; ++i) {
      ref_flat[size_t(2 * i)] = refs[size_t(i)].x;
      ref_flat[size_t(2 * i) + 1] = refs[size_t(i)].y;
    }
    Tensor ref_t = Tensor::from({M, 2}, std::move(ref_flat));

    std::vector<Tensor> head_outs;
    for (int h = 0; h < heads; ++h) {
      Tensor acc;
      for (int l = 0; l < levels; ++l) {
        const FeatureLevel& lvl = values[size_t(l)];
        // this head's value channels as an [H,W,hd] map
        Tensor vmap = reshape(
            slice(reshape(lvl.map, {lvl.h * lvl.w, dim}), 1, h * hd, hd), {lvl.h, lvl.w, hd});
        // offsets are in level-pixel units; normalize per level
        std::vector<double> sc = {1.0 / double(lvl.w), 1.0 / double(lvl.h)};
        Tensor scale = Tensor::from({2}, sc);
        for (int p = 0; p < points; ++p) {
          int idx = (h * levels + l) * points + p;
          Tensor o = slice(off, 1, idx * 2, 2);            // [M,2]
          Tensor loc = add(mul(o, scale), ref_t);          // [M,2]
          Tensor sampled = bilinear_sample(vmap, loc);     // [M,hd]
          Tensor w = reshape(slice(slice(attn3, 1, h, 1), 2, l * points + p, 1), {M});
          Tensor term = mul_rows(sampled, w);
          acc = acc.defined() ? add(acc, term) : term;
        }
      }
      head_outs.push_back(acc);
    }
    Tensor merged = concat(head_outs, 1);  // [M, D]
    return out_l.forward(g, merged);
  }
};

struct ProposalSet {
  std::vector<int> pixel_indices;      // K flat indices into the concatenated grid
  std::vector<double> scores;          // K, sorted descending
  std::vector<Polyline> points;        // K polylines of N sampled points (values)
  std::vector<BezierCurve> curves;     // K control-point quads (values)
};

struct EncoderOutput {
  std::vector<FeatureLevel> memory;  // post-encoder features
  Tensor all_scores;       // [P] sigmoid scores for every pixel candidate
  Tensor all_ctrl;         // [P,4,2] candidate control points
  ProposalSet proposals;   // top-K by score, ties to the lower pixel index
};

struct DecoderLayerOutput {
  Tensor inst_logits;               // [K,N]
  std::vector<Tensor> char_logits;  // per script head, [K,N,C_s]
  Tensor center_offsets;            // [K,N,2] raw refinement MLP output
  Tensor centers;                   // [K,N,2] refined coordinates in (0,1)
  Tensor boundary_offsets;          // [K,N,4] (undefined in line mode)
  Tensor top_points, bottom_points;   // [K,N,2] center + offsets
  Tensor script_logits;             // [K,S] (undefined when monolingual)
};

struct SpotterOutput {
  EncoderOutput encoder;
  std::vector<DecoderLayerOutput> layers;
  std::vector<std::vector<Vec2>> layer_ref_coords;  // per layer: K*N detached inputs
};

class SpotterModel {
 public:
  explicit SpotterModel(const ModelConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(cfg_.seed ^ 0xabcdef12345ULL);
    build(rng);
  }

  const ModelConfig& config() const { return cfg_; }
  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }

  // ---- backbone ----
  MultiScaleFeatures extract_features(GraphContext& g, const Tensor& image) const {
    const Shape& s = image.shape();
    if (s.size() != 3 || s[2] != 1)
      op_fail("extract_features", "image must be [H,W,1], got " + shape_str(s));
    if (s[0] != cfg_.image_h || s[1] != cfg_.image_w)
      op_fail("extract_features", "image size " + shape_str(s) + " does not match config " +
                                      std::to_string(cfg_.image_h) + "x" + std::to_string(cfg_.image_w));
    Tensor x = image;
    for (int i = 0; i < 3; ++i)
      x = relu(conv2d(x, g.use("backbone.c" + std::to_string(i) + ".w"),
                      g.use("backbone.c" + std::to_string(i) + ".b"), 2, 1));
    MultiScaleFeatures feats;
    Tensor cur = x;
    for (size_t l = 0; l < cfg_.feature_strides.size(); ++l) {
      if (l > 0)
        cur = relu(conv2d(cur, g.use("backbone.down" + std::to_string(l) + ".w"),
                          g.use("backbone.down" + std::to_string(l) + ".b"), 2, 1));
      FeatureLevel lvl;
      lvl.h = cur.shape()[0];
      lvl.w = cur.shape()[1];
      Tensor flat = reshape(cur, {lvl.h * lvl.w, cfg_.d_model});
      lvl.map = reshape(feat_norm_.forward(g, flat), {lvl.h, lvl.w, cfg_.d_model});
      lvl.centers.reserve(size_t(lvl.h) * size_t(lvl.w));
      for (int y = 0; y < lvl.h; ++y)
        for (int xcol = 0; xcol < lvl.w; ++xcol)
          lvl.centers.push_back({(xcol + 0.5) / double(lvl.w), (y + 0.5) / double(lvl.h)});
      feats.levels.push_back(std::move(lvl));
    }
    return feats;
  }

  // Frozen discrete structure for finite-difference probing: the top-K
  // selection and the per-layer detached reference coordinates are held
  // fixed so that probes exercise only the differentiable paths.
  struct FrozenStructure {
    std::vector<int> topk_pixels;
    std::vector<std::vector<Vec2>> layer_refs;  // flattened K*N per layer
  };

  // ---- encoder ----
  EncoderOutput encoder_forward(GraphContext& g, const MultiScaleFeatures& feats,
                                const std::vector<int>* frozen_topk = nullptr) const {
    const int D = cfg_.d_model;
    const int P = feats.total_pixels();
    std::vector<Vec2> centers = feats.all_centers();

    // flat [P,D] stream + constant positional encoding with level embedding
    std::vector<Tensor> parts;
    for (const auto& lvl : feats.levels) parts.push_back(reshape(lvl.map, {lvl.h * lvl.w, D}));
    Tensor x = parts.size() == 1 ? parts[0] : concat(parts, 0);
    Tensor pe = positional_encoding(centers, D);
    Tensor lvl_embed = g.use("enc.level_embed");  // [L,D]
    std::vector<int> lvl_rows;
    for (size_t l = 0; l < feats.levels.size(); ++l)
      lvl_rows.insert(lvl_rows.end(), size_t(feats.levels[l].h * feats.levels[l].w), int(l));
    Tensor pe_full = add(pe, gather_rows(lvl_embed, lvl_rows));

    auto to_levels = [&](const Tensor& flat) {
      std::vector<FeatureLevel> lv;
      int off = 0;
      for (const auto& l : feats.levels) {
        FeatureLevel v;
        v.h = l.h;
        v.w = l.w;
        v.centers = l.centers;
        v.map = reshape(slice(flat, 0, off, l.h * l.w), {l.h, l.w, D});
        off += l.h * l.w;
        lv.push_back(std::move(v));
      }
      return lv;
    };

    for (int layer = 0; layer < cfg_.enc_layers; ++layer) {
      const std::string ln = "enc.l" + std::to_string(layer);
      LayerNorm ln1{ln + ".ln1", D}, ln2{ln + ".ln2", D};
      Tensor h = ln1.forward(g, x);
      DeformableAttention attn = enc_attn(layer);
      Tensor q = add(h, pe_full);
      Tensor sa = attn.forward(g, q, centers, attn.project_values(g, to_levels(h)));
      x = add(x, sa);
      Tensor h2 = ln2.forward(g, x);
      Linear f1{ln + ".ffn1", D, D * cfg_.ffn_mult}, f2{ln + ".ffn2", D * cfg_.ffn_mult, D};
      x = add(x, f2.forward(g, relu(f1.forward(g, h2))));
    }
    Tensor memory = enc_out_norm_.forward(g, x);

    EncoderOutput out;
    out.memory = to_levels(memory);

    // per-pixel proposal: score + 8 control-point offsets around the anchor
    Linear score_head{"enc.score", D, 1};
    out.all_scores = reshape(sigmoid(score_head.forward(g, memory)), {P});
    Tensor offsets = prop_head_.forward(g, memory);  // [P,8]
    out.all_ctrl = apply_offset_transform_t(offsets, centers);

    // top-K selection on values; ties break toward the lower flat index
    const auto& sv = out.all_scores.data();
    const int K = cfg_.num_proposals;
    if (frozen_topk) {
      out.proposals.pixel_indices = *frozen_topk;
    } else {
      std::vector<int> order(size_t(P), 0);
      std::iota(order.begin(), order.end(), 0);
      std::stable_sort(order.begin(), order.end(),
                       [&](int a, int b) { return sv[size_t(a)] > sv[size_t(b)]; });
      out.proposals.pixel_indices.assign(order.begin(), order.begin() + K);
    }
    for (int k = 0; k < K; ++k) {
      int pi = out.proposals.pixel_indices[size_t(k)];
      out.proposals.scores.push_back(sv[size_t(pi)]);
      BezierCurve c;
      for (int j = 0; j < 4; ++j)
        c.ctrl[size_t(j)] = {out.all_ctrl.at((pi * 4 + j) * 2), out.all_ctrl.at((pi * 4 + j) * 2 + 1)};
      out.proposals.curves.push_back(c);
      out.proposals.points.push_back(sample_uniform(c, cfg_.points_per_curve));
    }
    return out;
  }

  // Differentiable N-point sampling of selected candidate curves.
  Tensor sample_candidate_points(const EncoderOutput& enc, const std::vector<int>& pixel_idx) const {
    const int M = int(pixel_idx.size());
    const int N = cfg_.points_per_curve;
    Tensor ctrl = gather_rows(enc.all_ctrl, pixel_idx);  // [M,4,2]
    Tensor bmat = bernstein_matrix(N);                   // [N,4]
    std::vector<double> tiled(size_t(M) * size_t(N) * 4);
    for (int m = 0; m < M; ++m)
      std::copy(bmat.data().begin(), bmat.data().end(), tiled.begin() + size_t(m) * size_t(N) * 4);
    Tensor bt = Tensor::from({M, N, 4}, std::move(tiled));
    return matmul(bt, ctrl);  // [M,N,2]
  }

  // ---- decoder ----
  SpotterOutput forward(GraphContext& g, const Tensor& image,
                        const FrozenStructure* frozen = nullptr) const {
    MultiScaleFeatures feats = extract_features(g, image);
    SpotterOutput out;
    out.encoder = encoder_forward(g, feats, frozen ? &frozen->topk_pixels : nullptr);
    decoder_forward(g, out, frozen ? &frozen->layer_refs : nullptr);
    return out;
  }

  void decoder_forward(GraphContext& g, SpotterOutput& out,
                       const std::vector<std::vector<Vec2>>* frozen_refs = nullptr) const {
    const int D = cfg_.d_model;
    const int K = cfg_.num_proposals;
    const int N = cfg_.points_per_curve;
    const bool ml = cfg_.multilingual;
    const int T = N + (ml ? 1 : 0);

    // initial point coordinates from the proposal curves (values only)
    std::vector<std::vector<Vec2>> coords;
    coords.resize(size_t(K));
    for (int k = 0; k < K; ++k) coords[size_t(k)] = out.encoder.proposals.points[size_t(k)];

    // content stream: shared point embeddings [N,D] (+ script token)
    Tensor content = g.use("dec.content");  // [N,D]
    Tensor x;
    {
      std::vector<Tensor> rows;
      rows.push_back(content);
      if (ml) rows.push_back(g.use("dec.script_token"));  // [1,D]
      Tensor per_inst = ml ? concat(rows, 0) : content;   // [T,D]
      std::vector<int> rep;
      rep.reserve(size_t(K) * size_t(T));
      for (int k = 0; k < K; ++k)
        for (int t = 0; t < T; ++t) rep.push_back(t);
      x = reshape(gather_rows(per_inst, rep), {K, T, D});
    }

    Tensor mask;
    if (ml) mask = additive_mask(script_attention_mask(N));

    auto restore_frozen = [&](int layer) {
      if (!frozen_refs) return;
      const std::vector<Vec2>& flat = (*frozen_refs)[size_t(layer)];
      for (int k = 0; k < K; ++k)
        for (int n = 0; n < N; ++n) coords[size_t(k)][size_t(n)] = flat[size_t(k * N + n)];
    };

    const int depth = cfg_.dec_layers;
    out.layers.reserve(size_t(depth));
    if (depth == 0) {
      restore_frozen(0);
      Tensor pq = positional_queries(g, coords, ml);
      Tensor readout = dec_out_norm_.forward(g, compose(pq, x));
      out.layer_ref_coords.push_back(flatten_coords(coords));
      out.layers.push_back(readout_heads(g, readout, coords));
      return;
    }

    for (int layer = 0; layer < depth; ++layer) {
      restore_frozen(layer);
      const std::string ln = "dec.l" + std::to_string(layer);
      Tensor pq = positional_queries(g, coords, ml);  // [K,T,D]
      LayerNorm ln1{ln + ".ln1", D}, ln2{ln + ".ln2", D}, ln3{ln + ".ln3", D}, ln4{ln + ".ln4", D};

      // intra-group self-attention over the T positions of each instance
      {
        Tensor h = ln1.forward(g, x);
        Tensor q = add(h, pq);
        MultiHeadAttention mha{ln + ".intra", D, cfg_.heads};
        Tensor sa = mha.forward(g, q, q, h, ml ? &mask : nullptr);
        x = add(x, sa);
      }
      // inter-group self-attention across the K instances per point index
      {
        Tensor h = ln2.forward(g, x);
        Tensor ht = permute(h, {1, 0, 2});    // [T,K,D]
        Tensor pt = permute(pq, {1, 0, 2});
        Tensor q = add(ht, pt);
        MultiHeadAttention mha{ln + ".inter", D, cfg_.heads};
        Tensor sa = mha.forward(g, q, q, ht, nullptr);
        x = add(x, permute(sa, {1, 0, 2}));
      }
      // deformable cross-attention into the encoder memory
      {
        Tensor h = ln3.forward(g, x);
        Tensor q = reshape(add(h, pq), {K * T, D});
        DeformableAttention attn = dec_attn(layer);
        std::vector<Vec2> refs = flatten_coords_with_token(coords, ml);
        Tensor ca = attn.forward(g, q, refs, attn.project_values(g, out.encoder.memory));
        x = add(x, reshape(ca, {K, T, D}));
      }
      // feed-forward
      {
        Tensor h = ln4.forward(g, x);
        Linear f1{ln + ".ffn1", D, D * cfg_.ffn_mult}, f2{ln + ".ffn2", D * cfg_.ffn_mult, D};
        x = add(x, f2.forward(g, relu(f1.forward(g, h))));
      }

      Tensor readout = dec_out_norm_.forward(g, x);
      out.layer_ref_coords.push_back(flatten_coords(coords));
      DecoderLayerOutput lo = readout_heads(g, readout, coords);
      // next layer's reference points are this layer's refined centers
      for (int k = 0; k < K; ++k)
        for (int n = 0; n < N; ++n)
          coords[size_t(k)][size_t(n)] = {lo.centers.at((k * N + n) * 2),
                                          lo.centers.at((k * N + n) * 2 + 1)};
      out.layers.push_back(std::move(lo));
    }
  }

  // Mean-sigmoid instance confidence of the last layer, one value per query.
  static std::vector<double> instance_confidence(const DecoderLayerOutput& layer) {
    const Shape& s = layer.inst_logits.shape();
    std::vector<double> conf(size_t(s[0]), 0.0);
    for (int k = 0; k < s[0]; ++k) {
      double acc = 0;
      for (int n = 0; n < s[1]; ++n) acc += sigmoid_scalar(layer.inst_logits.at(k * s[1] + n));
      conf[size_t(k)] = acc / double(s[1]);
    }
    return conf;
  }

  // Plain-value view of one layer for cost construction.
  PredSnapshot snapshot(const DecoderLayerOutput& layer) const {
    PredSnapshot p;
    p.K = cfg_.num_proposals;
    p.N = cfg_.points_per_curve;
    p.inst_prob = instance_confidence(layer);
    p.centers.resize(size_t(p.K));
    for (int k = 0; k < p.K; ++k) {
      Polyline line(size_t(p.N), Vec2{});
      for (int n = 0; n < p.N; ++n)
        line[size_t(n)] = {layer.centers.at((k * p.N + n) * 2), layer.centers.at((k * p.N + n) * 2 + 1)};
      p.centers[size_t(k)] = std::move(line);
    }
    for (const Tensor& cl : layer.char_logits) {
      PredSnapshot::HeadLogits hl;
      hl.classes = cl.shape()[2];
      hl.logits = cl.data();
      p.heads.push_back(std::move(hl));
    }
    if (layer.script_logits.defined()) {
      p.script_logits = layer.script_logits.data();
      p.script_count = cfg_.script_count();
    }
    return p;
  }

 private:
  ModelConfig cfg_;
  ParamStore store_;
  LayerNorm feat_norm_, enc_out_norm_, dec_out_norm_;
  Mlp prop_head_;       // encoder 3-layer MLP, 8-dim last layer
  Mlp coord_head_;      // shared refinement / center offset head
  Mlp boundary_head_;
  PositionalQueryHead pos_query_;

  DeformableAttention enc_attn(int layer) const {
    return {"enc.l" + std::to_string(layer) + ".attn", cfg_.d_model, cfg_.heads,
            int(cfg_.feature_strides.size()), cfg_.sampling_points};
  }
  DeformableAttention dec_attn(int layer) const {
    return {"dec.l" + std::to_string(layer) + ".attn", cfg_.d_model, cfg_.heads,
            int(cfg_.feature_strides.size()), cfg_.sampling_points};
  }

  static std::vector<Vec2> flatten_coords(const std::vector<std::vector<Vec2>>& coords) {
    std::vector<Vec2> flat;
    for (const auto& line : coords) flat.insert(flat.end(), line.begin(), line.end());
    return flat;
  }

  std::vector<Vec2> flatten_coords_with_token(const std::vector<std::vector<Vec2>>& coords,
                                              bool ml) const {
    if (!ml) return flatten_coords(coords);
    std::vector<Vec2> flat;
    const int mid = cfg_.points_per_curve / 2;
    for (const auto& line : coords) {
      flat.insert(flat.end(), line.begin(), line.end());
      flat.push_back(line[size_t(mid)]);  // script token anchors at the center point
    }
    return flat;
  }

  // [K,T,D] positional queries; the script token reuses the shared MLP on
  // the instance's center point.
  Tensor positional_queries(GraphContext& g, const std::vector<std::vector<Vec2>>& coords,
                            bool ml) const {
    const int K = int(coords.size());
    const int N = cfg_.points_per_curve;
    const int T = N + (ml ? 1 : 0);
    Tensor pq = pos_query_.forward(g, flatten_coords_with_token(coords, ml), cfg_.d_model);
    return reshape(pq, {K, T, cfg_.d_model});
  }

  DecoderLayerOutput readout_heads(GraphContext& g, const Tensor& readout,
                                   const std::vector<std::vector<Vec2>>& coords) const {
    const int D = cfg_.d_model;
    const int K = cfg_.num_proposals;
    const int N = cfg_.points_per_curve;
    const bool ml = cfg_.multilingual;
    DecoderLayerOutput lo;
    Tensor points = ml ? slice(readout, 1, 0, N) : readout;  // [K,N,D]

    Linear inst{"head.inst", D, 1};
    lo.inst_logits = reshape(inst.forward(g, points), {K, N});

    for (int s = 0; s < cfg_.script_count(); ++s) {
      int classes = cfg_.scripts[size_t(s)].resolved_classes();
      Linear ch{"head.char." + cfg_.scripts[size_t(s)].name, D, classes};
      lo.char_logits.push_back(ch.forward(g, points));  // [K,N,C_s]
    }

    lo.center_offsets = coord_head_.forward(g, points);  // [K,N,2]
    std::vector<double> base(size_t(K) * size_t(N) * 2);
    for (int k = 0; k < K; ++k)
      for (int n = 0; n < N; ++n) {
        base[size_t((k * N + n) * 2)] = inv_sigmoid_scalar(coords[size_t(k)][size_t(n)].x);
        base[size_t((k * N + n) * 2 + 1)] = inv_sigmoid_scalar(coords[size_t(k)][size_t(n)].y);
      }
    lo.centers = sigmoid(add(lo.center_offsets, Tensor::from({K, N, 2}, std::move(base))));

    if (!cfg_.line_mode) {
      lo.boundary_offsets = boundary_head_.forward(g, points);  // [K,N,4]
      lo.top_points = add(lo.centers, slice(lo.boundary_offsets, 2, 0, 2));
      lo.bottom_points = add(lo.centers, slice(lo.boundary_offsets, 2, 2, 2));
    }
    if (ml) {
      Tensor token = reshape(slice(readout, 1, N, 1), {K, D});
      Linear sc{"head.script", D, cfg_.script_count()};
      lo.script_logits = sc.forward(g, token);
    }
    return lo;
  }

  void build(Rng& rng) {
    const int D = cfg_.d_model;
    // backbone stem: grayscale -> c0 -> c1 -> D at stride 8
    const int c0 = cfg_.backbone_channels[0], c1 = cfg_.backbone_channels[1];
    auto conv_param = [&](const std::string& name, int kin, int kout) {
      Param& w = store_.create(name + ".w", {3, 3, kin, kout});
      init_xavier(w, rng, 9 * kin, kout);
      store_.create(name + ".b", {kout});
    };
    conv_param("backbone.c0", 1, c0);
    conv_param("backbone.c1", c0, c1);
    conv_param("backbone.c2", c1, D);
    for (size_t l = 1; l < cfg_.feature_strides.size(); ++l)
      conv_param("backbone.down" + std::to_string(l), D, D);
    feat_norm_ = {"backbone.norm", D};
    feat_norm_.init(store_, rng);

    // encoder
    Param& le = store_.create("enc.level_embed", {int(cfg_.feature_strides.size()), D});
    init_normal(le, rng, 0.5);
    for (int l = 0; l < cfg_.enc_layers; ++l) {
      const std::string ln = "enc.l" + std::to_string(l);
      LayerNorm{ln + ".ln1", D}.init(store_, rng);
      LayerNorm{ln + ".ln2", D}.init(store_, rng);
      enc_attn(l).init(store_, rng);
      Linear{ln + ".ffn1", D, D * cfg_.ffn_mult}.init(store_, rng);
      Linear{ln + ".ffn2", D * cfg_.ffn_mult, D}.init(store_, rng);
    }
    enc_out_norm_ = {"enc.norm", D};
    enc_out_norm_.init(store_, rng);

    // proposal heads: focal-friendly score bias, zeroed last offset layer
    Linear score{"enc.score", D, 1};
    score.init(store_, rng, false, -std::log((1.0 - 0.01) / 0.01));
    prop_head_.configure("enc.prop", {D, D, D, 8});
    prop_head_.init(store_, rng, /*zero_last=*/true);

    // decoder content queries and layers
    Param& content = store_.create("dec.content", {cfg_.points_per_curve, D});
    init_normal(content, rng, 1.0);
    if (cfg_.multilingual) {
      Param& tok = store_.create("dec.script_token", {1, D});
      init_normal(tok, rng, 1.0);
    }
    pos_query_.configure("dec.posq", D);
    pos_query_.init(store_, rng);
    for (int l = 0; l < cfg_.dec_layers; ++l) {
      const std::string ln = "dec.l" + std::to_string(l);
      for (const char* nm : {".ln1", ".ln2", ".ln3", ".ln4"}) LayerNorm{ln + nm, D}.init(store_, rng);
      MultiHeadAttention{ln + ".intra", D, cfg_.heads}.init(store_, rng);
      MultiHeadAttention{ln + ".inter", D, cfg_.heads}.init(store_, rng);
      dec_attn(l).init(store_, rng);
      Linear{ln + ".ffn1", D, D * cfg_.ffn_mult}.init(store_, rng);
      Linear{ln + ".ffn2", D * cfg_.ffn_mult, D}.init(store_, rng);
    }
    dec_out_norm_ = {"dec.norm", D};
    dec_out_norm_.init(store_, rng);

    // prediction heads
    Linear inst{"head.inst", D, 1};
    inst.init(store_, rng, false, -std::log((1.0 - 0.01) / 0.01));
    for (const auto& s : cfg_.scripts) {
      Linear ch{"head.char." + s.name, D, s.resolved_classes()};
      ch.init(store_, rng);
    }
    coord_head_.configure("head.coord", {D, D, D, 2});
    coord_head_.init(store_, rng, /*zero_last=*/true);
    if (!cfg_.line_mode) {
      boundary_head_.configure("head.bd", {D, D, D, 4});
      boundary_head_.init(store_, rng, /*zero_last=*/true);
    }
    if (cfg_.multilingual) {
      Linear sc{"head.script", D, cfg_.script_count()};
      sc.init(store_, rng);
    }
  }
};

}  // namespace textspot
