#pragma once
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <string>
#include <thread>
#include <vector>

#include "textspot/data.hpp"
#include "textspot/decode.hpp"
#include "textspot/eval.hpp"
#include "textspot/losses.hpp"
#include "textspot/model.hpp"

// Loss assembly over the model graph (deep supervision: every decoder layer
// carries its own matching and loss), the AdamW training loop with
// deterministic counter-based batch sampling, and the inference/metrics
// drivers shared by the CLI and the test suites.

namespace textspot {

struct LossBuildResult {
  Tensor total;  // weighted sum over layers + encoder, not yet normalized
  std::vector<MatchAssignment> decoder_assignments;
  MatchAssignment encoder_assignment;
  int ctc_flagged = 0;
};

// Builds the full training loss for one image. When fixed assignments are
// passed, matching is skipped (finite-difference checks freeze matching to
// probe the smooth part).
inline LossBuildResult build_loss(const SpotterModel& model, GraphContext& g,
                                  const SpotterOutput& out,
                                  const std::vector<TextInstanceGT>& gts, const LossWeights& lw,
                                  LossReport* report = nullptr,
                                  const std::vector<MatchAssignment>* fixed_dec = nullptr,
                                  const MatchAssignment* fixed_enc = nullptr) {
  const ModelConfig& cfg = model.config();
  const int K = cfg.num_proposals;
  const bool ml = cfg.multilingual;
  const bool with_bd = !cfg.line_mode && !gts.empty() && gts[0].has_boundary();
  LossBuildResult res;
  if (report && report->decoder.size() != size_t(cfg.dec_layers ? out.layers.size() : 1))
    report->decoder.resize(out.layers.size());

  Tensor total = Tensor::scalar(0.0);
  const MatchWeights mw = lw.match();

  for (size_t layer = 0; layer < out.layers.size(); ++layer) {
    const DecoderLayerOutput& lo = out.layers[layer];
    MatchAssignment asg;
    if (fixed_dec) {
      asg = (*fixed_dec)[layer];
    } else if (!gts.empty()) {
      PredSnapshot snap = model.snapshot(lo);
      CostMatrix cm = ml ? script_aware_cost(gts, snap, mw) : spotting_cost(gts, snap, mw);
      asg = hungarian(cm);
    }
    res.decoder_assignments.push_back(asg);

    std::vector<bool> matched(size_t(K), false);
    for (auto [gi, ki] : asg.pairs) matched[size_t(ki)] = true;

    Tensor cls = focal_instance_loss(sigmoid(lo.inst_logits), matched, lw.focal_alpha, lw.focal_gamma);
    Tensor text = Tensor::scalar(0.0);
    for (auto [gi, ki] : asg.pairs) {
      const auto& gt = gts[size_t(gi)];
      const Tensor& head = lo.char_logits[size_t(ml ? gt.script : 0)];
      const int C = head.shape()[2];
      Tensor row = reshape(gather_rows(head, {ki}), {cfg.points_per_curve, C});
      bool flagged = false;
      text = add(text, ctc_loss(row, gt.labels, &flagged));
      if (flagged) ++res.ctc_flagged;
    }
    Tensor coord = coord_loss(lo.centers, gts, asg);
    Tensor layer_total = add(add(mul_scalar(cls, lw.cls), mul_scalar(text, lw.text)),
                             mul_scalar(coord, lw.coord));
    double bd_val = 0, script_val = 0;
    if (with_bd) {
      Tensor bd = boundary_loss(lo.top_points, lo.bottom_points, gts, asg);
      bd_val = bd.item();
      layer_total = add(layer_total, mul_scalar(bd, lw.bd));
    }
    if (ml) {
      Tensor sl = script_identification_loss(lo.script_logits, gts, asg);
      script_val = sl.item();
      layer_total = add(layer_total, mul_scalar(sl, lw.script));
    }
    if (report) {
      LossTerms& t = report->decoder[layer];
      t.cls += cls.item();
      t.text += text.item();
      t.coord += coord.item();
      t.bd += bd_val;
      t.script += script_val;
    }
    total = add(total, layer_total);
  }

  // encoder supervision: focal over every pixel candidate, L1 over the
  // N sampled points of matched candidates
  {
    const EncoderOutput& enc = out.encoder;
    MatchAssignment easg;
    if (fixed_enc) {
      easg = *fixed_enc;
    } else if (!gts.empty()) {
      easg = encoder_matching(gts, enc.proposals.points, enc.proposals.scores, mw);
    }
    res.encoder_assignment = easg;
    const int P = enc.all_scores.shape()[0];
    std::vector<bool> matched(size_t(P), false);
    MatchAssignment pixel_asg;  // assignment re-indexed to flat pixels
    for (auto [gi, ki] : easg.pairs) {
      int pixel = enc.proposals.pixel_indices[size_t(ki)];
      matched[size_t(pixel)] = true;
      pixel_asg.pairs.push_back({gi, pixel});
    }
    Tensor cls = focal_instance_loss(reshape(enc.all_scores, {P, 1}), matched, lw.focal_alpha,
                                     lw.focal_gamma);
    Tensor enc_total = mul_scalar(cls, lw.cls);
    double coord_val = 0;
    if (!pixel_asg.pairs.empty()) {
      std::vector<int> pixels;
      std::vector<double> target;
      for (auto [gi, pixel] : pixel_asg.pairs) {
        pixels.push_back(pixel);
        for (const Vec2& p : gts[size_t(gi)].center) {
          target.push_back(p.x);
          target.push_back(p.y);
        }
      }
      Tensor pts = model.sample_candidate_points(enc, pixels);  // [M,N,2]
      Tensor gt_t = Tensor::from({int(pixels.size()), cfg.points_per_curve, 2}, std::move(target));
      Tensor coord = sum_all(tabs(sub(pts, gt_t)));
      coord_val = coord.item();
      enc_total = add(enc_total, mul_scalar(coord, lw.coord));
    }
    if (report) {
      report->encoder.cls += cls.item();
      report->encoder.coord += coord_val;
    }
    total = add(total, enc_total);
  }
  if (report) report->ctc_flagged += res.ctc_flagged;
  res.total = total;
  return res;
}

// Central finite differences over sampled parameter elements against the
// analytic gradient of the full training loss. The discrete and
// deliberately detached structure — bipartite matching, top-K proposal
// selection, and the per-layer reference coordinates — is computed once at
// the base point and frozen for every probe, so the check exercises exactly
// the differentiable paths the optimizer sees.
struct ParamGradCheck {
  double max_rel = 0.0;
  std::string worst_param;
  int checked = 0;
};

inline ParamGradCheck param_grad_check(SpotterModel& model, const Image& img,
                                       const std::vector<TextInstanceGT>& gts,
                                       const LossWeights& lw, int samples_per_param,
                                       double h = 1e-5, uint64_t seed = 3) {
  GraphContext g(model.params());
  SpotterOutput out = model.forward(g, img.tensor());
  LossBuildResult base = build_loss(model, g, out, gts, lw);
  base.total.backward();
  model.params().zero_grad();
  g.accumulate_grads();

  SpotterModel::FrozenStructure frozen;
  frozen.topk_pixels = out.encoder.proposals.pixel_indices;
  frozen.layer_refs = out.layer_ref_coords;

  auto loss_at = [&]() {
    GraphContext g2(model.params());
    SpotterOutput o2 = model.forward(g2, img.tensor(), &frozen);
    return build_loss(model, g2, o2, gts, lw, nullptr, &base.decoder_assignments,
                      &base.encoder_assignment)
        .total.item();
  };

  Rng rng(seed);
  ParamGradCheck res;
  for (auto& pp : model.params().all()) {
    Param& p = *pp;
    const int n = int(p.value.size());
    for (int s = 0; s < std::min(samples_per_param, n); ++s) {
      int i = samples_per_param >= n ? s : rng.randint(n);
      double old = p.value[size_t(i)];
      p.value[size_t(i)] = old + h;
      double fp = loss_at();
      p.value[size_t(i)] = old - h;
      double fm = loss_at();
      p.value[size_t(i)] = old;
      if (!std::isfinite(fp) || !std::isfinite(fm))
        throw std::runtime_error("param_grad_check: non-finite loss at " + p.name);
      double num = (fp - fm) / (2 * h);
      double rel = std::fabs(p.grad[size_t(i)] - num) / std::max(1.0, std::fabs(num));
      ++res.checked;
      if (rel > res.max_rel) {
        res.max_rel = rel;
        res.worst_param = p.name + "[" + std::to_string(i) + "]";
      }
    }
  }
  return res;
}

// ---------------------------------------------------------------------------
// training loop
// ---------------------------------------------------------------------------
struct TrainConfig {
  int steps = 2000;
  int batch = 4;
  double lr = 1e-4;
  double lr_drop_frac = 0.8;  // single x0.1 drop at this fraction of steps
  double weight_decay = 1e-4;
  uint64_t seed = 1;
  int threads = 2;
  int log_every = 10;
  int checkpoint_every = 0;  // 0 = final checkpoint only
  std::string out_dir;       // empty = keep everything in memory
  int start_step = 0;
};

struct TrainDivergence : std::runtime_error {
  explicit TrainDivergence(const std::string& msg) : std::runtime_error(msg) {}
};

// Deterministic batch sampling: a pure function of (seed, step, slot).
inline int batch_index(uint64_t seed, int step, int slot, int dataset_size) {
  uint64_t h = Rng::mix(seed ^ Rng::mix(uint64_t(step) * 2654435761ULL + uint64_t(slot)));
  return int(h % uint64_t(dataset_size));
}

inline void save_checkpoint(SpotterModel& model, const std::string& path, int next_step,
                            const AdamW& opt) {
  nlohmann::json meta = {{"step", next_step},
                         {"adam_step", opt.step_count},
                         {"config", model.config().to_json()}};
  model.params().save(path, meta, /*with_optimizer_state=*/true);
}

using StepCallback = std::function<void(int step, const LossReport&)>;

inline void train_loop(SpotterModel& model, const Dataset& ds, const TrainConfig& tc,
                       const LossWeights& lw, std::ostream* log_stream = nullptr,
                       const StepCallback& cb = nullptr) {
  namespace fs = std::filesystem;
  if (ds.items.empty()) throw std::runtime_error("train: empty dataset");
  // image cache
  std::vector<Image> images(ds.items.size());
  for (size_t i = 0; i < ds.items.size(); ++i) images[i] = ds.load_image(i);

  AdamW opt;
  opt.weight_decay = tc.weight_decay;
  opt.step_count = tc.start_step;
  const int drop_at = int(tc.lr_drop_frac * tc.steps);

  for (int step = tc.start_step; step < tc.steps; ++step) {
    opt.lr = tc.lr * (step >= drop_at ? 0.1 : 1.0);

    std::vector<int> idx(size_t(tc.batch), 0);
    int total_gts = 0;
    for (int b = 0; b < tc.batch; ++b) {
      idx[size_t(b)] = batch_index(tc.seed, step, b, int(ds.items.size()));
      total_gts += int(ds.items[size_t(idx[size_t(b)])].gts.size());
    }
    const double norm = 1.0 / std::max(1, total_gts);

    std::vector<GraphContext> ctxs;
    ctxs.reserve(size_t(tc.batch));
    for (int b = 0; b < tc.batch; ++b) ctxs.emplace_back(model.params());
    std::vector<LossReport> reports(size_t(tc.batch));
    std::vector<double> loss_values(size_t(tc.batch), 0.0);
    std::vector<std::string> errors(size_t(tc.batch));

    auto worker = [&](int b) {
      try {
        const DatasetItem& item = ds.items[size_t(idx[size_t(b)])];
        Tensor image = images[size_t(idx[size_t(b)])].tensor();
        SpotterOutput out = model.forward(ctxs[size_t(b)], image);
        LossBuildResult lr2 = build_loss(model, ctxs[size_t(b)], out, item.gts, lw, &reports[size_t(b)]);
        Tensor scaled = mul_scalar(lr2.total, norm);
        loss_values[size_t(b)] = scaled.item();
        scaled.backward();
      } catch (const std::exception& e) {
        errors[size_t(b)] = e.what();
      }
    };

    const int workers = std::max(1, std::min(tc.threads, tc.batch));
    if (workers <= 1) {
      for (int b = 0; b < tc.batch; ++b) worker(b);
    } else {
      std::vector<std::thread> pool;
      for (int w = 0; w < workers; ++w)
        pool.emplace_back([&, w]() {
          for (int b = w; b < tc.batch; b += workers) worker(b);
        });
      for (auto& t : pool) t.join();
    }
    for (int b = 0; b < tc.batch; ++b)
      if (!errors[size_t(b)].empty())
        throw std::runtime_error("train: step " + std::to_string(step) + " item " +
                                 std::to_string(idx[size_t(b)]) + ": " + errors[size_t(b)]);

    // deterministic gradient accumulation in batch order
    model.params().zero_grad();
    for (int b = 0; b < tc.batch; ++b) ctxs[size_t(b)].accumulate_grads();

    LossReport step_report;
    step_report.gt_count = total_gts;
    step_report.boundary_enabled = !model.config().line_mode;
    step_report.script_enabled = model.config().multilingual;
    for (int b = 0; b < tc.batch; ++b) {
      step_report.total += loss_values[size_t(b)];
      step_report.ctc_flagged += reports[size_t(b)].ctc_flagged;
      if (step_report.decoder.size() < reports[size_t(b)].decoder.size())
        step_report.decoder.resize(reports[size_t(b)].decoder.size());
      for (size_t l = 0; l < reports[size_t(b)].decoder.size(); ++l) {
        LossTerms& dst = step_report.decoder[l];
        const LossTerms& src = reports[size_t(b)].decoder[l];
        dst.cls += src.cls * norm;
        dst.text += src.text * norm;
        dst.coord += src.coord * norm;
        dst.bd += src.bd * norm;
        dst.script += src.script * norm;
      }
      step_report.encoder.cls += reports[size_t(b)].encoder.cls * norm;
      step_report.encoder.coord += reports[size_t(b)].encoder.coord * norm;
    }
    if (!std::isfinite(step_report.total)) {
      nlohmann::json dump = {{"step", step}, {"batch", idx}, {"report", step_report.to_json()}};
      throw TrainDivergence("non-finite loss at step " + std::to_string(step) + ": " + dump.dump());
    }

    opt.step(model.params());

    if (log_stream && (step % std::max(1, tc.log_every) == 0 || step + 1 == tc.steps)) {
      nlohmann::json rec = step_report.to_json();
      rec["step"] = step;
      rec["lr"] = opt.lr;
      (*log_stream) << rec.dump() << "\n";
      log_stream->flush();
    }
    if (cb) cb(step, step_report);
    if (!tc.out_dir.empty() && tc.checkpoint_every > 0 && (step + 1) % tc.checkpoint_every == 0) {
      char name[64];
      std::snprintf(name, sizeof(name), "checkpoint_%06d.ckpt", step + 1);
      save_checkpoint(model, (fs::path(tc.out_dir) / name).string(), step + 1, opt);
    }
  }
  if (!tc.out_dir.empty())
    save_checkpoint(model, (fs::path(tc.out_dir) / "checkpoint_final.ckpt").string(), tc.steps, opt);
}

// ---------------------------------------------------------------------------
// inference + metrics
// ---------------------------------------------------------------------------
inline std::vector<SpottingResult> infer_image(const SpotterModel& model, const Image& img,
                                               double threshold) {
  GraphContext g(const_cast<ParamStore&>(model.params()));
  SpotterOutput out = model.forward(g, img.tensor());
  return finalize(out, model.config(), threshold);
}

inline EvalBatch run_inference(const SpotterModel& model, const Dataset& ds, double threshold) {
  EvalBatch batch;
  batch.preds.resize(ds.items.size());
  batch.gts.resize(ds.items.size());
  for (size_t i = 0; i < ds.items.size(); ++i) {
    batch.preds[i] = infer_image(model, ds.load_image(i), threshold);
    for (const auto& gt : ds.items[i].gts) batch.gts[i].push_back(gt_eval_view(gt));
  }
  return batch;
}

struct MetricsReport {
  Prh det, e2e, det_script, e2e_line;
  double ned = 0;
  double routing = 0;

  nlohmann::json to_json() const {
    auto prh = [](const Prh& p) {
      return nlohmann::json{{"precision", p.precision}, {"recall", p.recall},
                            {"hmean", p.hmean},         {"tp", p.tp},
                            {"preds", p.pred_count},    {"gts", p.gt_count}};
    };
    return {{"detection", prh(det)},   {"e2e", prh(e2e)},           {"det_script", prh(det_script)},
            {"e2e_line", prh(e2e_line)}, {"one_minus_ned", ned},    {"script_routing", routing}};
  }
};

inline MetricsReport evaluate_model(const SpotterModel& model, const Dataset& ds, double threshold,
                                    EvalConfig cfg = {}) {
  if (cfg.charset.empty())
    for (const auto& s : model.config().scripts) cfg.charset += s.alphabet;
  EvalBatch batch = run_inference(model, ds, threshold);
  MetricsReport r;
  r.det = detection_prh(batch, cfg);
  r.e2e = e2e_prh(batch, cfg);
  r.det_script = det_script_prh(batch, cfg);
  r.e2e_line = e2e_line_prh(batch, cfg);
  r.ned = one_minus_ned(batch, cfg);
  r.routing = script_routing_accuracy(batch, cfg);
  return r;
}

}  // namespace textspot
