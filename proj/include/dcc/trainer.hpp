#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "dcc/common.hpp"
#include "dcc/dcc.hpp"
#include "dcc/model.hpp"
#include "dcc/phantom.hpp"
#include "dcc/sampler.hpp"

namespace dcc {

struct DatasetItem {
  std::string name;
  Volume volume;   // preprocessed (normalized, cropped)
  CoarseMask coarse;
};

struct Dataset {
  std::vector<DatasetItem> items;
  std::vector<std::uint8_t> organ_ids;
  std::vector<std::string> phases;
};

struct TrainConfig {
  int patches_per_batch = 4;   // n; a minibatch holds 2n views
  int patch_size = 32;
  int pretrain_epochs = 10;
  double pretrain_lr = 3e-4;
  int finetune_epochs = 5;
  double finetune_lr = 1e-4;
  int steps_per_epoch = 50;
  double temperature = 0.07;
  LossConfig::Mode mode = LossConfig::Mode::Dcc;
  std::vector<std::string> phases;  // phases used for training; empty = all
  std::uint64_t seed = 1;
  int projection_dim = 32;
  double weight_decay = 1e-4;
  int embed_patches_per_class = 24;

  std::vector<std::string> effective_phases(const Dataset& ds) const {
    return phases.empty() ? ds.phases : phases;
  }
};

struct PretrainResult {
  Encoder encoder;
  Projection projection;
  std::vector<double> loss_curve;  // one entry per step
};

namespace detail {

// (organ, phase) pairs with the dataset items that can serve them; patches
// are drawn round-robin over this list so every minibatch mixes phases.
struct Combo {
  std::uint8_t organ;
  std::string phase;
  std::vector<int> item_indices;
};

inline std::vector<Combo> build_combos(const Dataset& ds,
                                       const std::vector<std::string>& phases) {
  std::vector<Combo> combos;
  for (std::uint8_t organ : ds.organ_ids)
    for (const auto& phase : phases) {
      Combo c{organ, phase, {}};
      for (size_t i = 0; i < ds.items.size(); ++i) {
        if (ds.items[i].volume.phase != phase) continue;
        bool has = false;
        for (auto m : ds.items[i].coarse.mask.v)
          if (m == organ) {
            has = true;
            break;
          }
        if (has) c.item_indices.push_back(static_cast<int>(i));
      }
      if (!c.item_indices.empty()) combos.push_back(std::move(c));
    }
  if (combos.empty())
    throw Error("trainer.empty_dataset", "no (organ, phase) pair available");
  return combos;
}

inline std::vector<Patch> draw_batch(const Dataset& ds,
                                     const std::vector<Combo>& combos, int step,
                                     int n, int patch_size, Rng& rng) {
  std::vector<Patch> patches;
  for (int i = 0; i < n; ++i) {
    const Combo& c = combos[(static_cast<size_t>(step) * n + i) % combos.size()];
    int item = c.item_indices[rng.uniform_index(c.item_indices.size())];
    patches.push_back(sample_patch(ds.items[item].volume, ds.items[item].coarse,
                                   c.organ, patch_size, rng, item));
  }
  return patches;
}

}  // namespace detail

// Contrastive pretraining: minibatch -> forward -> masked mean intensities ->
// correlation matrix -> weighted contrastive loss -> backprop -> Adam.
// An epoch is a fixed number of steps over the (organ, phase) round-robin.
// hard_label mode trains with the supervised-contrastive baseline, which is
// what the separability comparison pits against the weighted loss.
inline PretrainResult pretrain(const Dataset& ds, const TrainConfig& cfg) {
  Rng master(cfg.seed);
  Rng init_rng = master.split(1);
  Rng sample_rng = master.split(2);

  PretrainResult res;
  res.encoder.init(init_rng);
  res.projection.init(init_rng, cfg.projection_dim);

  auto phases = cfg.effective_phases(ds);
  auto combos = detail::build_combos(ds, phases);

  AdamConfig opt;
  opt.lr = cfg.pretrain_lr;
  opt.weight_decay = cfg.weight_decay;
  AdamState enc_state, proj_state;

  LossConfig lcfg;
  lcfg.temperature = cfg.temperature;
  lcfg.mode = cfg.mode;

  const int total_steps = cfg.pretrain_epochs * cfg.steps_per_epoch;
  for (int step = 0; step < total_steps; ++step) {
    auto patches = detail::draw_batch(ds, combos, step, cfg.patches_per_batch,
                                      cfg.patch_size, sample_rng);
    Minibatch mb = build_minibatch(patches, sample_rng);
    const int N = mb.size();

    std::vector<Encoder::Tape> enc_tapes(N);
    std::vector<Projection::Tape> proj_tapes(N);
    std::vector<std::vector<double>> z(N);
    std::vector<double> d(N);
    std::vector<ViewLabel> labels(N);
    for (int k = 0; k < N; ++k) {
      Tensor input = to_model_input(mb.views[k]);
      auto feature = res.encoder.forward(input, enc_tapes[k]);
      z[k] = res.projection.forward(feature, proj_tapes[k]);
      d[k] = masked_mean_intensity(mb.views[k]);
      labels[k] = ViewLabel{mb.views[k].organ_class, mb.views[k].phase};
    }

    LossResult lr;
    if (cfg.mode == LossConfig::Mode::HardLabel) {
      lr = labeled_positive_loss(z, labels, lcfg);
    } else {
      CorrelationMatrix V = contrast_correlation(d);
      lr = dcc_loss(z, V, mb.pairing(), lcfg, &labels);
    }
    if (!std::isfinite(lr.loss))
      throw Error("trainer.nonfinite_loss", "at step " + std::to_string(step));
    res.loss_curve.push_back(lr.loss);

    res.encoder.ps.zero_grad();
    res.projection.ps.zero_grad();
    for (int k = 0; k < N; ++k) {
      auto dfeature = res.projection.backward(proj_tapes[k], lr.grad[k]);
      res.encoder.backward(enc_tapes[k], dfeature, Tensor{});
    }
    adam_step(res.encoder.ps, enc_state, opt);
    adam_step(res.projection.ps, proj_state, opt);
  }
  return res;
}

struct SegModel {
  Encoder encoder;
  SegHead head;
  int patch_size = 32;
};

struct FinetuneResult {
  SegModel model;
  std::vector<double> loss_curve;
};

// Dice-loss fine-tuning of one shared binary head; the attention channel
// tells the head which organ is the target. `pretrained` may be null for
// from-scratch training.
inline FinetuneResult finetune(const Dataset& ds, const TrainConfig& cfg,
                               const Encoder* pretrained = nullptr) {
  Rng master(cfg.seed);
  Rng init_rng = master.split(11);
  Rng sample_rng = master.split(12);

  FinetuneResult res;
  res.model.patch_size = cfg.patch_size;
  if (pretrained != nullptr) {
    res.model.encoder = *pretrained;
    res.model.encoder.ps.zero_grad();
  } else {
    res.model.encoder.init(init_rng);
  }
  res.model.head.init(init_rng);

  auto phases = cfg.effective_phases(ds);
  auto combos = detail::build_combos(ds, phases);

  AdamConfig opt;
  opt.lr = cfg.finetune_lr;
  opt.weight_decay = cfg.weight_decay;
  AdamState enc_state, head_state;

  const int total_steps = cfg.finetune_epochs * cfg.steps_per_epoch;
  const double inv_b = 1.0 / cfg.patches_per_batch;
  for (int step = 0; step < total_steps; ++step) {
    auto patches = detail::draw_batch(ds, combos, step, cfg.patches_per_batch,
                                      cfg.patch_size, sample_rng);
    res.model.encoder.ps.zero_grad();
    res.model.head.ps.zero_grad();
    double batch_loss = 0.0;
    for (const auto& patch : patches) {
      AugView view;
      view.image = patch.image;
      view.attention = patch.attention;
      view.gt = patch.gt;
      Tensor input = to_model_input(view);
      Encoder::Tape et;
      SegHead::Tape st;
      res.model.encoder.forward(input, et);
      Tensor prob = res.model.head.forward(et.feature_map, st);
      DiceResult dr = dice_loss(prob, patch.gt);
      batch_loss += dr.loss * inv_b;
      for (auto& g : dr.dpred.v) g *= inv_b;
      Tensor dmap = res.model.head.backward(st, dr.dpred);
      res.model.encoder.backward(et, {}, dmap);
    }
    if (!std::isfinite(batch_loss))
      throw Error("trainer.nonfinite_loss", "at step " + std::to_string(step));
    res.loss_curve.push_back(batch_loss);
    adam_step(res.model.encoder.ps, enc_state, opt);
    adam_step(res.model.head.ps, head_state, opt);
  }
  return res;
}

struct VolumePrediction {
  std::map<std::uint8_t, Grid3<float>> prob;  // zero outside predicted patches
  std::vector<std::string> warnings;
};

// Slice-wise inference: for every organ present in the coarse mask, run the
// segmentation head on the patch centered at the organ's per-slice centroid.
inline VolumePrediction predict_volume(SegModel& model, const Volume& vol,
                                       const CoarseMask& coarse,
                                       const std::vector<std::uint8_t>& organs) {
  const int P = model.patch_size;
  VolumePrediction out;
  for (std::uint8_t organ : organs) {
    bool present = false;
    Grid3<float> prob(vol.height(), vol.width(), vol.depth(), 0.0f);
    for (int z = 0; z < vol.depth(); ++z) {
      long sy = 0, sx = 0, count = 0;
      for (int y = 0; y < vol.height(); ++y)
        for (int x = 0; x < vol.width(); ++x)
          if (coarse.mask.at(z, y, x) == organ) {
            sy += y;
            sx += x;
            ++count;
          }
      if (count == 0) continue;
      present = true;
      int cy = static_cast<int>(std::lround(static_cast<double>(sy) / count));
      int cx = static_cast<int>(std::lround(static_cast<double>(sx) / count));
      int y0 = std::clamp(cy - P / 2, 0, vol.height() - P);
      int x0 = std::clamp(cx - P / 2, 0, vol.width() - P);

      Tensor input(2, P, P);
      for (int y = 0; y < P; ++y)
        for (int x = 0; x < P; ++x) {
          input.at(0, y, x) = vol.voxels.at(z, y0 + y, x0 + x);
          input.at(1, y, x) = coarse.mask.at(z, y0 + y, x0 + x) == organ ? 1.0 : 0.0;
        }
      Encoder::Tape et;
      SegHead::Tape st;
      model.encoder.forward(input, et);
      Tensor p = model.head.forward(et.feature_map, st);
      for (int y = 0; y < P; ++y)
        for (int x = 0; x < P; ++x)
          prob.at(z, y0 + y, x0 + x) = static_cast<float>(p.at(0, y, x));
    }
    if (present)
      out.prob.emplace(organ, std::move(prob));
    else
      out.warnings.push_back("organ " + std::to_string(organ) +
                             " absent from coarse mask; skipped");
  }
  return out;
}

// Majority-voting fusion of per-organ probability maps for one slice:
// a pixel goes to the organ claiming it (prob > 0.5); multiple claims are
// broken by highest probability, then lowest class id; no claim = background.
inline Grid2<std::uint8_t> fuse_majority(
    const std::map<std::uint8_t, Grid2<float>>& organ_probs) {
  if (organ_probs.empty()) return {};
  int h = organ_probs.begin()->second.h, w = organ_probs.begin()->second.w;
  for (const auto& [id, g] : organ_probs)
    if (g.h != h || g.w != w)
      throw Error("trainer.shape_mismatch", "fuse_majority slice dims");
  Grid2<std::uint8_t> fused(h, w, 0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      std::uint8_t best = 0;
      float best_p = 0.5f;
      // std::map iterates in ascending class id, so strict > keeps the
      // lowest id on probability ties
      for (const auto& [id, g] : organ_probs)
        if (g.at(y, x) > best_p) {
          best_p = g.at(y, x);
          best = id;
        }
      fused.at(y, x) = best;
    }
  return fused;
}

// Volumetric Dice for one class; 1.0 when both masks are empty so absent
// organs do not poison means.
inline double dice_score(const Grid3<std::uint8_t>& pred,
                         const Grid3<std::uint8_t>& gt, std::uint8_t cls) {
  if (pred.h != gt.h || pred.w != gt.w || pred.d != gt.d)
    throw Error("trainer.shape_mismatch", "dice_score dims");
  size_t inter = 0, np = 0, ng = 0;
  for (size_t i = 0; i < pred.v.size(); ++i) {
    bool p = pred.v[i] == cls, g = gt.v[i] == cls;
    inter += p && g;
    np += p;
    ng += g;
  }
  if (np + ng == 0) return 1.0;
  return 2.0 * static_cast<double>(inter) / static_cast<double>(np + ng);
}

struct MetricsReport {
  double mean_dice = 0.0;
  std::map<std::string, double> per_organ_dice;        // "organ_<id>"
  std::map<std::string, double> per_phase_dice;        // "<phase>"
  std::map<std::string, double> per_organ_phase_dice;  // "organ_<id>_<phase>"
  std::vector<double> loss_curve;
  std::vector<std::string> warnings;
  std::uint64_t seed = 0;
  nlohmann::json config_echo;
};

inline Grid3<std::uint8_t> fuse_prediction_volume(const VolumePrediction& pred,
                                                  int h, int w, int d) {
  Grid3<std::uint8_t> labels(h, w, d, 0);
  for (int z = 0; z < d; ++z) {
    std::map<std::uint8_t, Grid2<float>> slice_probs;
    for (const auto& [organ, prob] : pred.prob) slice_probs[organ] = prob.slice(z);
    if (slice_probs.empty()) continue;
    Grid2<std::uint8_t> fused = fuse_majority(slice_probs);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) labels.at(z, y, x) = fused.at(y, x);
  }
  return labels;
}

// Runs inference over every dataset volume (restricted to the configured
// phases) and aggregates per-organ / per-phase Dice scores.
inline MetricsReport evaluate(SegModel& model, const Dataset& ds,
                              const TrainConfig& cfg) {
  auto phases = cfg.effective_phases(ds);
  MetricsReport rep;
  rep.seed = cfg.seed;
  std::map<std::string, std::vector<double>> organ_acc, phase_acc, organ_phase_acc;

  for (const auto& item : ds.items) {
    if (std::find(phases.begin(), phases.end(), item.volume.phase) == phases.end())
      continue;
    VolumePrediction pred =
        predict_volume(model, item.volume, item.coarse, ds.organ_ids);
    for (const auto& wmsg : pred.warnings)
      rep.warnings.push_back(item.name + ": " + wmsg);
    Grid3<std::uint8_t> fused = fuse_prediction_volume(
        pred, item.volume.height(), item.volume.width(), item.volume.depth());
    for (std::uint8_t organ : ds.organ_ids) {
      double score = dice_score(fused, item.volume.labels, organ);
      std::string ok = "organ_" + std::to_string(organ);
      organ_acc[ok].push_back(score);
      phase_acc[item.volume.phase].push_back(score);
      organ_phase_acc[ok + "_" + item.volume.phase].push_back(score);
    }
  }
  if (organ_acc.empty())
    throw Error("trainer.empty_dataset", "no volume matched the phase filter");

  auto mean = [](const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
  };
  double total = 0.0;
  for (const auto& [k, v] : organ_acc) {
    rep.per_organ_dice[k] = mean(v);
    total += rep.per_organ_dice[k];
  }
  rep.mean_dice = total / static_cast<double>(organ_acc.size());
  for (const auto& [k, v] : phase_acc) rep.per_phase_dice[k] = mean(v);
  for (const auto& [k, v] : organ_phase_acc) rep.per_organ_phase_dice[k] = mean(v);
  return rep;
}

}  // namespace dcc
