#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dcc/common.hpp"
#include "dcc/grid.hpp"
#include "dcc/nn.hpp"
#include "dcc/rng.hpp"
#include "dcc/tensor.hpp"

namespace dcc {

// 4-stage toy CNN encoder: (conv3x3 + bias + relu + 2x avgpool) per stage,
// channel widths (8, 16, 32, 64), then global average pool to a 64-vector.
// Input is the 2-channel (image, attention) patch; P must be a multiple of 16.
struct Encoder {
  static constexpr int kStages = 4;
  static constexpr std::array<int, kStages> kWidths{8, 16, 32, 64};
  static constexpr int kInChannels = 2;
  static constexpr int kFeatureDim = 64;

  nn::ParamSet ps;

  void init(Rng& rng) {
    int cin = kInChannels;
    for (int s = 0; s < kStages; ++s) {
      auto& w = ps.add("enc.conv" + std::to_string(s) + ".w", {kWidths[s], cin, 3, 3});
      nn::init_uniform_fan_in(w.w, static_cast<size_t>(cin) * 9, rng);
      ps.add("enc.conv" + std::to_string(s) + ".b", {kWidths[s]});
      cin = kWidths[s];
    }
  }

  struct Tape {
    std::array<Tensor, kStages> conv_in;   // inputs to each conv
    std::array<Tensor, kStages> pre_act;   // conv outputs before relu
    Tensor feature_map;                    // post-stage-4, pre-GAP
  };

  // Returns the pooled 64-dim feature; the pre-pool map lives on the tape.
  std::vector<double> forward(const Tensor& input, Tape& tape) {
    if (input.c != kInChannels)
      throw Error("model.shape_mismatch", "encoder expects 2 input channels");
    if (input.h % 16 != 0 || input.w % 16 != 0)
      throw Error("model.shape_mismatch", "patch size must be a multiple of 16");
    Tensor x = input;
    for (int s = 0; s < kStages; ++s) {
      tape.conv_in[s] = x;
      Tensor pre = nn::conv3x3_forward(x, ps.params[2 * s], ps.params[2 * s + 1]);
      tape.pre_act[s] = pre;
      x = nn::avgpool2_forward(nn::relu_forward(pre));
    }
    tape.feature_map = x;
    return nn::global_avgpool_forward(x);
  }

  // dfeature: gradient wrt the pooled feature (may be empty);
  // dfeature_map: gradient wrt the pre-pool map (may be empty). The two are
  // summed, which covers both the projection path and the decoder path.
  void backward(const Tape& tape, const std::vector<double>& dfeature,
                const Tensor& dfeature_map) {
    Tensor dx;
    if (!dfeature.empty())
      dx = nn::global_avgpool_backward(tape.feature_map.h, tape.feature_map.w,
                                       dfeature);
    if (dfeature_map.size() > 0) {
      if (dx.size() == 0)
        dx = dfeature_map;
      else
        for (size_t i = 0; i < dx.v.size(); ++i) dx.v[i] += dfeature_map.v[i];
    }
    for (int s = kStages - 1; s >= 0; --s) {
      Tensor dpool = nn::avgpool2_backward(tape.pre_act[s].h, tape.pre_act[s].w, dx);
      Tensor dpre = nn::relu_backward(tape.pre_act[s], dpool);
      dx = nn::conv3x3_backward(tape.conv_in[s], ps.params[2 * s], ps.params[2 * s + 1],
                                dpre);
    }
  }
};

// Two-layer projection head 64 -> 64 -> D with L2-normalized output.
struct Projection {
  int dim = 32;
  nn::ParamSet ps;

  void init(Rng& rng, int out_dim = 32) {
    dim = out_dim;
    auto& w1 = ps.add("proj.fc1.w", {Encoder::kFeatureDim, Encoder::kFeatureDim});
    nn::init_uniform_fan_in(w1.w, Encoder::kFeatureDim, rng);
    ps.add("proj.fc1.b", {Encoder::kFeatureDim});
    auto& w2 = ps.add("proj.fc2.w", {dim, Encoder::kFeatureDim});
    nn::init_uniform_fan_in(w2.w, Encoder::kFeatureDim, rng);
    ps.add("proj.fc2.b", {dim});
  }

  struct Tape {
    std::vector<double> in;
    std::vector<double> pre1;
    std::vector<double> hidden;
    std::vector<double> pre_norm;
    double norm = 0.0;
  };

  std::vector<double> forward(const std::vector<double>& feature, Tape& tape) {
    tape.in = feature;
    tape.pre1 = nn::affine_forward(feature, ps.params[0], ps.params[1]);
    tape.hidden = nn::relu_forward(tape.pre1);
    tape.pre_norm = nn::affine_forward(tape.hidden, ps.params[2], ps.params[3]);
    return nn::l2_normalize_forward(tape.pre_norm, tape.norm);
  }

  std::vector<double> backward(const Tape& tape, const std::vector<double>& dz) {
    auto dpre_norm = nn::l2_normalize_backward(tape.pre_norm, tape.norm, dz);
    auto dhidden = nn::affine_backward(tape.hidden, ps.params[2], ps.params[3],
                                       dpre_norm);
    auto dpre1 = nn::relu_backward(tape.pre1, dhidden);
    return nn::affine_backward(tape.in, ps.params[0], ps.params[1], dpre1);
  }
};

// Mirror decoder: 4 stages of (2x nearest upsample + conv3x3), relu between,
// sigmoid at the end, producing a 1-channel P x P probability map.
struct SegHead {
  static constexpr std::array<int, 4> kWidths{32, 16, 8, 1};
  nn::ParamSet ps;

  void init(Rng& rng) {
    int cin = Encoder::kFeatureDim;
    for (int s = 0; s < 4; ++s) {
      auto& w = ps.add("seg.conv" + std::to_string(s) + ".w", {kWidths[s], cin, 3, 3});
      nn::init_uniform_fan_in(w.w, static_cast<size_t>(cin) * 9, rng);
      ps.add("seg.conv" + std::to_string(s) + ".b", {kWidths[s]});
      cin = kWidths[s];
    }
  }

  struct Tape {
    std::array<Tensor, 4> conv_in;
    std::array<Tensor, 4> pre_act;
    Tensor prob;
  };

  Tensor forward(const Tensor& feature_map, Tape& tape) {
    Tensor x = feature_map;
    for (int s = 0; s < 4; ++s) {
      tape.conv_in[s] = nn::upsample2_forward(x);
      Tensor pre =
          nn::conv3x3_forward(tape.conv_in[s], ps.params[2 * s], ps.params[2 * s + 1]);
      tape.pre_act[s] = pre;
      x = s < 3 ? nn::relu_forward(pre) : nn::sigmoid_forward(pre);
    }
    tape.prob = x;
    return x;
  }

  // Returns gradient wrt the encoder feature map.
  Tensor backward(const Tape& tape, const Tensor& dprob) {
    Tensor dx = nn::sigmoid_backward(tape.prob, dprob);
    for (int s = 3; s >= 0; --s) {
      if (s < 3) dx = nn::relu_backward(tape.pre_act[s], dx);
      Tensor dup =
          nn::conv3x3_backward(tape.conv_in[s], ps.params[2 * s], ps.params[2 * s + 1], dx);
      dx = nn::upsample2_backward(dup);
    }
    return dx;
  }
};

struct DiceResult {
  double loss = 0.0;
  Tensor dpred;
};

// Smoothed Dice loss on a 1-channel probability map vs a binary mask.
inline DiceResult dice_loss(const Tensor& pred, const Grid2<std::uint8_t>& gt,
                            double smooth = 1e-6) {
  if (pred.c != 1 || pred.h != gt.h || pred.w != gt.w)
    throw Error("model.shape_mismatch", "dice_loss shapes");
  double inter = 0.0, sum_p = 0.0, sum_g = 0.0;
  for (size_t i = 0; i < pred.v.size(); ++i) {
    inter += pred.v[i] * gt.v[i];
    sum_p += pred.v[i];
    sum_g += gt.v[i];
  }
  double num = 2.0 * inter + smooth;
  double den = sum_p + sum_g + smooth;
  DiceResult r;
  r.loss = 1.0 - num / den;
  r.dpred = Tensor(1, pred.h, pred.w);
  for (size_t i = 0; i < pred.v.size(); ++i)
    r.dpred.v[i] = -(2.0 * gt.v[i] * den - num) / (den * den);
  return r;
}

// Classic Adam with bias correction; weight decay enters as a coupled L2
// term on the gradient. One state per ParamSet, stepped in lockstep.
struct AdamConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
};

struct AdamState {
  std::int64_t t = 0;
  std::vector<std::vector<double>> m, v;

  void ensure(const nn::ParamSet& ps) {
    if (!m.empty()) return;
    for (const auto& p : ps.params) {
      m.emplace_back(p.size(), 0.0);
      v.emplace_back(p.size(), 0.0);
    }
  }
};

inline void adam_step(nn::ParamSet& ps, AdamState& st, const AdamConfig& cfg) {
  st.ensure(ps);
  st.t += 1;
  double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(st.t));
  double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(st.t));
  for (size_t pi = 0; pi < ps.params.size(); ++pi) {
    auto& p = ps.params[pi];
    for (size_t i = 0; i < p.size(); ++i) {
      double g = p.g[i] + cfg.weight_decay * p.w[i];
      if (!std::isfinite(g))
        throw Error("model.nonfinite_gradient",
                    p.name + "[" + std::to_string(i) + "]");
      st.m[pi][i] = cfg.beta1 * st.m[pi][i] + (1.0 - cfg.beta1) * g;
      st.v[pi][i] = cfg.beta2 * st.v[pi][i] + (1.0 - cfg.beta2) * g * g;
      double mhat = st.m[pi][i] / bc1;
      double vhat = st.v[pi][i] / bc2;
      p.w[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
}

// ---- checkpoints: one-line JSON header + float64 LE payload ----

inline void write_checkpoint(const std::string& path, const std::string& kind,
                             std::int64_t step, int patch_size, int projection_dim,
                             const std::vector<const nn::ParamSet*>& sets) {
  nlohmann::json header;
  header["kind"] = kind;
  header["step"] = step;
  header["patch_size"] = patch_size;
  header["projection_dim"] = projection_dim;
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("io.write_failed", path);
  f << header.dump() << "\n";
  for (const auto* ps : sets)
    for (const auto& p : ps->params)
      f.write(reinterpret_cast<const char*>(p.w.data()),
              static_cast<std::streamsize>(p.size() * sizeof(double)));
}

struct CheckpointHeader {
  std::string kind;
  std::int64_t step = 0;
  int patch_size = 0;
  int projection_dim = 0;
};

// ParamSets must already have their final shapes; payload fills them in
// declaration order.
inline CheckpointHeader read_checkpoint(const std::string& path,
                                        const std::vector<nn::ParamSet*>& sets) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("io.read_failed", path);
  std::string line;
  if (!std::getline(f, line)) throw Error("io.bad_checkpoint", "missing header");
  CheckpointHeader h;
  try {
    auto j = nlohmann::json::parse(line);
    h.kind = j.at("kind").get<std::string>();
    h.step = j.at("step").get<std::int64_t>();
    h.patch_size = j.at("patch_size").get<int>();
    h.projection_dim = j.at("projection_dim").get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw Error("io.bad_checkpoint", e.what());
  }
  for (auto* ps : sets)
    for (auto& p : ps->params) {
      f.read(reinterpret_cast<char*>(p.w.data()),
             static_cast<std::streamsize>(p.size() * sizeof(double)));
      if (!f) throw Error("io.bad_checkpoint", "payload truncated at " + p.name);
    }
  return h;
}

}  // namespace dcc
