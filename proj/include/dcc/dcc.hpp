#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "dcc/common.hpp"
#include "dcc/sampler.hpp"

namespace dcc {

// Symmetric 2n x 2n matrix of clamped absolute mean-intensity differences,
// zero diagonal, all entries in [0, 1].
struct CorrelationMatrix {
  int n = 0;  // side length (2n views)
  std::vector<double> v;

  CorrelationMatrix() = default;
  explicit CorrelationMatrix(int side, double fill = 0.0)
      : n(side), v(static_cast<size_t>(side) * side, fill) {}

  double& at(int i, int j) { return v[static_cast<size_t>(i) * n + j]; }
  double at(int i, int j) const { return v[static_cast<size_t>(i) * n + j]; }
};

struct LossConfig {
  enum class Mode { Dcc, Plain, HardLabel };
  double temperature = 0.07;
  Mode mode = Mode::Dcc;
};

inline LossConfig::Mode parse_loss_mode(const std::string& s) {
  if (s == "dcc") return LossConfig::Mode::Dcc;
  if (s == "plain") return LossConfig::Mode::Plain;
  if (s == "hard_label") return LossConfig::Mode::HardLabel;
  throw Error("config.bad_value", "unknown loss mode '" + s + "'");
}

// (organ, phase) tag of a view, used by the hard-label weighting and the
// supervised-contrastive baseline.
struct ViewLabel {
  std::uint8_t organ = 0;
  std::string phase;

  bool operator==(const ViewLabel&) const = default;
};

// Mean image intensity over the attention-selected pixels; cached on the view.
inline double masked_mean_intensity(AugView& view) {
  double sum = 0.0;
  size_t count = 0;
  for (size_t i = 0; i < view.image.v.size(); ++i)
    if (view.attention.v[i] != 0) {
      sum += view.image.v[i];
      ++count;
    }
  if (count == 0)
    throw Error("dcc.empty_attention", "attention mask has no nonzero pixel");
  view.d = sum / static_cast<double>(count);
  return view.d;
}

inline CorrelationMatrix contrast_correlation(const std::vector<double>& d) {
  for (double di : d)
    if (!(di >= 0.0 && di <= 1.0))
      throw Error("dcc.domain", "mean intensity outside [0,1]: " + std::to_string(di));
  const int N = static_cast<int>(d.size());
  CorrelationMatrix m(N);
  for (int i = 0; i < N; ++i)
    for (int j = 0; j < N; ++j)
      m.at(i, j) = i == j ? 0.0 : std::clamp(std::abs(d[i] - d[j]), 0.0, 1.0);
  return m;
}

struct LossResult {
  double loss = 0.0;
  std::vector<std::vector<double>> grad;  // d loss / d z
};

namespace detail {

inline void check_pairing(const std::vector<int>& p, int N) {
  if (static_cast<int>(p.size()) != N)
    throw Error("dcc.dim_mismatch", "pairing size != batch size");
  for (int k = 0; k < N; ++k) {
    if (p[k] < 0 || p[k] >= N || p[k] == k || p[p[k]] != k)
      throw Error("dcc.bad_pairing", "pairing is not a fixed-point-free involution");
  }
}

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace detail

// DCC-weighted contrastive loss.
//
// Per-pair logit: l(k,j) = (z_k . z_j) * w(k,j) / T, where w(k,j) is
//   1 - V(k,j)    in dcc mode,
//   1             in plain mode,
//   1 if the (organ, phase) labels of k and j match, else 1 - V(k,j)
//                 in hard_label mode.
// loss = -sum_k [ l(k, p(k)) - logsumexp_{j != k} l(k, j) ], with
// max-subtraction in the log-sum-exp. The gradient is analytic.
inline LossResult dcc_loss(const std::vector<std::vector<double>>& z,
                           const CorrelationMatrix& V, const std::vector<int>& p,
                           const LossConfig& cfg,
                           const std::vector<ViewLabel>* labels = nullptr) {
  const int N = static_cast<int>(z.size());
  if (cfg.temperature <= 0.0)
    throw Error("dcc.bad_temperature", "temperature must be positive");
  if (V.n != N) throw Error("dcc.dim_mismatch", "V side != batch size");
  if (N < 2) throw Error("dcc.dim_mismatch", "need at least 2 views");
  detail::check_pairing(p, N);
  if (cfg.mode == LossConfig::Mode::HardLabel &&
      (labels == nullptr || static_cast<int>(labels->size()) != N))
    throw Error("dcc.dim_mismatch", "hard_label mode needs one label per view");
  const size_t D = z[0].size();
  for (const auto& zk : z)
    if (zk.size() != D) throw Error("dcc.dim_mismatch", "ragged embedding batch");

  auto weight = [&](int k, int j) -> double {
    switch (cfg.mode) {
      case LossConfig::Mode::Plain:
        return 1.0;
      case LossConfig::Mode::HardLabel:
        if ((*labels)[k] == (*labels)[j]) return 1.0;
        [[fallthrough]];
      case LossConfig::Mode::Dcc:
      default:
        return 1.0 - V.at(k, j);
    }
  };

  // logits
  std::vector<double> logit(static_cast<size_t>(N) * N, 0.0);
  for (int k = 0; k < N; ++k)
    for (int j = 0; j < N; ++j) {
      if (j == k) continue;
      logit[static_cast<size_t>(k) * N + j] =
          detail::dot(z[k], z[j]) * weight(k, j) / cfg.temperature;
    }

  LossResult res;
  res.grad.assign(N, std::vector<double>(D, 0.0));

  for (int k = 0; k < N; ++k) {
    const double* lk = &logit[static_cast<size_t>(k) * N];
    double m = -std::numeric_limits<double>::infinity();
    for (int j = 0; j < N; ++j)
      if (j != k) m = std::max(m, lk[j]);
    double sum = 0.0;
    for (int j = 0; j < N; ++j)
      if (j != k) sum += std::exp(lk[j] - m);
    double lse = m + std::log(sum);
    res.loss -= lk[p[k]] - lse;

    for (int j = 0; j < N; ++j) {
      if (j == k) continue;
      double sigma = std::exp(lk[j] - lse);
      // d loss / d logit(k,j)
      double dl = sigma - (j == p[k] ? 1.0 : 0.0);
      double coef = dl * weight(k, j) / cfg.temperature;
      for (size_t t = 0; t < D; ++t) {
        res.grad[k][t] += coef * z[j][t];
        res.grad[j][t] += coef * z[k][t];
      }
    }
  }
  return res;
}

// Supervised contrastive baseline: positives of anchor k are all other views
// with the same (organ, phase) label; logits are unweighted z_k . z_j / T.
// Anchors without a positive are skipped; an all-skipped batch is an error.
inline LossResult labeled_positive_loss(const std::vector<std::vector<double>>& z,
                                        const std::vector<ViewLabel>& labels,
                                        const LossConfig& cfg) {
  const int N = static_cast<int>(z.size());
  if (cfg.temperature <= 0.0)
    throw Error("dcc.bad_temperature", "temperature must be positive");
  if (static_cast<int>(labels.size()) != N)
    throw Error("dcc.dim_mismatch", "labels size != batch size");
  if (N < 2) throw Error("dcc.dim_mismatch", "need at least 2 views");
  const size_t D = z[0].size();

  LossResult res;
  res.grad.assign(N, std::vector<double>(D, 0.0));
  bool any_anchor = false;

  for (int k = 0; k < N; ++k) {
    std::vector<int> pos;
    for (int j = 0; j < N; ++j)
      if (j != k && labels[j] == labels[k]) pos.push_back(j);
    if (pos.empty()) continue;
    any_anchor = true;

    std::vector<double> lk(N, 0.0);
    double m = -std::numeric_limits<double>::infinity();
    for (int j = 0; j < N; ++j) {
      if (j == k) continue;
      lk[j] = detail::dot(z[k], z[j]) / cfg.temperature;
      m = std::max(m, lk[j]);
    }
    double sum = 0.0;
    for (int j = 0; j < N; ++j)
      if (j != k) sum += std::exp(lk[j] - m);
    double lse = m + std::log(sum);

    double inv_pos = 1.0 / static_cast<double>(pos.size());
    for (int q : pos) res.loss -= (lk[q] - lse) * inv_pos;

    for (int j = 0; j < N; ++j) {
      if (j == k) continue;
      double sigma = std::exp(lk[j] - lse);
      bool is_pos = labels[j] == labels[k];
      double dl = sigma - (is_pos ? inv_pos : 0.0);
      double coef = dl / cfg.temperature;
      for (size_t t = 0; t < D; ++t) {
        res.grad[k][t] += coef * z[j][t];
        res.grad[j][t] += coef * z[k][t];
      }
    }
  }
  if (!any_anchor)
    throw Error("dcc.no_positives", "every anchor lacks a positive");
  return res;
}

}  // namespace dcc
