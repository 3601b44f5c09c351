#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "dcc/common.hpp"
#include "dcc/dcc.hpp"
#include "dcc/trainer.hpp"

namespace dcc {

struct EmbeddingRecord {
  std::vector<double> z;
  std::uint8_t organ_class = 0;
  std::string phase;
  double d = 0.0;  // masked mean intensity
  int volume_id = -1;
};

// Deterministic embedding extraction: for every (organ, phase) pair, sample
// un-augmented patches from the available volumes and push them through the
// pretrained encoder + projection.
inline std::vector<EmbeddingRecord> embed_dataset(const Dataset& ds,
                                                  Encoder& encoder,
                                                  Projection& projection,
                                                  const TrainConfig& cfg) {
  auto phases = cfg.effective_phases(ds);
  auto combos = detail::build_combos(ds, phases);
  std::vector<EmbeddingRecord> records;
  for (const auto& combo : combos) {
    Rng rng = Rng(cfg.seed).split(Rng::mix(combo.organ * 131 + 7) ^
                                  fnv1a64(combo.phase));
    for (int i = 0; i < cfg.embed_patches_per_class; ++i) {
      int item = combo.item_indices[rng.uniform_index(combo.item_indices.size())];
      Patch patch = sample_patch(ds.items[item].volume, ds.items[item].coarse,
                                 combo.organ, cfg.patch_size, rng, item);
      AugView view;
      view.image = patch.image;
      view.attention = patch.attention;
      view.gt = patch.gt;
      view.organ_class = patch.organ_class;
      view.phase = patch.phase;
      view.volume_id = patch.volume_id;

      EmbeddingRecord rec;
      rec.d = masked_mean_intensity(view);
      Tensor input = to_model_input(view);
      Encoder::Tape et;
      Projection::Tape pt;
      rec.z = projection.forward(encoder.forward(input, et), pt);
      rec.organ_class = combo.organ;
      rec.phase = combo.phase;
      rec.volume_id = item;
      records.push_back(std::move(rec));
    }
  }
  return records;
}

namespace detail {

// Cyclic Jacobi eigendecomposition of a symmetric matrix (row-major n x n).
// Returns eigenvalues and eigenvectors (columns of V).
inline void jacobi_eigen(std::vector<double> a, int n, std::vector<double>& eigval,
                         std::vector<double>& eigvec) {
  eigvec.assign(static_cast<size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i) eigvec[static_cast<size_t>(i) * n + i] = 1.0;
  auto A = [&](int i, int j) -> double& { return a[static_cast<size_t>(i) * n + j]; };
  auto V = [&](int i, int j) -> double& {
    return eigvec[static_cast<size_t>(i) * n + j];
  };
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j) off += A(i, j) * A(i, j);
    if (off < 1e-24) break;
    for (int p = 0; p < n - 1; ++p)
      for (int q = p + 1; q < n; ++q) {
        if (std::abs(A(p, q)) < 1e-300) continue;
        double theta = (A(q, q) - A(p, p)) / (2.0 * A(p, q));
        double t = (theta >= 0 ? 1.0 : -1.0) /
                   (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        double c = 1.0 / std::sqrt(t * t + 1.0);
        double s = t * c;
        for (int i = 0; i < n; ++i) {
          double aip = A(i, p), aiq = A(i, q);
          A(i, p) = c * aip - s * aiq;
          A(i, q) = s * aip + c * aiq;
        }
        for (int i = 0; i < n; ++i) {
          double api = A(p, i), aqi = A(q, i);
          A(p, i) = c * api - s * aqi;
          A(q, i) = s * api + c * aqi;
        }
        for (int i = 0; i < n; ++i) {
          double vip = V(i, p), viq = V(i, q);
          V(i, p) = c * vip - s * viq;
          V(i, q) = s * vip + c * viq;
        }
      }
  }
  eigval.resize(n);
  for (int i = 0; i < n; ++i) eigval[i] = A(i, i);
}

}  // namespace detail

struct PcaResult {
  std::vector<std::vector<double>> coords;      // one k-vector per record
  std::vector<double> eigenvalues;              // top-k, descending
  std::vector<std::vector<double>> components;  // top-k eigenvectors
};

// Mean-centered covariance eigendecomposition; components ordered by
// descending eigenvalue with the first nonzero entry of each made positive
// so projections are deterministic.
inline PcaResult pca_project(const std::vector<std::vector<double>>& points,
                             int k = 2) {
  const int n = static_cast<int>(points.size());
  if (n < k + 1)
    throw Error("analysis.too_few", "need more records than components");
  const int dim = static_cast<int>(points[0].size());
  if (k > dim) throw Error("analysis.too_few", "k exceeds dimension");

  std::vector<double> mean(dim, 0.0);
  for (const auto& p : points)
    for (int i = 0; i < dim; ++i) mean[i] += p[i];
  for (auto& m : mean) m /= n;

  std::vector<double> cov(static_cast<size_t>(dim) * dim, 0.0);
  for (const auto& p : points)
    for (int i = 0; i < dim; ++i)
      for (int j = 0; j < dim; ++j)
        cov[static_cast<size_t>(i) * dim + j] += (p[i] - mean[i]) * (p[j] - mean[j]);
  for (auto& c : cov) c /= (n - 1);

  std::vector<double> eigval, eigvec;
  detail::jacobi_eigen(cov, dim, eigval, eigvec);

  std::vector<int> order(dim);
  for (int i = 0; i < dim; ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](int a, int b) { return eigval[a] > eigval[b]; });

  PcaResult res;
  res.eigenvalues.resize(k);
  res.components.assign(k, std::vector<double>(dim, 0.0));
  for (int c = 0; c < k; ++c) {
    res.eigenvalues[c] = eigval[order[c]];
    for (int i = 0; i < dim; ++i)
      res.components[c][i] = eigvec[static_cast<size_t>(i) * dim + order[c]];
    for (int i = 0; i < dim; ++i) {
      if (std::abs(res.components[c][i]) > 1e-12) {
        if (res.components[c][i] < 0.0)
          for (auto& x : res.components[c]) x = -x;
        break;
      }
    }
  }
  res.coords.assign(n, std::vector<double>(k, 0.0));
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < k; ++c)
      for (int i = 0; i < dim; ++i)
        res.coords[r][c] += (points[r][i] - mean[i]) * res.components[c][i];
  return res;
}

// Mean silhouette coefficient with Euclidean distance, clusters = phases.
// Every represented phase needs at least 2 records.
inline double phase_silhouette(const std::vector<EmbeddingRecord>& records) {
  std::map<std::string, std::vector<int>> clusters;
  for (size_t i = 0; i < records.size(); ++i)
    clusters[records[i].phase].push_back(static_cast<int>(i));
  if (clusters.size() < 2)
    throw Error("analysis.too_few_phases", "need at least 2 phases");
  for (const auto& [phase, idx] : clusters)
    if (idx.size() < 2)
      throw Error("analysis.too_few_phases", "phase " + phase + " has < 2 records");

  auto dist = [&](int i, int j) {
    double s = 0.0;
    for (size_t t = 0; t < records[i].z.size(); ++t) {
      double diff = records[i].z[t] - records[j].z[t];
      s += diff * diff;
    }
    return std::sqrt(s);
  };

  double total = 0.0;
  for (size_t i = 0; i < records.size(); ++i) {
    double a = 0.0;
    const auto& own = clusters[records[i].phase];
    for (int j : own)
      if (j != static_cast<int>(i)) a += dist(static_cast<int>(i), j);
    a /= static_cast<double>(own.size() - 1);

    double b = std::numeric_limits<double>::infinity();
    for (const auto& [phase, idx] : clusters) {
      if (phase == records[i].phase) continue;
      double m = 0.0;
      for (int j : idx) m += dist(static_cast<int>(i), j);
      m /= static_cast<double>(idx.size());
      b = std::min(b, m);
    }
    double denom = std::max(a, b);
    total += denom > 0.0 ? (b - a) / denom : 0.0;
  }
  return total / static_cast<double>(records.size());
}

struct SweepRow {
  double temperature = 0.0;
  std::uint64_t seed = 0;
  double mean_dice = 0.0;
};

// Pretrain + finetune + evaluate once per temperature with shared seeds.
inline std::vector<SweepRow> temperature_sweep(const Dataset& ds,
                                               const TrainConfig& base,
                                               const std::vector<double>& temps) {
  std::vector<SweepRow> rows;
  for (double t : temps) {
    if (t <= 0.0) throw Error("analysis.bad_temperature", std::to_string(t));
    TrainConfig cfg = base;
    cfg.temperature = t;
    PretrainResult pre = pretrain(ds, cfg);
    FinetuneResult fin = finetune(ds, cfg, &pre.encoder);
    MetricsReport rep = evaluate(fin.model, ds, cfg);
    rows.push_back(SweepRow{t, cfg.seed, rep.mean_dice});
  }
  return rows;
}

// ---- report serialization: JSON plus a flat (key, metric, value) CSV ----

inline nlohmann::json report_to_json(const MetricsReport& rep) {
  nlohmann::json j;
  j["mean_dice"] = rep.mean_dice;
  j["per_organ_dice"] = rep.per_organ_dice;
  j["per_phase_dice"] = rep.per_phase_dice;
  j["per_organ_phase_dice"] = rep.per_organ_phase_dice;
  j["loss_curve"] = rep.loss_curve;
  j["warnings"] = rep.warnings;
  j["seed"] = rep.seed;
  j["config"] = rep.config_echo;
  return j;
}

inline void emit_report(const MetricsReport& rep, const std::string& json_path,
                        const std::string& csv_path) {
  {
    std::ofstream f(json_path);
    if (!f) throw Error("io.write_failed", json_path);
    f << report_to_json(rep).dump(2) << "\n";
  }
  std::ofstream c(csv_path);
  if (!c) throw Error("io.write_failed", csv_path);
  c << "key,metric,value\n";
  c.precision(17);
  c << "all,mean_dice," << rep.mean_dice << "\n";
  for (const auto& [k, v] : rep.per_organ_dice) c << k << ",dice," << v << "\n";
  for (const auto& [k, v] : rep.per_phase_dice) c << k << ",dice," << v << "\n";
  for (const auto& [k, v] : rep.per_organ_phase_dice) c << k << ",dice," << v << "\n";
}

inline void emit_sweep_csv(const std::vector<SweepRow>& rows,
                           const std::string& path) {
  std::ofstream f(path);
  if (!f) throw Error("io.write_failed", path);
  f.precision(17);
  f << "T,seed,mean_dice\n";
  for (const auto& r : rows)
    f << r.temperature << "," << r.seed << "," << r.mean_dice << "\n";
}

inline void emit_embeddings_csv(const std::vector<EmbeddingRecord>& records,
                                const std::string& path) {
  std::ofstream f(path);
  if (!f) throw Error("io.write_failed", path);
  f.precision(17);
  f << "organ,phase,d";
  size_t dim = records.empty() ? 0 : records[0].z.size();
  for (size_t i = 0; i < dim; ++i) f << ",z_" << i;
  f << "\n";
  for (const auto& r : records) {
    f << static_cast<int>(r.organ_class) << "," << r.phase << "," << r.d;
    for (double v : r.z) f << "," << v;
    f << "\n";
  }
}

}  // namespace dcc
