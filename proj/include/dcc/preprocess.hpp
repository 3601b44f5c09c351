#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dcc/common.hpp"
#include "dcc/phantom.hpp"

namespace dcc {

// Body-part regression values, one per axial slice (nominal range -12..+12).
using SliceScores = std::vector<double>;

inline SliceScores read_slice_scores(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw Error("io.read_failed", path);
  nlohmann::json j;
  try {
    f >> j;
    return j.get<SliceScores>();
  } catch (const nlohmann::json::exception& e) {
    throw Error("io.bad_scores", e.what());
  }
}

// Soft-tissue windowing: clamp every voxel to [lo, hi] HU.
// Must run before normalization; pipeline order is window -> normalize -> crop.
inline Volume window_hu(Volume vol, double lo = -175.0, double hi = 250.0) {
  if (vol.stage != Stage::Raw)
    throw Error("preprocess.order", "window_hu requires a raw volume");
  if (!(lo < hi)) throw Error("preprocess.bad_window", "lo must be < hi");
  for (auto& x : vol.voxels.v)
    x = std::clamp(x, static_cast<float>(lo), static_cast<float>(hi));
  vol.stage = Stage::Windowed;
  return vol;
}

// p-th intensity percentile, linear interpolation between closest ranks.
inline double percentile(std::vector<float> vals, double p) {
  std::sort(vals.begin(), vals.end());
  double pos = p / 100.0 * (static_cast<double>(vals.size()) - 1.0);
  size_t lo = static_cast<size_t>(pos);
  double frac = pos - static_cast<double>(lo);
  if (lo + 1 >= vals.size()) return vals.back();
  return vals[lo] * (1.0 - frac) + vals[lo + 1] * frac;
}

// Min-max normalization against the 1st/99th percentiles, clamped to [0,1].
// The clamp keeps downstream intensity-difference weights in [0,1].
inline Volume percentile_normalize(Volume vol) {
  if (vol.stage != Stage::Windowed)
    throw Error("preprocess.order", "percentile_normalize requires a windowed volume");
  double x1 = percentile(vol.voxels.v, 1.0);
  double x99 = percentile(vol.voxels.v, 99.0);
  if (!(x99 > x1))
    throw Error("preprocess.degenerate", "X99 == X1 (constant volume)");
  double inv = 1.0 / (x99 - x1);
  for (auto& x : vol.voxels.v)
    x = static_cast<float>(std::clamp((static_cast<double>(x) - x1) * inv, 0.0, 1.0));
  vol.stage = Stage::Normalized;
  return vol;
}

// Indices of slices whose score falls in [lo, hi] (endpoints inclusive).
inline std::vector<int> crop_slices(const SliceScores& scores, double lo = -4.0,
                                    double hi = 5.0) {
  std::vector<int> keep;
  for (size_t z = 0; z < scores.size(); ++z)
    if (scores[z] >= lo && scores[z] <= hi) keep.push_back(static_cast<int>(z));
  if (keep.empty())
    throw Error("preprocess.empty_crop", "no slice score in range");
  return keep;
}

inline Grid3<std::uint8_t> crop_label_grid(const Grid3<std::uint8_t>& g,
                                           const std::vector<int>& keep) {
  Grid3<std::uint8_t> out(g.h, g.w, static_cast<int>(keep.size()));
  for (size_t i = 0; i < keep.size(); ++i)
    for (int y = 0; y < g.h; ++y)
      for (int x = 0; x < g.w; ++x)
        out.at(static_cast<int>(i), y, x) = g.at(keep[i], y, x);
  return out;
}

// Keeps exactly the abdominal slices, preserving order; labels crop identically.
inline Volume crop_abdomen(const Volume& vol, const SliceScores& scores,
                           double lo = -4.0, double hi = 5.0) {
  if (vol.stage != Stage::Normalized)
    throw Error("preprocess.order", "crop_abdomen requires a normalized volume");
  if (static_cast<int>(scores.size()) != vol.depth())
    throw Error("preprocess.scores_length",
                "scores length " + std::to_string(scores.size()) +
                    " != depth " + std::to_string(vol.depth()));
  std::vector<int> keep = crop_slices(scores, lo, hi);
  Volume out;
  out.spacing_mm = vol.spacing_mm;
  out.phase = vol.phase;
  out.stage = vol.stage;
  out.voxels = Grid3<float>(vol.height(), vol.width(), static_cast<int>(keep.size()));
  for (size_t i = 0; i < keep.size(); ++i)
    for (int y = 0; y < vol.height(); ++y)
      for (int x = 0; x < vol.width(); ++x)
        out.voxels.at(static_cast<int>(i), y, x) = vol.voxels.at(keep[i], y, x);
  out.labels = crop_label_grid(vol.labels, keep);
  return out;
}

}  // namespace dcc
