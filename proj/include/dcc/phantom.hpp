#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "dcc/common.hpp"
#include "dcc/grid.hpp"
#include "dcc/rng.hpp"

namespace dcc {

// One synthetic organ: an ellipsoid with per-phase mean intensity.
struct OrganSpec {
  std::uint8_t class_id = 0;                    // 0 is reserved for background
  std::array<double, 3> center{};               // fractions of (W, H, D)
  std::array<double, 3> semi_axes{};            // fractions of (W, H, D)
  std::map<std::string, double> intensity_by_phase;  // phase tag -> mean HU
  double texture_sd = 0.0;                      // HU sd of additive noise
};

struct DatasetSpec {
  std::array<int, 3> dims{};          // (H, W, D)
  std::array<double, 3> spacing_mm{1.0, 1.0, 1.0};
  std::vector<std::string> phases;    // e.g. {"NC", "CE"}
  int volumes_per_phase = 1;
  std::vector<OrganSpec> organs;
  double corruption_rate = 0.1;       // coarse-mask corruption default
  std::array<double, 2> score_range{-8.0, 8.0};  // synthetic slice scores
  double background_hu = 40.0;        // soft-tissue base
};

enum class Stage { Raw, Windowed, Normalized };

struct Volume {
  Grid3<float> voxels;                // HU before normalization, [0,1] after
  Grid3<std::uint8_t> labels;         // class ids, same dims
  std::array<double, 3> spacing_mm{1.0, 1.0, 1.0};
  std::string phase;
  Stage stage = Stage::Raw;

  bool normalized() const { return stage == Stage::Normalized; }
  int height() const { return voxels.h; }
  int width() const { return voxels.w; }
  int depth() const { return voxels.d; }
};

struct CoarseMask {
  Grid3<std::uint8_t> mask;
  std::string source;  // "oracle" or "corrupted(<rate>)"
};

struct GeneratedVolume {
  std::string name;  // e.g. "vol_NC_0"
  Volume volume;
  CoarseMask oracle;
};

namespace detail {

inline void validate_spec(const DatasetSpec& spec) {
  if (spec.organs.size() < 2)
    throw Error("phantom.bad_spec", "at least 2 organ classes required");
  if (spec.phases.empty())
    throw Error("phantom.bad_spec", "at least 1 phase required");
  for (int d : spec.dims)
    if (d < 16) throw Error("phantom.bad_spec", "dims must be >= 16 per axis");
  if (spec.volumes_per_phase < 1)
    throw Error("phantom.bad_spec", "volumes_per_phase must be >= 1");
  std::set<int> ids;
  for (const auto& o : spec.organs) {
    if (o.class_id == 0)
      throw Error("phantom.bad_spec", "class_id 0 is reserved for background");
    if (!ids.insert(o.class_id).second)
      throw Error("phantom.bad_spec",
                  "duplicate class_id " + std::to_string(o.class_id));
    for (const auto& p : spec.phases)
      if (!o.intensity_by_phase.count(p))
        throw Error("phantom.bad_spec", "organ " + std::to_string(o.class_id) +
                                            " missing phase " + p);
  }
}

inline bool inside_ellipsoid(const OrganSpec& o, double fx, double fy, double fz) {
  double dx = (fx - o.center[0]) / o.semi_axes[0];
  double dy = (fy - o.center[1]) / o.semi_axes[1];
  double dz = (fz - o.center[2]) / o.semi_axes[2];
  return dx * dx + dy * dy + dz * dz <= 1.0;
}

}  // namespace detail

// Rasterizes the organ ellipsoids into a label grid. Overlap between two
// organs is an error since labels are single-valued per voxel.
inline Grid3<std::uint8_t> rasterize_labels(const DatasetSpec& spec) {
  const int H = spec.dims[0], W = spec.dims[1], D = spec.dims[2];
  Grid3<std::uint8_t> labels(H, W, D, 0);
  std::set<std::pair<int, int>> overlaps;
  for (const auto& o : spec.organs) {
    for (int z = 0; z < D; ++z)
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
          double fx = (x + 0.5) / W, fy = (y + 0.5) / H, fz = (z + 0.5) / D;
          if (!detail::inside_ellipsoid(o, fx, fy, fz)) continue;
          auto& cell = labels.at(z, y, x);
          if (cell != 0)
            overlaps.insert({static_cast<int>(cell), static_cast<int>(o.class_id)});
          else
            cell = o.class_id;
        }
  }
  if (!overlaps.empty()) {
    std::string msg = "overlapping organ ellipsoids:";
    for (auto [a, b] : overlaps)
      msg += " (" + std::to_string(a) + "," + std::to_string(b) + ")";
    throw Error("phantom.overlap", msg);
  }
  return labels;
}

// Deterministic phantom generation. Volume index i within the flattened
// (phase, volume) enumeration gets its own generator seeded with seed XOR i,
// so callers may generate volumes independently in parallel.
inline std::vector<GeneratedVolume> generate_phantom(const DatasetSpec& spec,
                                                     std::uint64_t seed) {
  detail::validate_spec(spec);
  const Grid3<std::uint8_t> labels = rasterize_labels(spec);
  const int H = spec.dims[0], W = spec.dims[1], D = spec.dims[2];

  std::map<std::uint8_t, const OrganSpec*> by_id;
  for (const auto& o : spec.organs) by_id[o.class_id] = &o;

  std::vector<GeneratedVolume> out;
  std::uint64_t index = 0;
  for (const auto& phase : spec.phases) {
    for (int i = 0; i < spec.volumes_per_phase; ++i, ++index) {
      Rng rng(seed ^ index);
      GeneratedVolume g;
      g.name = "vol_" + phase + "_" + std::to_string(i);
      Volume& vol = g.volume;
      vol.voxels = Grid3<float>(H, W, D, static_cast<float>(spec.background_hu));
      vol.labels = labels;
      vol.spacing_mm = spec.spacing_mm;
      vol.phase = phase;
      for (int z = 0; z < D; ++z)
        for (int y = 0; y < H; ++y)
          for (int x = 0; x < W; ++x) {
            std::uint8_t c = labels.at(z, y, x);
            if (c == 0) continue;
            const OrganSpec& o = *by_id.at(c);
            double hu = o.intensity_by_phase.at(phase);
            if (o.texture_sd > 0.0) hu += rng.normal(0.0, o.texture_sd);
            vol.voxels.at(z, y, x) = static_cast<float>(hu);
          }
      g.oracle = CoarseMask{labels, "oracle"};
      out.push_back(std::move(g));
    }
  }
  return out;
}

namespace detail {

inline bool has_background_neighbor6(const Grid3<std::uint8_t>& g, int z, int y,
                                     int x, std::uint8_t c) {
  auto bg = [&](int zz, int yy, int xx) {
    if (zz < 0 || zz >= g.d || yy < 0 || yy >= g.h || xx < 0 || xx >= g.w)
      return true;  // volume border counts as background
    return g.at(zz, yy, xx) != c;
  };
  return bg(z - 1, y, x) || bg(z + 1, y, x) || bg(z, y - 1, x) ||
         bg(z, y + 1, x) || bg(z, y, x - 1) || bg(z, y, x + 1);
}

inline bool touches_class6(const Grid3<std::uint8_t>& g, int z, int y, int x,
                           std::uint8_t c) {
  auto is = [&](int zz, int yy, int xx) {
    if (zz < 0 || zz >= g.d || yy < 0 || yy >= g.h || xx < 0 || xx >= g.w)
      return false;
    return g.at(zz, yy, xx) == c;
  };
  return is(z - 1, y, x) || is(z + 1, y, x) || is(z, y - 1, x) ||
         is(z, y + 1, x) || is(z, y, x - 1) || is(z, y, x + 1);
}

inline void erode_once(Grid3<std::uint8_t>& g, std::uint8_t c) {
  std::vector<std::array<int, 3>> remove;
  for (int z = 0; z < g.d; ++z)
    for (int y = 0; y < g.h; ++y)
      for (int x = 0; x < g.w; ++x)
        if (g.at(z, y, x) == c && has_background_neighbor6(g, z, y, x, c))
          remove.push_back({z, y, x});
  for (auto [z, y, x] : remove) g.at(z, y, x) = 0;
}

// Dilation only claims true background, never another organ's voxels.
inline void dilate_once(Grid3<std::uint8_t>& g, std::uint8_t c) {
  std::vector<std::array<int, 3>> add;
  for (int z = 0; z < g.d; ++z)
    for (int y = 0; y < g.h; ++y)
      for (int x = 0; x < g.w; ++x)
        if (g.at(z, y, x) == 0 && touches_class6(g, z, y, x, c))
          add.push_back({z, y, x});
  for (auto [z, y, x] : add) g.at(z, y, x) = c;
}

}  // namespace detail

// Controlled coarse-mask imperfection: per organ, erode or dilate by a
// random radius proportional to `rate`, then flip a `rate` fraction of the
// boundary voxels. Never introduces class ids absent from the oracle.
inline CoarseMask corrupt_labels(const Grid3<std::uint8_t>& labels, double rate,
                                 std::uint64_t seed) {
  if (rate < 0.0 || rate >= 1.0)
    throw Error("phantom.bad_rate", "corruption rate must be in [0, 1)");
  if (rate == 0.0) return CoarseMask{labels, "oracle"};

  Grid3<std::uint8_t> mask = labels;
  std::set<std::uint8_t> classes;
  for (auto c : labels.v)
    if (c != 0) classes.insert(c);

  Rng rng(seed);
  for (std::uint8_t c : classes) {
    int radius = static_cast<int>(std::lround(rate * 5.0 * rng.uniform()));
    bool erode = rng.bernoulli(0.5);
    for (int r = 0; r < radius; ++r)
      erode ? detail::erode_once(mask, c) : detail::dilate_once(mask, c);

    // Boundary = organ voxels facing background plus background voxels
    // touching the organ; flip a `rate` fraction of them.
    std::vector<std::array<int, 3>> boundary;
    for (int z = 0; z < mask.d; ++z)
      for (int y = 0; y < mask.h; ++y)
        for (int x = 0; x < mask.w; ++x) {
          std::uint8_t cur = mask.at(z, y, x);
          if (cur == c && detail::has_background_neighbor6(mask, z, y, x, c))
            boundary.push_back({z, y, x});
          else if (cur == 0 && detail::touches_class6(mask, z, y, x, c))
            boundary.push_back({z, y, x});
        }
    size_t flips = static_cast<size_t>(rate * static_cast<double>(boundary.size()));
    for (size_t f = 0; f < flips && !boundary.empty(); ++f) {
      size_t pick = rng.uniform_index(boundary.size());
      auto [z, y, x] = boundary[pick];
      boundary.erase(boundary.begin() + static_cast<long>(pick));
      auto& cell = mask.at(z, y, x);
      cell = (cell == c) ? static_cast<std::uint8_t>(0) : c;
    }
  }
  return CoarseMask{std::move(mask), "corrupted(" + std::to_string(rate) + ")"};
}

}  // namespace dcc
