#pragma once

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "dcc/common.hpp"
#include "dcc/phantom.hpp"

namespace dcc {

static_assert(std::endian::native == std::endian::little,
              "volume file format is little-endian");

// Volume on disk = <base>.vol (raw float32 voxels, x-fastest) + <base>.json
// sidecar + <base>.lab (raw uint8 class ids, same order).
inline void write_volume(const Volume& vol, const std::string& base_path) {
  namespace fs = std::filesystem;
  fs::path base(base_path);

  std::ofstream vf(base_path + ".vol", std::ios::binary);
  if (!vf) throw Error("io.write_failed", base_path + ".vol");
  vf.write(reinterpret_cast<const char*>(vol.voxels.v.data()),
           static_cast<std::streamsize>(vol.voxels.v.size() * sizeof(float)));

  std::ofstream lf(base_path + ".lab", std::ios::binary);
  if (!lf) throw Error("io.write_failed", base_path + ".lab");
  lf.write(reinterpret_cast<const char*>(vol.labels.v.data()),
           static_cast<std::streamsize>(vol.labels.v.size()));

  nlohmann::json side;
  side["dims"] = {vol.voxels.h, vol.voxels.w, vol.voxels.d};
  side["spacing_mm"] = {vol.spacing_mm[0], vol.spacing_mm[1], vol.spacing_mm[2]};
  side["phase"] = vol.phase;
  side["normalized"] = vol.normalized();
  side["labels_file"] = base.filename().string() + ".lab";
  std::ofstream sf(base_path + ".json");
  if (!sf) throw Error("io.write_failed", base_path + ".json");
  sf << side.dump(2) << "\n";
}

// `path` may be the bare base name, the .vol path, or the sidecar path.
// If `allowed_phases` is non-empty, the sidecar's phase must be one of them.
inline Volume read_volume(const std::string& path,
                          const std::set<std::string>& allowed_phases = {}) {
  std::string base = path;
  for (const std::string ext : {".json", ".vol"})
    if (base.size() > ext.size() && base.substr(base.size() - ext.size()) == ext) {
      base = base.substr(0, base.size() - ext.size());
      break;
    }

  nlohmann::json side;
  {
    std::ifstream sf(base + ".json");
    if (!sf) throw Error("io.read_failed", base + ".json");
    try {
      sf >> side;
    } catch (const nlohmann::json::exception& e) {
      throw Error("io.bad_sidecar", e.what());
    }
  }
  if (!side.contains("dims") || !side.contains("spacing_mm") ||
      !side.contains("phase") || !side.contains("normalized") ||
      !side.contains("labels_file"))
    throw Error("io.bad_sidecar", "missing required key in " + base + ".json");

  Volume vol;
  try {
    auto dims = side.at("dims").get<std::vector<int>>();
    auto sp = side.at("spacing_mm").get<std::vector<double>>();
    if (dims.size() != 3 || sp.size() != 3)
      throw Error("io.bad_sidecar", "dims/spacing_mm must have 3 entries");
    if (dims[0] <= 0 || dims[1] <= 0 || dims[2] <= 0)
      throw Error("io.bad_sidecar", "dims must be positive");
    vol.voxels = Grid3<float>(dims[0], dims[1], dims[2]);
    vol.labels = Grid3<std::uint8_t>(dims[0], dims[1], dims[2]);
    vol.spacing_mm = {sp[0], sp[1], sp[2]};
    vol.phase = side.at("phase").get<std::string>();
    vol.stage = side.at("normalized").get<bool>() ? Stage::Normalized : Stage::Raw;
  } catch (const nlohmann::json::exception& e) {
    throw Error("io.bad_sidecar", e.what());
  }
  if (vol.phase.empty()) throw Error("io.unknown_phase", "empty phase tag");
  if (!allowed_phases.empty() && !allowed_phases.count(vol.phase))
    throw Error("io.unknown_phase", "phase tag '" + vol.phase + "'");

  const size_t n = vol.voxels.size();
  {
    std::ifstream vf(base + ".vol", std::ios::binary | std::ios::ate);
    if (!vf) throw Error("io.read_failed", base + ".vol");
    auto bytes = static_cast<size_t>(vf.tellg());
    if (bytes != n * sizeof(float))
      throw Error("io.dims_mismatch",
                  "payload has " + std::to_string(bytes / sizeof(float)) +
                      " voxels, sidecar dims give " + std::to_string(n));
    vf.seekg(0);
    vf.read(reinterpret_cast<char*>(vol.voxels.v.data()),
            static_cast<std::streamsize>(bytes));
    if (!vf) throw Error("io.read_failed", base + ".vol");
  }
  {
    std::filesystem::path lab =
        std::filesystem::path(base).parent_path() /
        side.at("labels_file").get<std::string>();
    std::ifstream lf(lab, std::ios::binary | std::ios::ate);
    if (!lf) throw Error("io.read_failed", lab.string());
    auto bytes = static_cast<size_t>(lf.tellg());
    if (bytes != n)
      throw Error("io.dims_mismatch", "labels payload has " +
                                          std::to_string(bytes) +
                                          " entries, expected " + std::to_string(n));
    lf.seekg(0);
    lf.read(reinterpret_cast<char*>(vol.labels.v.data()),
            static_cast<std::streamsize>(bytes));
    if (!lf) throw Error("io.read_failed", lab.string());
  }
  return vol;
}

// Raw uint8 grid (coarse masks reuse the .lab layout).
inline void write_label_grid(const Grid3<std::uint8_t>& g, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("io.write_failed", path);
  f.write(reinterpret_cast<const char*>(g.v.data()),
          static_cast<std::streamsize>(g.v.size()));
}

inline Grid3<std::uint8_t> read_label_grid(const std::string& path, int h, int w, int d) {
  Grid3<std::uint8_t> g(h, w, d);
  std::ifstream f(path, std::ios::binary | std::ios::ate);
  if (!f) throw Error("io.read_failed", path);
  if (static_cast<size_t>(f.tellg()) != g.size())
    throw Error("io.dims_mismatch", path);
  f.seekg(0);
  f.read(reinterpret_cast<char*>(g.v.data()), static_cast<std::streamsize>(g.size()));
  return g;
}

}  // namespace dcc
