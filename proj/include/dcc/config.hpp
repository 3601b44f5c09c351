#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "dcc/common.hpp"
#include "dcc/phantom.hpp"
#include "dcc/preprocess.hpp"
#include "dcc/trainer.hpp"
#include "dcc/volume_io.hpp"

namespace dcc {

struct ExperimentConfig {
  DatasetSpec dataset;
  TrainConfig train;
  std::uint64_t seed = 1;
  std::string out_dir = "out";
  nlohmann::json raw;  // echo of the validated document
};

namespace detail {

inline void reject_unknown(const nlohmann::json& obj,
                           const std::set<std::string>& allowed,
                           const std::string& where) {
  for (auto it = obj.begin(); it != obj.end(); ++it)
    if (!allowed.count(it.key()))
      throw Error("config.unknown_key", where + "." + it.key());
}

template <typename T>
inline T require(const nlohmann::json& obj, const std::string& key,
                 const std::string& where) {
  if (!obj.contains(key))
    throw Error("config.missing_key", where + "." + key);
  try {
    return obj.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw Error("config.bad_value", where + "." + key);
  }
}

template <typename T>
inline T optional(const nlohmann::json& obj, const std::string& key, T def,
                  const std::string& where) {
  if (!obj.contains(key)) return def;
  try {
    return obj.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw Error("config.bad_value", where + "." + key);
  }
}

}  // namespace detail

inline DatasetSpec parse_dataset_spec(const nlohmann::json& j) {
  detail::reject_unknown(j,
                         {"dims", "spacing_mm", "phases", "volumes_per_phase",
                          "organs", "corruption_rate", "score_range",
                          "background_hu"},
                         "dataset");
  DatasetSpec spec;
  auto dims = detail::require<std::vector<int>>(j, "dims", "dataset");
  if (dims.size() != 3) throw Error("config.bad_value", "dataset.dims");
  spec.dims = {dims[0], dims[1], dims[2]};
  auto sp = detail::optional<std::vector<double>>(j, "spacing_mm", {1.0, 1.0, 1.0},
                                                  "dataset");
  if (sp.size() != 3) throw Error("config.bad_value", "dataset.spacing_mm");
  spec.spacing_mm = {sp[0], sp[1], sp[2]};
  spec.phases = detail::require<std::vector<std::string>>(j, "phases", "dataset");
  spec.volumes_per_phase =
      detail::optional<int>(j, "volumes_per_phase", 1, "dataset");
  spec.corruption_rate =
      detail::optional<double>(j, "corruption_rate", 0.1, "dataset");
  auto sr = detail::optional<std::vector<double>>(j, "score_range", {-8.0, 8.0},
                                                  "dataset");
  if (sr.size() != 2) throw Error("config.bad_value", "dataset.score_range");
  spec.score_range = {sr[0], sr[1]};
  spec.background_hu = detail::optional<double>(j, "background_hu", 40.0, "dataset");

  if (!j.contains("organs")) throw Error("config.missing_key", "dataset.organs");
  for (const auto& oj : j.at("organs")) {
    detail::reject_unknown(
        oj, {"class_id", "center", "semi_axes", "intensity_by_phase", "texture_sd"},
        "dataset.organs[]");
    OrganSpec o;
    int cid = detail::require<int>(oj, "class_id", "organ");
    if (cid <= 0 || cid > 255) throw Error("config.bad_value", "organ.class_id");
    o.class_id = static_cast<std::uint8_t>(cid);
    auto c = detail::require<std::vector<double>>(oj, "center", "organ");
    auto a = detail::require<std::vector<double>>(oj, "semi_axes", "organ");
    if (c.size() != 3 || a.size() != 3)
      throw Error("config.bad_value", "organ.center/semi_axes");
    o.center = {c[0], c[1], c[2]};
    o.semi_axes = {a[0], a[1], a[2]};
    o.intensity_by_phase = detail::require<std::map<std::string, double>>(
        oj, "intensity_by_phase", "organ");
    o.texture_sd = detail::optional<double>(oj, "texture_sd", 0.0, "organ");
    spec.organs.push_back(std::move(o));
  }
  return spec;
}

inline TrainConfig parse_train_config(const nlohmann::json& j) {
  detail::reject_unknown(
      j,
      {"patches_per_batch", "patch_size", "pretrain_epochs", "pretrain_lr",
       "finetune_epochs", "finetune_lr", "steps_per_epoch", "temperature", "loss",
       "phases", "projection_dim", "weight_decay", "embed_patches_per_class"},
      "train");
  TrainConfig c;
  c.patches_per_batch = detail::optional<int>(j, "patches_per_batch", 4, "train");
  c.patch_size = detail::optional<int>(j, "patch_size", 32, "train");
  c.pretrain_epochs = detail::optional<int>(j, "pretrain_epochs", 10, "train");
  c.pretrain_lr = detail::optional<double>(j, "pretrain_lr", 3e-4, "train");
  c.finetune_epochs = detail::optional<int>(j, "finetune_epochs", 5, "train");
  c.finetune_lr = detail::optional<double>(j, "finetune_lr", 1e-4, "train");
  c.steps_per_epoch = detail::optional<int>(j, "steps_per_epoch", 50, "train");
  c.temperature = detail::optional<double>(j, "temperature", 0.07, "train");
  c.mode = parse_loss_mode(detail::optional<std::string>(j, "loss", "dcc", "train"));
  c.phases = detail::optional<std::vector<std::string>>(j, "phases", {}, "train");
  c.projection_dim = detail::optional<int>(j, "projection_dim", 32, "train");
  c.weight_decay = detail::optional<double>(j, "weight_decay", 1e-4, "train");
  c.embed_patches_per_class =
      detail::optional<int>(j, "embed_patches_per_class", 24, "train");
  if (c.patches_per_batch < 2 || c.patch_size < 16 || c.pretrain_epochs < 1 ||
      c.finetune_epochs < 1 || c.steps_per_epoch < 1 || c.temperature <= 0.0 ||
      c.pretrain_lr <= 0.0 || c.finetune_lr <= 0.0)
    throw Error("config.bad_value", "train: non-positive setting");
  return c;
}

inline ExperimentConfig parse_experiment_config(const nlohmann::json& j) {
  detail::reject_unknown(j, {"dataset", "train", "seed", "out_dir"}, "config");
  ExperimentConfig cfg;
  if (!j.contains("dataset")) throw Error("config.missing_key", "dataset");
  cfg.dataset = parse_dataset_spec(j.at("dataset"));
  cfg.train = parse_train_config(j.contains("train") ? j.at("train")
                                                     : nlohmann::json::object());
  cfg.seed = detail::optional<std::uint64_t>(j, "seed", 1, "config");
  cfg.out_dir = detail::optional<std::string>(j, "out_dir", "out", "config");
  cfg.train.seed = cfg.seed;
  cfg.raw = j;
  return cfg;
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw Error("config.read_failed", path);
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error("config.parse_error", e.what());
  }
  return parse_experiment_config(j);
}

// ---- dataset directory: generation output and training input ----

// Slice scores linearly spaced over score_range, matching the volume depth.
inline SliceScores synthetic_slice_scores(const DatasetSpec& spec, int depth) {
  SliceScores s(depth);
  for (int z = 0; z < depth; ++z)
    s[z] = spec.score_range[0] + (spec.score_range[1] - spec.score_range[0]) *
                                     (depth == 1 ? 0.5 : static_cast<double>(z) /
                                                             (depth - 1));
  return s;
}

inline void write_dataset(const DatasetSpec& spec, std::uint64_t seed,
                          const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  auto generated = generate_phantom(spec, seed);

  nlohmann::json manifest;
  manifest["phases"] = spec.phases;
  std::vector<int> organ_ids;
  for (const auto& o : spec.organs) organ_ids.push_back(o.class_id);
  manifest["organ_ids"] = organ_ids;
  manifest["dims"] = {spec.dims[0], spec.dims[1], spec.dims[2]};
  manifest["corruption_rate"] = spec.corruption_rate;
  manifest["seed"] = seed;
  nlohmann::json vols = nlohmann::json::array();

  std::uint64_t index = 0;
  for (const auto& g : generated) {
    std::string base = (fs::path(dir) / g.name).string();
    write_volume(g.volume, base);
    CoarseMask coarse =
        corrupt_labels(g.volume.labels, spec.corruption_rate, seed ^ (index + 0x9e37ULL));
    write_label_grid(coarse.mask, base + ".coarse.lab");
    SliceScores scores = synthetic_slice_scores(spec, g.volume.depth());
    {
      std::ofstream sf(base + ".scores.json");
      if (!sf) throw Error("io.write_failed", base + ".scores.json");
      sf << nlohmann::json(scores).dump() << "\n";
    }
    vols.push_back({{"name", g.name},
                    {"phase", g.volume.phase},
                    {"coarse_source", coarse.source}});
    ++index;
  }
  manifest["volumes"] = vols;
  std::ofstream mf(fs::path(dir) / "dataset.json");
  if (!mf) throw Error("io.write_failed", dir + "/dataset.json");
  mf << manifest.dump(2) << "\n";
}

// Loads a generated dataset and runs the full preprocessing chain
// (window -> percentile-normalize -> abdominal crop) on every volume; the
// coarse mask is cropped with the same slice selection.
inline Dataset load_dataset(const std::string& dir) {
  namespace fs = std::filesystem;
  std::ifstream mf(fs::path(dir) / "dataset.json");
  if (!mf) throw Error("io.read_failed", dir + "/dataset.json");
  nlohmann::json manifest;
  try {
    mf >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw Error("io.bad_manifest", e.what());
  }

  Dataset ds;
  for (const auto& p : manifest.at("phases")) ds.phases.push_back(p.get<std::string>());
  for (const auto& o : manifest.at("organ_ids"))
    ds.organ_ids.push_back(static_cast<std::uint8_t>(o.get<int>()));
  std::set<std::string> allowed(ds.phases.begin(), ds.phases.end());

  for (const auto& vj : manifest.at("volumes")) {
    DatasetItem item;
    item.name = vj.at("name").get<std::string>();
    std::string base = (fs::path(dir) / item.name).string();
    Volume raw = read_volume(base, allowed);
    Grid3<std::uint8_t> coarse_raw =
        read_label_grid(base + ".coarse.lab", raw.height(), raw.width(), raw.depth());
    SliceScores scores = read_slice_scores(base + ".scores.json");

    Volume windowed = window_hu(std::move(raw));
    Volume normalized = percentile_normalize(std::move(windowed));
    std::vector<int> keep = crop_slices(scores);
    item.volume = crop_abdomen(normalized, scores);
    item.coarse.mask = crop_label_grid(coarse_raw, keep);
    item.coarse.source = vj.value("coarse_source", "oracle");
    ds.items.push_back(std::move(item));
  }
  return ds;
}

}  // namespace dcc
