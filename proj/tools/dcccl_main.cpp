// dcccl: reproducible phantom experiments for contrast-correlation
// contrastive pretraining and per-organ segmentation fine-tuning.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "dcc/analysis.hpp"
#include "dcc/config.hpp"
#include "dcc/model.hpp"
#include "dcc/trainer.hpp"

namespace fs = std::filesystem;

namespace {

struct CommonOpts {
  std::string config_path;
  std::string out_dir;
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::string phases;  // comma-separated override
  std::string loss;    // override
};

void add_common(CLI::App* cmd, CommonOpts& o) {
  cmd->add_option("--config", o.config_path, "experiment config JSON")->required();
  cmd->add_option("--out", o.out_dir, "output directory (overrides config)");
  cmd->add_option("--seed", o.seed, "seed (overrides config)");
  cmd->add_option("--phases", o.phases, "phase filter, e.g. NC,CE");
  cmd->add_option("--loss", o.loss, "loss mode: dcc|plain|hard_label");
}

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ','))
    if (!tok.empty()) out.push_back(tok);
  return out;
}

// Flags win over config-file values.
dcc::ExperimentConfig load_config(const CommonOpts& o, const CLI::App* cmd) {
  dcc::ExperimentConfig cfg = dcc::load_experiment_config(o.config_path);
  if (cmd->count("--seed")) {
    cfg.seed = o.seed;
    cfg.train.seed = o.seed;
  }
  if (!o.out_dir.empty()) cfg.out_dir = o.out_dir;
  if (!o.phases.empty()) cfg.train.phases = split_csv(o.phases);
  if (!o.loss.empty()) cfg.train.mode = dcc::parse_loss_mode(o.loss);
  return cfg;
}

std::uint64_t file_checksum(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream ss;
  ss << f.rdbuf();
  return dcc::fnv1a64(ss.str());
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

// manifest.json: config hash, seed, and a checksum per artifact written by
// the command, so reruns can be compared byte-for-byte.
void write_manifest(const dcc::ExperimentConfig& cfg,
                    const std::vector<fs::path>& artifacts) {
  nlohmann::json m;
  m["config_hash"] = hex64(dcc::fnv1a64(cfg.raw.dump()));
  m["seed"] = cfg.seed;
  nlohmann::json files = nlohmann::json::object();
  for (const auto& a : artifacts) files[a.filename().string()] = hex64(file_checksum(a));
  m["artifacts"] = files;
  std::ofstream f(fs::path(cfg.out_dir) / "manifest.json");
  if (!f) throw dcc::Error("io.write_failed", cfg.out_dir + "/manifest.json");
  f << m.dump(2) << "\n";
}

std::vector<fs::path> dir_files(const fs::path& dir) {
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().filename() != "manifest.json")
      out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

void write_loss_csv(const std::vector<double>& curve, const fs::path& path) {
  std::ofstream f(path);
  if (!f) throw dcc::Error("io.write_failed", path.string());
  f.precision(17);
  f << "step,loss\n";
  for (size_t i = 0; i < curve.size(); ++i) f << i << "," << curve[i] << "\n";
}

int cmd_generate(const dcc::ExperimentConfig& cfg) {
  fs::create_directories(cfg.out_dir);
  dcc::write_dataset(cfg.dataset, cfg.seed, cfg.out_dir);
  write_manifest(cfg, dir_files(cfg.out_dir));
  return 0;
}

int cmd_pretrain(const dcc::ExperimentConfig& cfg, const std::string& dataset_dir) {
  dcc::Dataset ds = dcc::load_dataset(dataset_dir);
  dcc::PretrainResult res = dcc::pretrain(ds, cfg.train);
  fs::create_directories(cfg.out_dir);
  fs::path ckpt = fs::path(cfg.out_dir) / "pretrain.ckpt";
  dcc::write_checkpoint(ckpt.string(), "encoder+projection", res.loss_curve.size(),
                        cfg.train.patch_size, cfg.train.projection_dim,
                        {&res.encoder.ps, &res.projection.ps});
  write_loss_csv(res.loss_curve, fs::path(cfg.out_dir) / "pretrain_loss.csv");
  write_manifest(cfg, {ckpt, fs::path(cfg.out_dir) / "pretrain_loss.csv"});
  return 0;
}

int cmd_finetune(const dcc::ExperimentConfig& cfg, const std::string& dataset_dir,
                 const std::string& checkpoint) {
  dcc::Dataset ds = dcc::load_dataset(dataset_dir);
  dcc::FinetuneResult res;
  if (!checkpoint.empty()) {
    dcc::Encoder enc;
    dcc::Projection proj;
    dcc::Rng dummy(0);
    enc.init(dummy);
    proj.init(dummy, cfg.train.projection_dim);
    dcc::read_checkpoint(checkpoint, {&enc.ps, &proj.ps});
    res = dcc::finetune(ds, cfg.train, &enc);
  } else {
    res = dcc::finetune(ds, cfg.train, nullptr);
  }
  fs::create_directories(cfg.out_dir);
  fs::path ckpt = fs::path(cfg.out_dir) / "model.ckpt";
  dcc::write_checkpoint(ckpt.string(), "encoder+seghead", res.loss_curve.size(),
                        cfg.train.patch_size, cfg.train.projection_dim,
                        {&res.model.encoder.ps, &res.model.head.ps});
  write_loss_csv(res.loss_curve, fs::path(cfg.out_dir) / "finetune_loss.csv");
  write_manifest(cfg, {ckpt, fs::path(cfg.out_dir) / "finetune_loss.csv"});
  return 0;
}

dcc::SegModel load_seg_model(const std::string& checkpoint,
                             const dcc::TrainConfig& tc) {
  dcc::SegModel model;
  dcc::Rng dummy(0);
  model.encoder.init(dummy);
  model.head.init(dummy);
  auto h = dcc::read_checkpoint(checkpoint, {&model.encoder.ps, &model.head.ps});
  if (h.kind != "encoder+seghead")
    throw dcc::Error("io.bad_checkpoint", "expected an encoder+seghead checkpoint");
  model.patch_size = h.patch_size > 0 ? h.patch_size : tc.patch_size;
  return model;
}

int cmd_evaluate(const dcc::ExperimentConfig& cfg, const std::string& dataset_dir,
                 const std::string& checkpoint) {
  dcc::Dataset ds = dcc::load_dataset(dataset_dir);
  dcc::SegModel model = load_seg_model(checkpoint, cfg.train);
  dcc::MetricsReport rep = dcc::evaluate(model, ds, cfg.train);
  rep.config_echo = cfg.raw;
  fs::create_directories(cfg.out_dir);
  fs::path jp = fs::path(cfg.out_dir) / "report.json";
  fs::path cp = fs::path(cfg.out_dir) / "report.csv";
  dcc::emit_report(rep, jp.string(), cp.string());
  write_manifest(cfg, {jp, cp});
  return 0;
}

int cmd_embed(const dcc::ExperimentConfig& cfg, const std::string& dataset_dir,
              const std::string& checkpoint) {
  dcc::Dataset ds = dcc::load_dataset(dataset_dir);
  dcc::Encoder enc;
  dcc::Projection proj;
  dcc::Rng dummy(0);
  enc.init(dummy);
  proj.init(dummy, cfg.train.projection_dim);
  auto h = dcc::read_checkpoint(checkpoint, {&enc.ps, &proj.ps});
  if (h.kind != "encoder+projection")
    throw dcc::Error("io.bad_checkpoint", "expected an encoder+projection checkpoint");
  auto records = dcc::embed_dataset(ds, enc, proj, cfg.train);
  fs::create_directories(cfg.out_dir);
  fs::path ep = fs::path(cfg.out_dir) / "embeddings.csv";
  dcc::emit_embeddings_csv(records, ep.string());
  write_manifest(cfg, {ep});
  return 0;
}

int cmd_sweep(const dcc::ExperimentConfig& cfg, const std::string& dataset_dir,
              const std::string& temps) {
  dcc::Dataset ds = dcc::load_dataset(dataset_dir);
  std::vector<double> ts;
  for (const auto& t : split_csv(temps.empty() ? "0.01,0.07,0.1,0.5,1.0" : temps))
    ts.push_back(std::stod(t));
  auto rows = dcc::temperature_sweep(ds, cfg.train, ts);
  fs::create_directories(cfg.out_dir);
  fs::path sp = fs::path(cfg.out_dir) / "sweep.csv";
  dcc::emit_sweep_csv(rows, sp.string());
  write_manifest(cfg, {sp});
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dynamic contrast-correlation contrastive learning experiments"};
  app.require_subcommand(1);

  CommonOpts gen_o, pre_o, fin_o, eval_o, emb_o, swp_o;
  std::string pre_ds, fin_ds, eval_ds, emb_ds, swp_ds;
  std::string fin_ckpt, eval_ckpt, emb_ckpt, swp_temps;

  auto* gen = app.add_subcommand("generate", "generate a phantom dataset");
  add_common(gen, gen_o);

  auto* pre = app.add_subcommand("pretrain", "contrastive pretraining");
  add_common(pre, pre_o);
  pre->add_option("--dataset", pre_ds, "dataset directory")->required();

  auto* fin = app.add_subcommand("finetune", "segmentation fine-tuning");
  add_common(fin, fin_o);
  fin->add_option("--dataset", fin_ds, "dataset directory")->required();
  fin->add_option("--checkpoint", fin_ckpt, "pretrain checkpoint (omit for scratch)");

  auto* eval = app.add_subcommand("evaluate", "volumetric Dice evaluation");
  add_common(eval, eval_o);
  eval->add_option("--dataset", eval_ds, "dataset directory")->required();
  eval->add_option("--checkpoint", eval_ckpt, "model checkpoint")->required();

  auto* emb = app.add_subcommand("embed", "export embeddings CSV");
  add_common(emb, emb_o);
  emb->add_option("--dataset", emb_ds, "dataset directory")->required();
  emb->add_option("--checkpoint", emb_ckpt, "pretrain checkpoint")->required();

  auto* swp = app.add_subcommand("sweep", "temperature sweep");
  add_common(swp, swp_o);
  swp->add_option("--dataset", swp_ds, "dataset directory")->required();
  swp->add_option("--temps", swp_temps, "comma-separated temperatures");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (gen->parsed()) return cmd_generate(load_config(gen_o, gen));
    if (pre->parsed()) return cmd_pretrain(load_config(pre_o, pre), pre_ds);
    if (fin->parsed()) return cmd_finetune(load_config(fin_o, fin), fin_ds, fin_ckpt);
    if (eval->parsed())
      return cmd_evaluate(load_config(eval_o, eval), eval_ds, eval_ckpt);
    if (emb->parsed()) return cmd_embed(load_config(emb_o, emb), emb_ds, emb_ckpt);
    if (swp->parsed()) return cmd_sweep(load_config(swp_o, swp), swp_ds, swp_temps);
  } catch (const dcc::Error& e) {
    std::cerr << e.what() << "\n";  // "<class>: <message>", one line
    return e.code().rfind("config.", 0) == 0 ? 2 : 1;
  } catch (const std::exception& e) {
    std::cerr << "runtime.error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
