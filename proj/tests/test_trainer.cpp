#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numeric>

#include "dcc/trainer.hpp"
#include "support/toy_dataset.hpp"

using dcc::Dataset;
using dcc::TrainConfig;

namespace {

Dataset two_organ_two_phase() {
  return testutil::make_toy_dataset(
      {"NC", "CE"},
      {{1, {{"NC", 0.2}, {"CE", 0.8}}}, {2, {{"NC", 0.5}, {"CE", 0.5}}}});
}

}  // namespace

TEST_CASE("build_combos enumerates available (organ, phase) pairs") {
  auto ds = two_organ_two_phase();
  auto combos = dcc::detail::build_combos(ds, ds.phases);
  REQUIRE(combos.size() == 4);
  for (const auto& c : combos) REQUIRE(c.item_indices.size() == 1);

  // phase filter narrows the set
  auto nc_only = dcc::detail::build_combos(ds, {"NC"});
  REQUIRE(nc_only.size() == 2);
  for (const auto& c : nc_only) REQUIRE(c.phase == "NC");

  REQUIRE_THROWS_AS(dcc::detail::build_combos(ds, {"ART"}), dcc::Error);
}

TEST_CASE("pretraining runs, records a loss curve, and is seed-deterministic") {
  auto ds = two_organ_two_phase();
  auto cfg = testutil::tiny_train_config();
  cfg.seed = 5;
  auto a = dcc::pretrain(ds, cfg);
  REQUIRE(a.loss_curve.size() == 4);
  for (double loss : a.loss_curve) {
    REQUIRE(std::isfinite(loss));
    REQUIRE(loss > 0.0);
  }
  auto b = dcc::pretrain(ds, cfg);
  REQUIRE(a.loss_curve == b.loss_curve);  // bitwise
  for (size_t i = 0; i < a.encoder.ps.params.size(); ++i)
    REQUIRE(a.encoder.ps.params[i].w == b.encoder.ps.params[i].w);
  for (size_t i = 0; i < a.projection.ps.params.size(); ++i)
    REQUIRE(a.projection.ps.params[i].w == b.projection.ps.params[i].w);

  cfg.seed = 6;
  auto c = dcc::pretrain(ds, cfg);
  REQUIRE(a.loss_curve != c.loss_curve);
}

TEST_CASE("all three loss modes train without blowing up") {
  auto ds = two_organ_two_phase();
  auto cfg = testutil::tiny_train_config();
  for (auto mode : {dcc::LossConfig::Mode::Dcc, dcc::LossConfig::Mode::Plain,
                    dcc::LossConfig::Mode::HardLabel}) {
    cfg.mode = mode;
    auto res = dcc::pretrain(ds, cfg);
    for (double loss : res.loss_curve) REQUIRE(std::isfinite(loss));
  }
}

TEST_CASE("pretraining reduces the contrastive loss on a longer run") {
  auto ds = two_organ_two_phase();
  auto cfg = testutil::tiny_train_config();
  cfg.pretrain_epochs = 4;
  cfg.steps_per_epoch = 10;
  auto res = dcc::pretrain(ds, cfg);
  double head = std::accumulate(res.loss_curve.begin(), res.loss_curve.begin() + 10, 0.0);
  double tail = std::accumulate(res.loss_curve.end() - 10, res.loss_curve.end(), 0.0);
  REQUIRE(tail < head);
}

TEST_CASE("finetuning reduces the dice loss and is seed-deterministic") {
  auto ds = two_organ_two_phase();
  auto cfg = testutil::tiny_train_config();
  cfg.finetune_epochs = 4;
  cfg.steps_per_epoch = 10;
  cfg.finetune_lr = 3e-4;
  auto a = dcc::finetune(ds, cfg);
  REQUIRE(a.loss_curve.size() == 40);
  double head = std::accumulate(a.loss_curve.begin(), a.loss_curve.begin() + 10, 0.0);
  double tail = std::accumulate(a.loss_curve.end() - 10, a.loss_curve.end(), 0.0);
  REQUIRE(tail < head);
  auto b = dcc::finetune(ds, cfg);
  REQUIRE(a.loss_curve == b.loss_curve);
}

TEST_CASE("finetuning from a pretrained encoder starts from those weights") {
  auto ds = two_organ_two_phase();
  auto cfg = testutil::tiny_train_config();
  auto pre = dcc::pretrain(ds, cfg);
  cfg.finetune_epochs = 0;  // zero steps: weights must pass through untouched
  auto fin = dcc::finetune(ds, cfg, &pre.encoder);
  for (size_t i = 0; i < pre.encoder.ps.params.size(); ++i)
    REQUIRE(fin.model.encoder.ps.params[i].w == pre.encoder.ps.params[i].w);
}

TEST_CASE("predict_volume covers present organs and warns about absent ones") {
  auto ds = two_organ_two_phase();
  auto cfg = testutil::tiny_train_config();
  auto fin = dcc::finetune(ds, cfg);
  auto& item = ds.items[0];
  auto pred = dcc::predict_volume(fin.model, item.volume, item.coarse, {1, 2, 9});
  REQUIRE(pred.prob.count(1) == 1);
  REQUIRE(pred.prob.count(2) == 1);
  REQUIRE(pred.prob.count(9) == 0);
  REQUIRE(pred.warnings.size() == 1);
  REQUIRE(pred.warnings[0].find("9") != std::string::npos);
  for (const auto& [organ, prob] : pred.prob) {
    REQUIRE(prob.h == item.volume.height());
    REQUIRE(prob.d == item.volume.depth());
    for (float p : prob.v) {
      REQUIRE(p >= 0.0f);
      REQUIRE(p <= 1.0f);
    }
  }
}

TEST_CASE("fuse_majority: claims, tie-breaks, and background") {
  dcc::Grid2<float> p1(2, 2, 0.0f);
  dcc::Grid2<float> p2(2, 2, 0.0f);
  p1.at(0, 0) = 0.9f;               // only organ 1 claims
  p1.at(0, 1) = 0.6f;
  p2.at(0, 1) = 0.8f;               // organ 2 wins by probability
  p1.at(1, 0) = 0.7f;
  p2.at(1, 0) = 0.7f;               // exact tie: lowest class id wins
  // (1,1): nobody above 0.5 -> background
  p2.at(1, 1) = 0.5f;

  auto fused = dcc::fuse_majority({{1, p1}, {2, p2}});
  REQUIRE(fused.at(0, 0) == 1);
  REQUIRE(fused.at(0, 1) == 2);
  REQUIRE(fused.at(1, 0) == 1);
  REQUIRE(fused.at(1, 1) == 0);

  dcc::Grid2<float> wrong(3, 3, 0.0f);
  REQUIRE_THROWS_AS(dcc::fuse_majority({{1, p1}, {2, wrong}}), dcc::Error);
}

TEST_CASE("dice_score closed forms") {
  dcc::Grid3<std::uint8_t> a(4, 4, 1, 0), b(4, 4, 1, 0);
  REQUIRE(dcc::dice_score(a, b, 1) == 1.0);  // both empty
  for (int i = 0; i < 8; ++i) a.v[i] = 1;
  REQUIRE(dcc::dice_score(a, a, 1) == 1.0);
  REQUIRE(dcc::dice_score(a, b, 1) == 0.0);
  for (int i = 0; i < 4; ++i) b.v[i] = 1;  // half overlap: 2*4/(8+4)
  REQUIRE(dcc::dice_score(a, b, 1) == Catch::Approx(2.0 / 3.0).margin(1e-12));
  dcc::Grid3<std::uint8_t> c(4, 4, 2, 0);
  REQUIRE_THROWS_AS(dcc::dice_score(a, c, 1), dcc::Error);
}

TEST_CASE("evaluate produces a complete, phase-filtered report") {
  auto ds = two_organ_two_phase();
  auto cfg = testutil::tiny_train_config();
  auto fin = dcc::finetune(ds, cfg);
  auto rep = dcc::evaluate(fin.model, ds, cfg);
  REQUIRE(rep.per_organ_dice.size() == 2);
  REQUIRE(rep.per_phase_dice.size() == 2);
  REQUIRE(rep.per_organ_phase_dice.size() == 4);
  REQUIRE(rep.mean_dice >= 0.0);
  REQUIRE(rep.mean_dice <= 1.0);
  double mean_of_organs =
      (rep.per_organ_dice.at("organ_1") + rep.per_organ_dice.at("organ_2")) / 2.0;
  REQUIRE(rep.mean_dice == Catch::Approx(mean_of_organs).margin(1e-12));

  cfg.phases = {"NC"};
  auto rep_nc = dcc::evaluate(fin.model, ds, cfg);
  REQUIRE(rep_nc.per_phase_dice.size() == 1);
  REQUIRE(rep_nc.per_phase_dice.count("NC") == 1);

  cfg.phases = {"ART"};
  REQUIRE_THROWS_AS(dcc::evaluate(fin.model, ds, cfg), dcc::Error);
}

TEST_CASE("a trained model segments the toy blocks well") {
  auto ds = two_organ_two_phase();
  auto cfg = testutil::tiny_train_config();
  cfg.finetune_epochs = 5;
  cfg.steps_per_epoch = 30;
  cfg.finetune_lr = 1e-3;
  auto fin = dcc::finetune(ds, cfg);
  auto rep = dcc::evaluate(fin.model, ds, cfg);
  REQUIRE(rep.mean_dice > 0.6);  // blocks are easy; sanity-level bar
}
