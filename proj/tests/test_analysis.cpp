#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Dense>
#include <algorithm>
#include <sstream>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "dcc/analysis.hpp"
#include "dcc/rng.hpp"
#include "support/toy_dataset.hpp"

namespace fs = std::filesystem;
using dcc::EmbeddingRecord;
using dcc::Rng;

namespace {

std::vector<std::vector<double>> random_points(Rng& rng, int n, int dim) {
  std::vector<std::vector<double>> pts(n, std::vector<double>(dim));
  for (auto& p : pts)
    for (auto& x : p) x = rng.normal(0.0, 1.0 + rng.uniform());
  return pts;
}

std::vector<EmbeddingRecord> two_cluster_records(double sep, int per_cluster,
                                                 std::uint64_t seed) {
  Rng rng(seed);
  std::vector<EmbeddingRecord> recs;
  for (int cluster = 0; cluster < 2; ++cluster)
    for (int i = 0; i < per_cluster; ++i) {
      EmbeddingRecord r;
      r.phase = cluster == 0 ? "NC" : "CE";
      r.z = {cluster * sep + rng.normal(0.0, 0.05), rng.normal(0.0, 0.05)};
      recs.push_back(std::move(r));
    }
  return recs;
}

}  // namespace

TEST_CASE("PCA eigenvalues and projections match Eigen") {
  Rng rng(31);
  for (int trial = 0; trial < 10; ++trial) {
    int n = 20 + static_cast<int>(rng.uniform_index(30));
    int dim = 4 + static_cast<int>(rng.uniform_index(12));
    auto pts = random_points(rng, n, dim);
    auto res = dcc::pca_project(pts, 2);

    // reference: Eigen self-adjoint eigensolver on the same covariance
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(dim);
    for (const auto& p : pts)
      mean += Eigen::Map<const Eigen::VectorXd>(p.data(), dim);
    mean /= n;
    Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(dim, dim);
    for (const auto& p : pts) {
      Eigen::VectorXd c = Eigen::Map<const Eigen::VectorXd>(p.data(), dim) - mean;
      cov += c * c.transpose();
    }
    cov /= (n - 1);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
    Eigen::VectorXd evals = solver.eigenvalues();  // ascending

    REQUIRE(res.eigenvalues[0] == Catch::Approx(evals(dim - 1)).epsilon(1e-9));
    REQUIRE(res.eigenvalues[1] == Catch::Approx(evals(dim - 2)).epsilon(1e-9));

    for (int c = 0; c < 2; ++c) {
      Eigen::VectorXd ref = solver.eigenvectors().col(dim - 1 - c);
      Eigen::VectorXd mine = Eigen::Map<const Eigen::VectorXd>(
          res.components[c].data(), dim);
      // eigenvectors agree up to sign
      double agree = std::abs(ref.dot(mine));
      REQUIRE(agree == Catch::Approx(1.0).margin(1e-8));
      REQUIRE(mine.norm() == Catch::Approx(1.0).margin(1e-9));
    }
    // projection definition check on one record
    Eigen::VectorXd c0 = Eigen::Map<const Eigen::VectorXd>(pts[0].data(), dim) - mean;
    Eigen::VectorXd comp0 =
        Eigen::Map<const Eigen::VectorXd>(res.components[0].data(), dim);
    REQUIRE(res.coords[0][0] == Catch::Approx(c0.dot(comp0)).margin(1e-9));
  }
}

TEST_CASE("PCA sign convention makes output deterministic") {
  Rng rng(5);
  auto pts = random_points(rng, 30, 6);
  auto a = dcc::pca_project(pts, 2);
  auto b = dcc::pca_project(pts, 2);
  REQUIRE(a.coords == b.coords);
  for (int c = 0; c < 2; ++c)
    for (double x : a.components[c])
      if (std::abs(x) > 1e-12) {
        REQUIRE(x > 0.0);  // first nonzero entry is positive
        break;
      }
}

TEST_CASE("PCA rejects undersized inputs") {
  REQUIRE_THROWS_AS(dcc::pca_project({{1.0, 2.0}, {2.0, 1.0}}, 2), dcc::Error);
  REQUIRE_THROWS_AS(
      dcc::pca_project({{1.0}, {2.0}, {3.0}, {4.0}}, 2), dcc::Error);
}

TEST_CASE("silhouette: two tight far-apart clusters score near 1") {
  auto recs = two_cluster_records(10.0, 20, 3);
  double s = dcc::phase_silhouette(recs);
  REQUIRE(s > 0.97);
  REQUIRE(s <= 1.0);
}

TEST_CASE("silhouette: fully merged clusters score near 0") {
  auto recs = two_cluster_records(0.0, 40, 9);
  double s = dcc::phase_silhouette(recs);
  REQUIRE(std::abs(s) < 0.2);
}

TEST_CASE("silhouette: hand-computed four-point example") {
  // points at 0, 1 (phase A) and 10, 11 (phase B) on a line
  std::vector<EmbeddingRecord> recs(4);
  recs[0].phase = "A"; recs[0].z = {0.0};
  recs[1].phase = "A"; recs[1].z = {1.0};
  recs[2].phase = "B"; recs[2].z = {10.0};
  recs[3].phase = "B"; recs[3].z = {11.0};
  // point 0: a=1, b=(10+11)/2=10.5 -> s=9.5/10.5; point 1: b=9.5 -> 8.5/9.5
  double expect = ((9.5 / 10.5) + (8.5 / 9.5)) * 2.0 / 4.0;
  REQUIRE(dcc::phase_silhouette(recs) == Catch::Approx(expect).margin(1e-12));
}

TEST_CASE("silhouette input validation") {
  std::vector<EmbeddingRecord> one_phase(4);
  for (auto& r : one_phase) {
    r.phase = "NC";
    r.z = {0.0};
  }
  REQUIRE_THROWS_AS(dcc::phase_silhouette(one_phase), dcc::Error);

  std::vector<EmbeddingRecord> tiny(3);
  tiny[0].phase = "NC"; tiny[0].z = {0.0};
  tiny[1].phase = "NC"; tiny[1].z = {1.0};
  tiny[2].phase = "CE"; tiny[2].z = {2.0};  // CE has a single record
  REQUIRE_THROWS_AS(dcc::phase_silhouette(tiny), dcc::Error);
}

TEST_CASE("embedding extraction is deterministic and unit-norm") {
  auto ds = testutil::make_toy_dataset(
      {"NC", "CE"},
      {{1, {{"NC", 0.2}, {"CE", 0.8}}}, {2, {{"NC", 0.5}, {"CE", 0.5}}}});
  auto cfg = testutil::tiny_train_config();
  auto pre = dcc::pretrain(ds, cfg);
  auto a = dcc::embed_dataset(ds, pre.encoder, pre.projection, cfg);
  auto b = dcc::embed_dataset(ds, pre.encoder, pre.projection, cfg);
  REQUIRE(a.size() == 4 * 6);  // combos x embed_patches_per_class
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) {
    REQUIRE(a[i].z == b[i].z);  // bitwise
    REQUIRE(a[i].phase == b[i].phase);
    double n = 0.0;
    for (double x : a[i].z) n += x * x;
    REQUIRE(std::sqrt(n) == Catch::Approx(1.0).margin(1e-9));
    REQUIRE(a[i].d >= 0.0);
    REQUIRE(a[i].d <= 1.0);
  }
}

TEST_CASE("report serialization round-trips through JSON and CSV") {
  dcc::MetricsReport rep;
  rep.mean_dice = 0.875;
  rep.per_organ_dice = {{"organ_1", 0.9}, {"organ_2", 0.85}};
  rep.per_phase_dice = {{"NC", 0.88}, {"CE", 0.87}};
  rep.per_organ_phase_dice = {{"organ_1_NC", 0.91}};
  rep.loss_curve = {1.5, 1.2, 0.9};
  rep.warnings = {"w1"};
  rep.seed = 42;
  rep.config_echo = {{"temperature", 0.07}};

  fs::path dir = fs::temp_directory_path() / "dcc_report_test";
  fs::create_directories(dir);
  auto jpath = (dir / "report.json").string();
  auto cpath = (dir / "report.csv").string();
  dcc::emit_report(rep, jpath, cpath);

  std::ifstream jf(jpath);
  nlohmann::json j;
  jf >> j;
  REQUIRE(j["mean_dice"].get<double>() == 0.875);
  REQUIRE(j["per_organ_dice"]["organ_2"].get<double>() == 0.85);
  REQUIRE(j["seed"].get<std::uint64_t>() == 42);
  REQUIRE(j["loss_curve"].size() == 3);
  REQUIRE(j["config"]["temperature"].get<double>() == 0.07);

  std::ifstream cf(cpath);
  std::string line;
  std::getline(cf, line);
  REQUIRE(line == "key,metric,value");
  std::getline(cf, line);
  REQUIRE(line.rfind("all,mean_dice,", 0) == 0);
  int rows = 0;
  while (std::getline(cf, line)) ++rows;
  REQUIRE(rows == 5);  // 2 organs + 2 phases + 1 organ-phase
  fs::remove_all(dir);
}

TEST_CASE("sweep and embeddings CSV layouts") {
  fs::path dir = fs::temp_directory_path() / "dcc_csv_test";
  fs::create_directories(dir);

  std::vector<dcc::SweepRow> rows{{0.07, 1, 0.93}, {1.0, 1, 0.88}};
  auto spath = (dir / "sweep.csv").string();
  dcc::emit_sweep_csv(rows, spath);
  std::ifstream sf(spath);
  std::string line;
  std::getline(sf, line);
  REQUIRE(line == "T,seed,mean_dice");
  std::getline(sf, line);
  // values round-trip exactly through the text form
  std::replace(line.begin(), line.end(), ',', ' ');
  std::istringstream row(line);
  double t = 0.0, dice = 0.0;
  int seed = -1;
  row >> t >> seed >> dice;
  REQUIRE(t == 0.07);
  REQUIRE(seed == 1);
  REQUIRE(dice == 0.93);

  std::vector<EmbeddingRecord> recs(1);
  recs[0].organ_class = 2;
  recs[0].phase = "CE";
  recs[0].d = 0.5;
  recs[0].z = {0.6, 0.8};
  auto epath = (dir / "emb.csv").string();
  dcc::emit_embeddings_csv(recs, epath);
  std::ifstream ef(epath);
  std::getline(ef, line);
  REQUIRE(line == "organ,phase,d,z_0,z_1");
  std::getline(ef, line);
  REQUIRE(line.rfind("2,CE,0.5,", 0) == 0);
  fs::remove_all(dir);
}

TEST_CASE("temperature sweep rejects non-positive temperatures") {
  auto ds = testutil::make_toy_dataset(
      {"NC", "CE"}, {{1, {{"NC", 0.2}, {"CE", 0.8}}}, {2, {{"NC", 0.5}, {"CE", 0.5}}}});
  auto cfg = testutil::tiny_train_config();
  REQUIRE_THROWS_AS(dcc::temperature_sweep(ds, cfg, {0.07, -1.0}), dcc::Error);
}
