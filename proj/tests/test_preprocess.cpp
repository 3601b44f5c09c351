#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <vector>

#include "dcc/preprocess.hpp"
#include "dcc/rng.hpp"

using dcc::Stage;
using dcc::Volume;

namespace {

Volume raw_volume(int h, int w, int d, std::uint64_t seed, float lo = -500.0f,
                  float hi = 800.0f) {
  Volume vol;
  vol.voxels = dcc::Grid3<float>(h, w, d);
  vol.labels = dcc::Grid3<std::uint8_t>(h, w, d, 0);
  vol.phase = "NC";
  dcc::Rng rng(seed);
  for (auto& x : vol.voxels.v)
    x = static_cast<float>(rng.uniform(lo, hi));
  return vol;
}

}  // namespace

TEST_CASE("windowing clamps exactly to [-175, 250]") {
  Volume vol;
  vol.voxels = dcc::Grid3<float>(1, 5, 1);
  vol.labels = dcc::Grid3<std::uint8_t>(1, 5, 1, 0);
  vol.voxels.v = {-1000.0f, -175.0f, 0.0f, 250.0f, 3000.0f};
  auto out = dcc::window_hu(vol);
  REQUIRE(out.voxels.v == std::vector<float>{-175.0f, -175.0f, 0.0f, 250.0f, 250.0f});
  REQUIRE(out.stage == Stage::Windowed);
}

TEST_CASE("windowing leaves in-range voxels bitwise unchanged") {
  auto vol = raw_volume(8, 8, 4, 21, -170.0f, 240.0f);
  auto before = vol.voxels.v;
  auto out = dcc::window_hu(vol);
  REQUIRE(out.voxels.v == before);
}

TEST_CASE("percentile uses linear interpolation between closest ranks") {
  // 5 values: pos(p) = p/100 * 4
  std::vector<float> v{10.0f, 20.0f, 30.0f, 40.0f, 50.0f};
  REQUIRE(dcc::percentile(v, 0.0) == Catch::Approx(10.0).margin(1e-12));
  REQUIRE(dcc::percentile(v, 100.0) == Catch::Approx(50.0).margin(1e-12));
  REQUIRE(dcc::percentile(v, 50.0) == Catch::Approx(30.0).margin(1e-12));
  REQUIRE(dcc::percentile(v, 25.0) == Catch::Approx(20.0).margin(1e-12));
  REQUIRE(dcc::percentile(v, 12.5) == Catch::Approx(15.0).margin(1e-12));
  // order must not matter
  std::vector<float> shuffled{50.0f, 10.0f, 40.0f, 20.0f, 30.0f};
  REQUIRE(dcc::percentile(shuffled, 12.5) == Catch::Approx(15.0).margin(1e-12));
}

TEST_CASE("normalization matches the clamp((x - X1)/(X99 - X1)) formula") {
  auto vol = dcc::window_hu(raw_volume(16, 16, 8, 33));
  auto vals = vol.voxels.v;
  double x1 = dcc::percentile(vals, 1.0);
  double x99 = dcc::percentile(vals, 99.0);
  auto out = dcc::percentile_normalize(vol);
  REQUIRE(out.stage == Stage::Normalized);
  for (size_t i = 0; i < vals.size(); ++i) {
    double expect = std::clamp((static_cast<double>(vals[i]) - x1) / (x99 - x1), 0.0, 1.0);
    REQUIRE(out.voxels.v[i] == Catch::Approx(expect).margin(1e-6));
    REQUIRE(out.voxels.v[i] >= 0.0f);
    REQUIRE(out.voxels.v[i] <= 1.0f);
  }
}

TEST_CASE("constant volume cannot be normalized") {
  Volume vol;
  vol.voxels = dcc::Grid3<float>(4, 4, 4, 100.0f);
  vol.labels = dcc::Grid3<std::uint8_t>(4, 4, 4, 0);
  auto w = dcc::window_hu(vol);
  try {
    dcc::percentile_normalize(w);
    FAIL("expected a degenerate error");
  } catch (const dcc::Error& e) {
    REQUIRE(e.code() == "preprocess.degenerate");
  }
}

TEST_CASE("stage ordering is enforced") {
  auto vol = raw_volume(8, 8, 4, 1);
  try {
    dcc::percentile_normalize(vol);  // still raw
    FAIL("expected an order error");
  } catch (const dcc::Error& e) {
    REQUIRE(e.code() == "preprocess.order");
  }
  auto w = dcc::window_hu(vol);
  REQUIRE_THROWS_AS(dcc::window_hu(w), dcc::Error);  // double window
  auto n = dcc::percentile_normalize(w);
  REQUIRE_THROWS_AS(dcc::percentile_normalize(n), dcc::Error);
  // crop requires normalized
  dcc::SliceScores scores(4, 0.0);
  REQUIRE_THROWS_AS(dcc::crop_abdomen(w, scores), dcc::Error);
  REQUIRE_NOTHROW(dcc::crop_abdomen(n, scores));
}

TEST_CASE("slice crop keeps scores in [-4, 5] inclusive") {
  dcc::SliceScores scores{-12.0, -4.01, -4.0, 0.0, 5.0, 5.01, 12.0};
  auto keep = dcc::crop_slices(scores);
  REQUIRE(keep == std::vector<int>{2, 3, 4});
  REQUIRE_THROWS_AS(dcc::crop_slices({-10.0, 10.0}), dcc::Error);
}

TEST_CASE("crop_abdomen keeps the right slices and their labels") {
  auto vol = dcc::percentile_normalize(dcc::window_hu(raw_volume(8, 8, 6, 5)));
  for (int z = 0; z < 6; ++z) vol.labels.at(z, 3, 3) = static_cast<std::uint8_t>(z);
  dcc::SliceScores scores{-8.0, -4.0, -1.0, 3.0, 5.0, 9.0};
  auto out = dcc::crop_abdomen(vol, scores);
  REQUIRE(out.depth() == 4);
  std::vector<int> expect{1, 2, 3, 4};
  for (int i = 0; i < 4; ++i) {
    REQUIRE(out.labels.at(i, 3, 3) == expect[i]);
    for (int y = 0; y < 8; ++y)
      for (int x = 0; x < 8; ++x)
        REQUIRE(out.voxels.at(i, y, x) == vol.voxels.at(expect[i], y, x));
  }
  dcc::SliceScores wrong(5, 0.0);
  REQUIRE_THROWS_AS(dcc::crop_abdomen(vol, wrong), dcc::Error);
}

TEST_CASE("full pipeline is idempotent given identical inputs") {
  auto run = [] {
    auto vol = raw_volume(16, 16, 8, 77);
    dcc::SliceScores scores{-6, -4, -2, 0, 2, 4, 5, 7};
    return dcc::crop_abdomen(dcc::percentile_normalize(dcc::window_hu(vol)), scores);
  };
  auto a = run();
  auto b = run();
  REQUIRE(a.voxels.v == b.voxels.v);
  REQUIRE(a.labels == b.labels);
}
