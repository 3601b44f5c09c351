#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "dcc/common.hpp"
#include "dcc/grid.hpp"
#include "dcc/phantom.hpp"
#include "dcc/rng.hpp"
#include "dcc/tensor.hpp"

namespace dcc {

// Organ-centered axial patch: image + binary ground truth + binary
// coarse-mask attention, all P x P.
struct Patch {
  Grid2<float> image;
  Grid2<std::uint8_t> gt;
  Grid2<std::uint8_t> attention;
  std::uint8_t organ_class = 0;
  std::string phase;
  int volume_id = -1;
  int slice = -1;
  std::array<int, 2> center{};  // (y, x) in volume coordinates
};

// One augmented copy of a patch. `d` is the masked mean intensity, cached
// once computed (negative until then).
struct AugView {
  Grid2<float> image;
  Grid2<std::uint8_t> attention;
  Grid2<std::uint8_t> gt;
  std::uint8_t organ_class = 0;
  std::string phase;
  int volume_id = -1;
  double d = -1.0;
};

// 2n views interleaved so views 2k and 2k+1 (0-based) are the two
// augmentations of patch k; the positive pairing is partner(k) = k ^ 1 and
// the negative set of anchor k is every other view in the batch.
struct Minibatch {
  std::vector<AugView> views;

  static int partner(int k) { return k ^ 1; }
  int size() const { return static_cast<int>(views.size()); }

  std::vector<int> pairing() const {
    std::vector<int> p(views.size());
    for (size_t k = 0; k < views.size(); ++k) p[k] = static_cast<int>(k) ^ 1;
    return p;
  }
};

inline size_t nonzero_count(const Grid2<std::uint8_t>& g) {
  size_t n = 0;
  for (auto v : g.v) n += (v != 0);
  return n;
}

// Uniformly samples a voxel of `organ_class` from the coarse mask and crops
// the P x P window around it on that axial slice. Windows that would fall
// outside the slice are shifted inside, never zero-padded.
inline Patch sample_patch(const Volume& vol, const CoarseMask& coarse,
                          std::uint8_t organ_class, int patch_size, Rng& rng,
                          int volume_id = -1) {
  const int P = patch_size;
  if (!vol.normalized())
    throw Error("sampler.not_normalized", "volume must be normalized");
  if (P > vol.width() || P > vol.height())
    throw Error("sampler.patch_too_large", "patch size exceeds slice dims");

  std::vector<std::array<int, 3>> candidates;  // (z, y, x)
  for (int z = 0; z < coarse.mask.d; ++z)
    for (int y = 0; y < coarse.mask.h; ++y)
      for (int x = 0; x < coarse.mask.w; ++x)
        if (coarse.mask.at(z, y, x) == organ_class) candidates.push_back({z, y, x});
  if (candidates.empty())
    throw Error("sampler.organ_missing",
                "class " + std::to_string(organ_class) + " absent from coarse mask");

  auto [z, cy, cx] = candidates[rng.uniform_index(candidates.size())];
  int y0 = std::clamp(cy - P / 2, 0, vol.height() - P);
  int x0 = std::clamp(cx - P / 2, 0, vol.width() - P);

  Patch p;
  p.image = Grid2<float>(P, P);
  p.gt = Grid2<std::uint8_t>(P, P);
  p.attention = Grid2<std::uint8_t>(P, P);
  for (int y = 0; y < P; ++y)
    for (int x = 0; x < P; ++x) {
      p.image.at(y, x) = vol.voxels.at(z, y0 + y, x0 + x);
      p.gt.at(y, x) = vol.labels.at(z, y0 + y, x0 + x) == organ_class ? 1 : 0;
      p.attention.at(y, x) = coarse.mask.at(z, y0 + y, x0 + x) == organ_class ? 1 : 0;
    }
  p.organ_class = organ_class;
  p.phase = vol.phase;
  p.volume_id = volume_id;
  p.slice = z;
  p.center = {cy, cx};
  return p;
}

// Augmentation parameters. crop_frac = 1, angle = 0, scale_w = scale_h = 1
// is the exact identity.
struct AugParams {
  double crop_frac = 1.0;  // sub-window fraction in [0.7, 1.0]
  double crop_u = 0.0;     // fractional offsets of the sub-window
  double crop_v = 0.0;
  double angle_deg = 0.0;  // rotation in [-30, +30]
  double scale_w = 1.0;    // width factor in [0.3, 1.0]
  double scale_h = 1.0;    // height factor in [0.7, 1.0]
};

inline AugParams draw_aug_params(Rng& rng) {
  AugParams a;
  a.crop_frac = rng.uniform(0.7, 1.0);
  a.crop_u = rng.uniform();
  a.crop_v = rng.uniform();
  a.angle_deg = rng.uniform(-30.0, 30.0);
  a.scale_w = rng.uniform(0.3, 1.0);
  a.scale_h = rng.uniform(0.7, 1.0);
  return a;
}

namespace detail {

inline float sample_bilinear(const Grid2<float>& g, double y, double x) {
  if (y < 0.0 || x < 0.0 || y > g.h - 1 || x > g.w - 1) return 0.0f;
  int y0 = static_cast<int>(y), x0 = static_cast<int>(x);
  int y1 = std::min(y0 + 1, g.h - 1), x1 = std::min(x0 + 1, g.w - 1);
  double fy = y - y0, fx = x - x0;
  double v = g.at(y0, x0) * (1 - fy) * (1 - fx) + g.at(y0, x1) * (1 - fy) * fx +
             g.at(y1, x0) * fy * (1 - fx) + g.at(y1, x1) * fy * fx;
  return static_cast<float>(v);
}

inline std::uint8_t sample_nearest(const Grid2<std::uint8_t>& g, double y, double x) {
  long yi = std::lround(y), xi = std::lround(x);
  if (yi < 0 || xi < 0 || yi >= g.h || xi >= g.w) return 0;
  return g.at(static_cast<int>(yi), static_cast<int>(xi));
}

template <typename F>
inline void warp(int P, F&& src_of_dst, const Grid2<float>& img_in,
                 const Grid2<std::uint8_t>& att_in, const Grid2<std::uint8_t>& gt_in,
                 Grid2<float>& img_out, Grid2<std::uint8_t>& att_out,
                 Grid2<std::uint8_t>& gt_out) {
  img_out = Grid2<float>(P, P);
  att_out = Grid2<std::uint8_t>(P, P);
  gt_out = Grid2<std::uint8_t>(P, P);
  for (int y = 0; y < P; ++y)
    for (int x = 0; x < P; ++x) {
      auto [sy, sx] = src_of_dst(y, x);
      img_out.at(y, x) = sample_bilinear(img_in, sy, sx);
      att_out.at(y, x) = sample_nearest(att_in, sy, sx);
      gt_out.at(y, x) = sample_nearest(gt_in, sy, sx);
    }
}

}  // namespace detail

// Applies crop->resize, rotation, then anisotropic scaling, in that order.
// Image is resampled bilinearly, masks nearest-neighbor (stays binary).
inline AugView apply_augmentation(const Patch& patch, const AugParams& a) {
  const int P = patch.image.h;
  Grid2<float> img = patch.image;
  Grid2<std::uint8_t> att = patch.attention;
  Grid2<std::uint8_t> gt = patch.gt;
  Grid2<float> img2;
  Grid2<std::uint8_t> att2, gt2;

  // 1. random crop to sub-window of fraction crop_frac, resized back to P x P
  int S = std::clamp(static_cast<int>(std::lround(a.crop_frac * P)), 2, P);
  int oy = static_cast<int>(std::lround(a.crop_v * (P - S)));
  int ox = static_cast<int>(std::lround(a.crop_u * (P - S)));
  double step = static_cast<double>(S - 1) / static_cast<double>(P - 1);
  detail::warp(
      P,
      [&](int y, int x) {
        return std::pair<double, double>(oy + y * step, ox + x * step);
      },
      img, att, gt, img2, att2, gt2);
  std::swap(img, img2);
  std::swap(att, att2);
  std::swap(gt, gt2);

  // 2. rotation about the patch center (inverse mapping)
  if (a.angle_deg != 0.0) {
    double th = a.angle_deg * 3.14159265358979323846 / 180.0;
    double c = std::cos(th), s = std::sin(th);
    double cc = (P - 1) / 2.0;
    detail::warp(
        P,
        [&](int y, int x) {
          double dy = y - cc, dx = x - cc;
          // inverse rotation R(-th) of the destination offset
          return std::pair<double, double>(cc + (c * dy - s * dx),
                                           cc + (s * dy + c * dx));
        },
        img, att, gt, img2, att2, gt2);
    std::swap(img, img2);
    std::swap(att, att2);
    std::swap(gt, gt2);
  }

  // 3. anisotropic scaling about the patch center
  if (a.scale_w != 1.0 || a.scale_h != 1.0) {
    double cc = (P - 1) / 2.0;
    detail::warp(
        P,
        [&](int y, int x) {
          return std::pair<double, double>(cc + (y - cc) / a.scale_h,
                                           cc + (x - cc) / a.scale_w);
        },
        img, att, gt, img2, att2, gt2);
    std::swap(img, img2);
    std::swap(att, att2);
    std::swap(gt, gt2);
  }

  AugView v;
  v.image = std::move(img);
  v.attention = std::move(att);
  v.gt = std::move(gt);
  v.organ_class = patch.organ_class;
  v.phase = patch.phase;
  v.volume_id = patch.volume_id;
  return v;
}

// Random augmentation; redraws parameters up to 8 times if the attention
// channel comes out empty.
inline AugView augment(const Patch& patch, Rng& rng) {
  for (int attempt = 0; attempt < 8; ++attempt) {
    AugView v = apply_augmentation(patch, draw_aug_params(rng));
    if (nonzero_count(v.attention) >= 1) return v;
  }
  throw Error("sampler.degenerate_augmentation",
              "attention empty after 8 augmentation retries");
}

inline Minibatch build_minibatch(const std::vector<Patch>& patches, Rng& rng) {
  if (patches.size() < 2)
    throw Error("sampler.batch_too_small", "need at least 2 patches");
  Minibatch mb;
  mb.views.reserve(patches.size() * 2);
  for (const auto& p : patches) {
    mb.views.push_back(augment(p, rng));
    mb.views.push_back(augment(p, rng));
  }
  return mb;
}

// Channel 0 = image, channel 1 = attention; no other transformation.
inline Tensor to_model_input(const AugView& view) {
  Tensor t(2, view.image.h, view.image.w);
  for (int y = 0; y < view.image.h; ++y)
    for (int x = 0; x < view.image.w; ++x) {
      t.at(0, y, x) = view.image.at(y, x);
      t.at(1, y, x) = view.attention.at(y, x);
    }
  return t;
}

}  // namespace dcc
