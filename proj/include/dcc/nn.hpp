#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "dcc/common.hpp"
#include "dcc/rng.hpp"
#include "dcc/tensor.hpp"

namespace dcc::nn {

// Named parameter tensor with its gradient accumulator.
struct Param {
  std::string name;
  std::vector<int> shape;
  std::vector<double> w;
  std::vector<double> g;

  size_t size() const { return w.size(); }
};

struct ParamSet {
  std::vector<Param> params;

  Param& add(const std::string& name, std::vector<int> shape) {
    size_t n = 1;
    for (int s : shape) n *= static_cast<size_t>(s);
    params.push_back(Param{name, std::move(shape), std::vector<double>(n, 0.0),
                           std::vector<double>(n, 0.0)});
    return params.back();
  }

  Param& find(const std::string& name) {
    for (auto& p : params)
      if (p.name == name) return p;
    throw Error("model.no_param", name);
  }

  void zero_grad() {
    for (auto& p : params) std::fill(p.g.begin(), p.g.end(), 0.0);
  }

  size_t total() const {
    size_t n = 0;
    for (const auto& p : params) n += p.size();
    return n;
  }
};

// He-style scaled uniform fan-in initialization.
inline void init_uniform_fan_in(std::vector<double>& w, size_t fan_in, Rng& rng) {
  double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  for (auto& x : w) x = rng.uniform(-bound, bound);
}

// ---- layer primitives (double precision, zero padding, fixed loop order) ----

// 3x3 convolution, padding 1, stride 1. w shape [oc][ic][3][3], b shape [oc].
inline Tensor conv3x3_forward(const Tensor& in, const Param& w, const Param& b) {
  const int oc = w.shape[0], ic = w.shape[1];
  if (ic != in.c) throw Error("model.shape_mismatch", "conv input channels");
  Tensor out(oc, in.h, in.w);
  for (int co = 0; co < oc; ++co)
    for (int y = 0; y < in.h; ++y)
      for (int x = 0; x < in.w; ++x) {
        double acc = b.w[co];
        for (int cin = 0; cin < ic; ++cin)
          for (int dy = -1; dy <= 1; ++dy) {
            int yy = y + dy;
            if (yy < 0 || yy >= in.h) continue;
            for (int dx = -1; dx <= 1; ++dx) {
              int xx = x + dx;
              if (xx < 0 || xx >= in.w) continue;
              acc += w.w[((static_cast<size_t>(co) * ic + cin) * 3 + (dy + 1)) * 3 +
                         (dx + 1)] *
                     in.at(cin, yy, xx);
            }
          }
        out.at(co, y, x) = acc;
      }
  return out;
}

inline Tensor conv3x3_backward(const Tensor& in, Param& w, Param& b,
                               const Tensor& dout) {
  const int oc = w.shape[0], ic = w.shape[1];
  Tensor din(in.c, in.h, in.w);
  for (int co = 0; co < oc; ++co)
    for (int y = 0; y < in.h; ++y)
      for (int x = 0; x < in.w; ++x) {
        double g = dout.at(co, y, x);
        b.g[co] += g;
        for (int cin = 0; cin < ic; ++cin)
          for (int dy = -1; dy <= 1; ++dy) {
            int yy = y + dy;
            if (yy < 0 || yy >= in.h) continue;
            for (int dx = -1; dx <= 1; ++dx) {
              int xx = x + dx;
              if (xx < 0 || xx >= in.w) continue;
              size_t wi =
                  ((static_cast<size_t>(co) * ic + cin) * 3 + (dy + 1)) * 3 + (dx + 1);
              w.g[wi] += g * in.at(cin, yy, xx);
              din.at(cin, yy, xx) += g * w.w[wi];
            }
          }
      }
  return din;
}

inline Tensor relu_forward(const Tensor& in) {
  Tensor out = in;
  for (auto& x : out.v) x = x > 0.0 ? x : 0.0;
  return out;
}

// `pre` is the pre-activation tensor saved at forward time.
inline Tensor relu_backward(const Tensor& pre, const Tensor& dout) {
  Tensor din = dout;
  for (size_t i = 0; i < din.v.size(); ++i)
    if (pre.v[i] <= 0.0) din.v[i] = 0.0;
  return din;
}

// 2x2 average pooling, stride 2; h and w must be even.
inline Tensor avgpool2_forward(const Tensor& in) {
  if (in.h % 2 != 0 || in.w % 2 != 0)
    throw Error("model.shape_mismatch", "avgpool2 needs even spatial dims");
  Tensor out(in.c, in.h / 2, in.w / 2);
  for (int c = 0; c < in.c; ++c)
    for (int y = 0; y < out.h; ++y)
      for (int x = 0; x < out.w; ++x)
        out.at(c, y, x) = 0.25 * (in.at(c, 2 * y, 2 * x) + in.at(c, 2 * y, 2 * x + 1) +
                                  in.at(c, 2 * y + 1, 2 * x) +
                                  in.at(c, 2 * y + 1, 2 * x + 1));
  return out;
}

inline Tensor avgpool2_backward(int in_h, int in_w, const Tensor& dout) {
  Tensor din(dout.c, in_h, in_w);
  for (int c = 0; c < dout.c; ++c)
    for (int y = 0; y < dout.h; ++y)
      for (int x = 0; x < dout.w; ++x) {
        double g = 0.25 * dout.at(c, y, x);
        din.at(c, 2 * y, 2 * x) = g;
        din.at(c, 2 * y, 2 * x + 1) = g;
        din.at(c, 2 * y + 1, 2 * x) = g;
        din.at(c, 2 * y + 1, 2 * x + 1) = g;
      }
  return din;
}

// 2x nearest-neighbor upsampling.
inline Tensor upsample2_forward(const Tensor& in) {
  Tensor out(in.c, in.h * 2, in.w * 2);
  for (int c = 0; c < in.c; ++c)
    for (int y = 0; y < out.h; ++y)
      for (int x = 0; x < out.w; ++x) out.at(c, y, x) = in.at(c, y / 2, x / 2);
  return out;
}

inline Tensor upsample2_backward(const Tensor& dout) {
  Tensor din(dout.c, dout.h / 2, dout.w / 2);
  for (int c = 0; c < dout.c; ++c)
    for (int y = 0; y < dout.h; ++y)
      for (int x = 0; x < dout.w; ++x) din.at(c, y / 2, x / 2) += dout.at(c, y, x);
  return din;
}

inline std::vector<double> global_avgpool_forward(const Tensor& in) {
  std::vector<double> out(in.c, 0.0);
  double inv = 1.0 / (static_cast<double>(in.h) * in.w);
  for (int c = 0; c < in.c; ++c) {
    double s = 0.0;
    for (int y = 0; y < in.h; ++y)
      for (int x = 0; x < in.w; ++x) s += in.at(c, y, x);
    out[c] = s * inv;
  }
  return out;
}

inline Tensor global_avgpool_backward(int h, int w, const std::vector<double>& dout) {
  Tensor din(static_cast<int>(dout.size()), h, w);
  double inv = 1.0 / (static_cast<double>(h) * w);
  for (int c = 0; c < din.c; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) din.at(c, y, x) = dout[c] * inv;
  return din;
}

// Affine layer y = W x + b. w shape [out][in].
inline std::vector<double> affine_forward(const std::vector<double>& in,
                                          const Param& w, const Param& b) {
  const int no = w.shape[0], ni = w.shape[1];
  if (static_cast<int>(in.size()) != ni)
    throw Error("model.shape_mismatch", "affine input size");
  std::vector<double> out(no);
  for (int o = 0; o < no; ++o) {
    double acc = b.w[o];
    for (int i = 0; i < ni; ++i) acc += w.w[static_cast<size_t>(o) * ni + i] * in[i];
    out[o] = acc;
  }
  return out;
}

inline std::vector<double> affine_backward(const std::vector<double>& in, Param& w,
                                           Param& b, const std::vector<double>& dout) {
  const int no = w.shape[0], ni = w.shape[1];
  std::vector<double> din(ni, 0.0);
  for (int o = 0; o < no; ++o) {
    double g = dout[o];
    b.g[o] += g;
    for (int i = 0; i < ni; ++i) {
      w.g[static_cast<size_t>(o) * ni + i] += g * in[i];
      din[i] += g * w.w[static_cast<size_t>(o) * ni + i];
    }
  }
  return din;
}

inline std::vector<double> relu_forward(const std::vector<double>& in) {
  std::vector<double> out = in;
  for (auto& x : out) x = x > 0.0 ? x : 0.0;
  return out;
}

inline std::vector<double> relu_backward(const std::vector<double>& pre,
                                         const std::vector<double>& dout) {
  std::vector<double> din = dout;
  for (size_t i = 0; i < din.size(); ++i)
    if (pre[i] <= 0.0) din[i] = 0.0;
  return din;
}

constexpr double kNormEps = 1e-12;

// z = y / (||y|| + eps); the eps guards the zero vector.
inline std::vector<double> l2_normalize_forward(const std::vector<double>& y,
                                                double& norm_out) {
  double n2 = 0.0;
  for (double x : y) n2 += x * x;
  double n = std::sqrt(n2);
  norm_out = n;
  std::vector<double> z(y.size());
  double inv = 1.0 / (n + kNormEps);
  for (size_t i = 0; i < y.size(); ++i) z[i] = y[i] * inv;
  return z;
}

inline std::vector<double> l2_normalize_backward(const std::vector<double>& y,
                                                 double norm,
                                                 const std::vector<double>& dz) {
  // z = y / (n + eps), n = ||y||; dn/dy = y / n
  double denom = norm + kNormEps;
  double dzy = 0.0;
  for (size_t i = 0; i < y.size(); ++i) dzy += dz[i] * y[i];
  std::vector<double> dy(y.size());
  double inv = 1.0 / denom;
  double coef = norm > 0.0 ? dzy / (denom * denom * norm) : 0.0;
  for (size_t i = 0; i < y.size(); ++i) dy[i] = dz[i] * inv - coef * y[i];
  return dy;
}

inline Tensor sigmoid_forward(const Tensor& in) {
  Tensor out = in;
  for (auto& x : out.v) x = 1.0 / (1.0 + std::exp(-x));
  return out;
}

// `out` is the sigmoid output saved at forward time.
inline Tensor sigmoid_backward(const Tensor& out, const Tensor& dout) {
  Tensor din = dout;
  for (size_t i = 0; i < din.v.size(); ++i)
    din.v[i] *= out.v[i] * (1.0 - out.v[i]);
  return din;
}

}  // namespace dcc::nn
