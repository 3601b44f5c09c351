#pragma once

// Independent transliteration of the weighted contrastive loss, used only as
// a test oracle. Deliberately shares no code with dcc::dcc_loss: naive
// exponentials in extended precision, no max-subtraction, no gradient.

#include <cmath>
#include <cstddef>
#include <vector>

#include "dcc/dcc.hpp"

namespace oracle {

inline long double ref_weight(int k, int j, const dcc::CorrelationMatrix& V,
                              const dcc::LossConfig& cfg,
                              const std::vector<dcc::ViewLabel>* labels) {
  if (cfg.mode == dcc::LossConfig::Mode::Plain) return 1.0L;
  if (cfg.mode == dcc::LossConfig::Mode::HardLabel && labels != nullptr &&
      (*labels)[k] == (*labels)[j])
    return 1.0L;
  return 1.0L - static_cast<long double>(V.at(k, j));
}

inline double reference_dcc_loss(const std::vector<std::vector<double>>& z,
                                 const dcc::CorrelationMatrix& V,
                                 const std::vector<int>& p,
                                 const dcc::LossConfig& cfg,
                                 const std::vector<dcc::ViewLabel>* labels = nullptr) {
  const int N = static_cast<int>(z.size());
  long double total = 0.0L;
  for (int k = 0; k < N; ++k) {
    auto sim = [&](int j) {
      long double s = 0.0L;
      for (size_t t = 0; t < z[k].size(); ++t)
        s += static_cast<long double>(z[k][t]) * static_cast<long double>(z[j][t]);
      return s;
    };
    long double num = std::exp(sim(p[k]) * ref_weight(k, p[k], V, cfg, labels) /
                               static_cast<long double>(cfg.temperature));
    long double den = 0.0L;
    for (int j = 0; j < N; ++j) {
      if (j == k) continue;
      den += std::exp(sim(j) * ref_weight(k, j, V, cfg, labels) /
                      static_cast<long double>(cfg.temperature));
    }
    total += -std::log(num / den);
  }
  return static_cast<double>(total);
}

}  // namespace oracle
