#ifndef XMEM_OPTIMIZER_HPP_
#define XMEM_OPTIMIZER_HPP_

#include <cstdint>
#include <span>
#include <vector>

#include "xmem/hyperparams.hpp"
#include "xmem/model.hpp"

namespace xmem {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Moments of one flat parameter vector.
template <typename T>
struct AdamSlot {
  std::vector<T> m;
  std::vector<T> v;
  uint64_t step = 0;
};

/// One bias-corrected Adam update in place. Moments are lazily sized to
/// `theta` on the first call.
template <typename T>
void adam_update(std::span<T> theta, std::span<const T> grad, AdamSlot<T>& slot, const AdamConfig& c);

/// Per-group Adam state in manifest order (weights then bias for each group).
template <typename T>
struct OptimizerState {
  std::vector<AdamSlot<T>> slots;

  static OptimizerState for_params(const ModelParams<T>& params);
};

/// Beta1 used for a module: adversarial modules take kAdversarialBeta1.
double beta1_for(Module m, const HyperParams& hp);

/// Applies `grads` to the groups owned by `player`; other groups and their
/// moments are untouched.
template <typename T>
void adam_step(ModelParams<T>& params, const ModelParams<T>& grads, OptimizerState<T>& state,
               const HyperParams& hp, Player player);

}  // namespace xmem

#endif  // XMEM_OPTIMIZER_HPP_
