#include "xmem/optimizer.hpp"

#include <cmath>

#include "xmem/errors.hpp"

namespace xmem {

template <typename T>
void adam_update(std::span<T> theta, std::span<const T> grad, AdamSlot<T>& slot, const AdamConfig& c) {
  if (theta.size() != grad.size()) {
    throw DimensionError("adam_update: " + std::to_string(theta.size()) + " parameters vs " +
                         std::to_string(grad.size()) + " gradients");
  }
  if (slot.m.empty() && slot.step == 0) {
    slot.m.assign(theta.size(), T(0));
    slot.v.assign(theta.size(), T(0));
  }
  if (slot.m.size() != theta.size()) throw DimensionError("adam_update: moment size mismatch");
  ++slot.step;
  const double t = static_cast<double>(slot.step);
  const T b1 = static_cast<T>(c.beta1), b2 = static_cast<T>(c.beta2);
  const T corr1 = static_cast<T>(1.0 - std::pow(c.beta1, t));
  const T corr2 = static_cast<T>(1.0 - std::pow(c.beta2, t));
  const T lr = static_cast<T>(c.lr), eps = static_cast<T>(c.eps);
  for (size_t i = 0; i < theta.size(); ++i) {
    const T g = grad[i];
    slot.m[i] = b1 * slot.m[i] + (T(1) - b1) * g;
    slot.v[i] = b2 * slot.v[i] + (T(1) - b2) * g * g;
    const T m_hat = slot.m[i] / corr1;
    const T v_hat = slot.v[i] / corr2;
    theta[i] -= lr * m_hat / (std::sqrt(v_hat) + eps);
  }
}

template <typename T>
OptimizerState<T> OptimizerState<T>::for_params(const ModelParams<T>& params) {
  OptimizerState s;
  params.for_each_group([&](Module, const ParamGroup<T>& g, Activation) {
    s.slots.push_back({std::vector<T>(g.weights.size(), T(0)), std::vector<T>(g.weights.size(), T(0)), 0});
    s.slots.push_back({std::vector<T>(g.bias.size(), T(0)), std::vector<T>(g.bias.size(), T(0)), 0});
  });
  return s;
}

double beta1_for(Module m, const HyperParams& hp) {
  switch (m) {
    case Module::critic_modality:
    case Module::disc_r2i:
    case Module::gen_r2i:
      return kAdversarialBeta1;
    default:
      return hp.beta1;
  }
}

template <typename T>
void adam_step(ModelParams<T>& params, const ModelParams<T>& grads, OptimizerState<T>& state,
               const HyperParams& hp, Player player) {
  std::vector<const ParamGroup<T>*> g;
  grads.for_each_group([&](Module, const ParamGroup<T>& p, Activation) { g.push_back(&p); });
  if (state.slots.size() != 2 * g.size()) throw DimensionError("adam_step: optimizer state does not match model");
  size_t k = 0;
  params.for_each_group([&](Module m, ParamGroup<T>& p, Activation) {
    const ParamGroup<T>& dp = *g[k];
    if (player_of(m) == player) {
      if (!p.weights.same_shape(dp.weights) || p.bias.size() != dp.bias.size()) {
        throw DimensionError("adam_step: gradient shape mismatch in " + p.name);
      }
      const AdamConfig c{hp.lr, beta1_for(m, hp), hp.beta2, hp.eps};
      adam_update(p.weights.values(), dp.weights.values(), state.slots[2 * k], c);
      adam_update(std::span<T>(p.bias), std::span<const T>(dp.bias), state.slots[2 * k + 1], c);
    }
    ++k;
  });
}

#define XMEM_INSTANTIATE_OPTIMIZER(T)                                                                \
  template void adam_update(std::span<T>, std::span<const T>, AdamSlot<T>&, const AdamConfig&);      \
  template struct OptimizerState<T>;                                                                 \
  template void adam_step(ModelParams<T>&, const ModelParams<T>&, OptimizerState<T>&, const HyperParams&, \
                          Player);

XMEM_INSTANTIATE_OPTIMIZER(float)
XMEM_INSTANTIATE_OPTIMIZER(double)

}  // namespace xmem
