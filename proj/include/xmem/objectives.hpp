#ifndef XMEM_OBJECTIVES_HPP_
#define XMEM_OBJECTIVES_HPP_

#include <span>

#include "xmem/batch.hpp"
#include "xmem/hyperparams.hpp"
#include "xmem/losses.hpp"
#include "xmem/model.hpp"

namespace xmem {

template <typename T>
struct LossBreakdown {
  T l_ret = 0;
  T l_ma = 0;  // encoder-side alignment term
  T l_g_r2i = 0;
  T l_c_r2i = 0;
  T l_g_i2r = 0;
  T l_c_i2r = 0;
  T total = 0;

  T l_r2i() const { return l_g_r2i + l_c_r2i; }
  T l_i2r() const { return l_g_i2r + l_c_i2r; }
};

/// L_ret + lambda1 * L_ma + lambda2 * (L_r2i + L_i2r). Critic and
/// discriminator losses never enter: their players maximize them.
template <typename T>
T total_loss(const LossBreakdown<T>& parts, const HyperParams& hp);

/// A scalar objective of the full parameter set together with its gradient
/// w.r.t. every parameter group. Players apply the subset they own.
template <typename T>
struct Objective {
  T value = 0;
  ModelParams<T> grads;
  LossBreakdown<T> parts;
  T mean_hinge = 0;
  T wasserstein = 0;
  T gp = 0;
};

template <typename T>
Objective<T> retrieval_objective(const ModelParams<T>& params, const PairedBatch<T>& batch,
                                 const HyperParams& hp, bool hard_mining);

/// Critic loss; `interp` holds one interpolation weight per row.
template <typename T>
Objective<T> critic_objective(const ModelParams<T>& params, const PairedBatch<T>& batch,
                              const HyperParams& hp, std::span<const T> interp);

template <typename T>
Objective<T> alignment_objective(const ModelParams<T>& params, const PairedBatch<T>& batch,
                                 const HyperParams& hp);

/// Image discriminator loss of the recipe2image game.
template <typename T>
Objective<T> r2i_disc_objective(const ModelParams<T>& params, const PairedBatch<T>& batch,
                                const HyperParams& hp);

/// Generator + classifier terms of recipe2image.
template <typename T>
Objective<T> r2i_objective(const ModelParams<T>& params, const PairedBatch<T>& batch,
                           const HyperParams& hp);

template <typename T>
Objective<T> i2r_objective(const ModelParams<T>& params, const PairedBatch<T>& batch,
                           const HyperParams& hp);

/// The full weighted objective minimized by the embedding player; disabled
/// arms contribute 0.
template <typename T>
Objective<T> joint_objective(const ModelParams<T>& params, const PairedBatch<T>& batch,
                             const HyperParams& hp, const AblationConfig& ablation);

}  // namespace xmem

#endif  // XMEM_OBJECTIVES_HPP_
