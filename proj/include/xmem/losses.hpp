#ifndef XMEM_LOSSES_HPP_
#define XMEM_LOSSES_HPP_

#include <cstdint>
#include <span>
#include <vector>

#include "xmem/hyperparams.hpp"
#include "xmem/model.hpp"

namespace xmem {

// ---------------------------------------------------------------------------
// Retrieval loss
// ---------------------------------------------------------------------------

enum class AnchorModality { image, recipe };

struct TripletSelection {
  AnchorModality modality;
  size_t anchor;
  size_t positive;  // row index in the other modality
  size_t negative;
  double hinge;
};

template <typename T>
struct TripletResult {
  T loss = 0;
  size_t contributing = 0;  // anchors that have at least one in-batch negative
  std::vector<TripletSelection> selections;
  Tensor<T> grad_v;  // dloss/dV
  Tensor<T> grad_r;  // dloss/dR
};

/// Bidirectional triplet loss with in-batch hard mining: per anchor, the
/// farthest positive and the nearest negative (ties to the lowest index).
/// Rows sharing a recipe id are positives of each other across modalities.
/// The loss is the mean hinge over anchors that have a negative.
template <typename T>
TripletResult<T> triplet_loss_hard(const Tensor<T>& v, const Tensor<T>& r,
                                   std::span<const uint64_t> recipe_ids, T alpha);

/// Un-mined baseline: per anchor, the mean hinge over every
/// (positive, negative) combination; then the mean over anchors.
/// `selections` is left empty.
template <typename T>
TripletResult<T> triplet_loss_all(const Tensor<T>& v, const Tensor<T>& r,
                                  std::span<const uint64_t> recipe_ids, T alpha);

// ---------------------------------------------------------------------------
// Modality alignment
// ---------------------------------------------------------------------------

template <typename T>
struct CriticTerms {
  T loss = 0;
  T wasserstein = 0;  // mean D(V_m) - mean D(R_m)
  T gp = 0;           // mean (||grad D(x_hat)|| - 1)^2, wgan_gp mode only
};

/// Loss minimized by the modality critic. In wgan_gp mode:
///   mean D(R_m) - mean D(V_m) + lambda_gp * GP,
/// x_hat_i = eps_i V_m,i + (1 - eps_i) R_m,i. In logistic mode the negated
/// cross-entropy objective, with images labelled 1 and recipes 0.
/// Gradients (scaled by `weight`) are accumulated into the non-null outputs.
template <typename T>
CriticTerms<T> critic_loss(const Mlp<T>& critic, const Tensor<T>& v_pen, const Tensor<T>& r_pen,
                           std::span<const T> interp, AlignmentMode mode, T lambda_gp, T weight,
                           Mlp<T>* critic_grad, Tensor<T>* d_vpen, Tensor<T>* d_rpen);

/// Alignment term minimized by the encoders: mean D(V_m) - mean D(R_m) in
/// wgan_gp mode, the cross-entropy objective itself in logistic mode.
template <typename T>
T alignment_encoder_loss(const Mlp<T>& critic, const Tensor<T>& v_pen, const Tensor<T>& r_pen,
                         AlignmentMode mode, T weight, Mlp<T>* critic_grad, Tensor<T>* d_vpen,
                         Tensor<T>* d_rpen);

// ---------------------------------------------------------------------------
// Translation consistency
// ---------------------------------------------------------------------------

template <typename T>
struct R2iTerms {
  T gen_loss = 0;   // non-saturating: mean softplus(-D(G(R)))
  T disc_loss = 0;  // mean logistic loss over real (label 1) and fake (label 0)
  T cls_loss = 0;   // softmax CE of C_r2i, averaged over real and fake grids
};

template <typename T>
struct R2iWeights {
  T gen = 0, disc = 0, cls = 0;
};

/// Gradients of w.gen*gen + w.disc*disc + w.cls*cls are accumulated into
/// `grads` (generator, discriminator, classifier) and `d_rfinal`.
template <typename T>
R2iTerms<T> r2i_losses(const ModelParams<T>& params, const Tensor<T>& real_grids,
                       std::span<const int> class_ids, const Tensor<T>& r_final,
                       const R2iWeights<T>& w, ModelParams<T>* grads, Tensor<T>* d_rfinal);

template <typename T>
struct I2rTerms {
  T ingredient_loss = 0;  // mean elementwise BCE over B x M
  T cls_loss = 0;
};

template <typename T>
I2rTerms<T> i2r_losses(const ModelParams<T>& params, const Tensor<T>& v_final,
                       const Tensor<T>& multi_hot, std::span<const int> class_ids, T w_ingredient,
                       T w_cls, ModelParams<T>* grads, Tensor<T>* d_vfinal);

// ---------------------------------------------------------------------------
// Numerically stable primitives
// ---------------------------------------------------------------------------

template <typename T>
T softplus(T x) {
  return std::max(x, T(0)) + std::log1p(std::exp(-std::abs(x)));
}

template <typename T>
T sigmoid(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

/// Per-row softmax cross-entropy; writes (softmax - onehot) into `grad` rows.
template <typename T>
std::vector<T> softmax_cross_entropy(const Tensor<T>& logits, std::span<const int> labels,
                                     Tensor<T>* grad);

}  // namespace xmem

#endif  // XMEM_LOSSES_HPP_
