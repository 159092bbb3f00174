#include "xmem/objectives.hpp"

#include <cmath>

namespace xmem {

void HyperParams::validate() const {
  if (d == 0) throw ConfigError("d must be positive");
  if (!(alpha > 0)) throw ConfigError("alpha must be > 0");
  if (!(lambda1 >= 0)) throw ConfigError("lambda1 must be >= 0");
  if (!(lambda2 >= 0)) throw ConfigError("lambda2 must be >= 0");
  if (!(lambda_gp >= 0)) throw ConfigError("lambda_gp must be >= 0");
  if (critic_steps < 1) throw ConfigError("critic_steps must be >= 1");
  if (!(lr > 0)) throw ConfigError("lr must be > 0");
  if (!(beta1 >= 0 && beta1 < 1)) throw ConfigError("beta1 must be in [0,1)");
  if (!(beta2 >= 0 && beta2 < 1)) throw ConfigError("beta2 must be in [0,1)");
  if (!(eps > 0)) throw ConfigError("eps must be > 0");
  if (batch_size < 2) throw ConfigError("batch_size must be >= 2");
}

AblationConfig AblationConfig::parse_arm(const std::string& token) {
  if (token == "all") return all();
  AblationConfig a = plain_triplet();
  size_t start = 0;
  bool first = true;
  while (start <= token.size()) {
    const size_t end = std::min(token.find('+', start), token.size());
    const std::string part = token.substr(start, end - start);
    if (first) {
      if (part != "tl") throw ConfigError("arm '" + token + "' must start with 'tl'");
      first = false;
    } else if (part == "hm") {
      a.use_hard_mining = true;
    } else if (part == "ma") {
      a.use_ma = true;
    } else if (part == "r2i") {
      a.use_r2i = true;
    } else if (part == "i2r") {
      a.use_i2r = true;
    } else {
      throw ConfigError("unknown component '" + part + "' in arm '" + token + "'");
    }
    start = end + 1;
  }
  return a;
}

std::string AblationConfig::arm_name() const {
  if (*this == all()) return "all";
  std::string s = "tl";
  if (use_hard_mining) s += "+hm";
  if (use_ma) s += "+ma";
  if (use_r2i) s += "+r2i";
  if (use_i2r) s += "+i2r";
  return s;
}

template <typename T>
T total_loss(const LossBreakdown<T>& p, const HyperParams& hp) {
  for (T v : {p.l_ret, p.l_ma, p.l_g_r2i, p.l_c_r2i, p.l_g_i2r, p.l_c_i2r}) {
    if (!std::isfinite(v)) throw NonFiniteError("total_loss: non-finite loss component");
  }
  return p.l_ret + static_cast<T>(hp.lambda1) * p.l_ma +
         static_cast<T>(hp.lambda2) * (p.l_r2i() + p.l_i2r());
}

namespace {

template <typename T>
struct Forward {
  EmbedCache<T> cache;
  EmbeddingBatch<T> emb;
  EmbedUpstream<T> up;
  ModelParams<T> grads;

  Forward(const ModelParams<T>& params, const PairedBatch<T>& batch, const HyperParams& hp)
      : emb(embed_batch(params, batch, hp.normalize_embeddings, &cache)), grads(params.zeros_like()) {
    up.v_pen = Tensor<T>(emb.v_pen.rows(), emb.v_pen.cols());
    up.r_pen = Tensor<T>(emb.r_pen.rows(), emb.r_pen.cols());
    up.v_final = Tensor<T>(emb.v_final.rows(), emb.v_final.cols());
    up.r_final = Tensor<T>(emb.r_final.rows(), emb.r_final.cols());
  }

  void finish(const ModelParams<T>& params) { embed_backward(params, cache, up, grads); }
};

template <typename T>
T add_retrieval(Forward<T>& f, const PairedBatch<T>& batch, const HyperParams& hp, bool hard) {
  const T alpha = static_cast<T>(hp.alpha);
  TripletResult<T> r = hard ? triplet_loss_hard(f.emb.v_final, f.emb.r_final,
                                                std::span<const uint64_t>(batch.recipe_ids), alpha)
                            : triplet_loss_all(f.emb.v_final, f.emb.r_final,
                                               std::span<const uint64_t>(batch.recipe_ids), alpha);
  add_inplace(f.up.v_final, r.grad_v);
  add_inplace(f.up.r_final, r.grad_r);
  return r.loss;
}

}  // namespace

template <typename T>
Objective<T> retrieval_objective(const ModelParams<T>& params, const PairedBatch<T>& batch,
                                 const HyperParams& hp, bool hard_mining) {
  Forward<T> f(params, batch, hp);
  Objective<T> out;
  out.parts.l_ret = add_retrieval(f, batch, hp, hard_mining);
  out.mean_hinge = out.parts.l_ret;
  f.finish(params);
  out.value = out.parts.l_ret;
  out.parts.total = out.value;
  out.grads = std::move(f.grads);
  return out;
}

template <typename T>
Objective<T> critic_objective(const ModelParams<T>& params, const PairedBatch<T>& batch,
                              const HyperParams& hp, std::span<const T> interp) {
  Forward<T> f(params, batch, hp);
  const CriticTerms<T> t =
      critic_loss(params.critic_modality, f.emb.v_pen, f.emb.r_pen, interp, hp.alignment_mode,
                  static_cast<T>(hp.lambda_gp), T(1), &f.grads.critic_modality, &f.up.v_pen,
                  &f.up.r_pen);
  f.finish(params);
  Objective<T> out;
  out.value = t.loss;
  out.wasserstein = t.wasserstein;
  out.gp = t.gp;
  out.grads = std::move(f.grads);
  return out;
}

template <typename T>
Objective<T> alignment_objective(const ModelParams<T>& params, const PairedBatch<T>& batch,
                                 const HyperParams& hp) {
  Forward<T> f(params, batch, hp);
  Objective<T> out;
  out.parts.l_ma = alignment_encoder_loss(params.critic_modality, f.emb.v_pen, f.emb.r_pen,
                                          hp.alignment_mode, T(1), &f.grads.critic_modality,
                                          &f.up.v_pen, &f.up.r_pen);
  f.finish(params);
  out.value = out.parts.l_ma;
  out.grads = std::move(f.grads);
  return out;
}

template <typename T>
Objective<T> r2i_disc_objective(const ModelParams<T>& params, const PairedBatch<T>& batch,
                                const HyperParams& hp) {
  Forward<T> f(params, batch, hp);
  const R2iTerms<T> t = r2i_losses(params, batch.grids, std::span<const int>(batch.class_ids),
                                   f.emb.r_final, R2iWeights<T>{T(0), T(1), T(0)}, &f.grads,
                                   &f.up.r_final);
  f.finish(params);
  Objective<T> out;
  out.value = t.disc_loss;
  out.grads = std::move(f.grads);
  return out;
}

template <typename T>
Objective<T> r2i_objective(const ModelParams<T>& params, const PairedBatch<T>& batch,
                           const HyperParams& hp) {
  Forward<T> f(params, batch, hp);
  const R2iTerms<T> t = r2i_losses(params, batch.grids, std::span<const int>(batch.class_ids),
                                   f.emb.r_final, R2iWeights<T>{T(1), T(0), T(1)}, &f.grads,
                                   &f.up.r_final);
  f.finish(params);
  Objective<T> out;
  out.parts.l_g_r2i = t.gen_loss;
  out.parts.l_c_r2i = t.cls_loss;
  out.value = t.gen_loss + t.cls_loss;
  out.grads = std::move(f.grads);
  return out;
}

template <typename T>
Objective<T> i2r_objective(const ModelParams<T>& params, const PairedBatch<T>& batch,
                           const HyperParams& hp) {
  Forward<T> f(params, batch, hp);
  const I2rTerms<T> t =
      i2r_losses(params, f.emb.v_final, batch.ingredients, std::span<const int>(batch.class_ids),
                 T(1), T(1), &f.grads, &f.up.v_final);
  f.finish(params);
  Objective<T> out;
  out.parts.l_g_i2r = t.ingredient_loss;
  out.parts.l_c_i2r = t.cls_loss;
  out.value = t.ingredient_loss + t.cls_loss;
  out.grads = std::move(f.grads);
  return out;
}

template <typename T>
Objective<T> joint_objective(const ModelParams<T>& params, const PairedBatch<T>& batch,
                             const HyperParams& hp, const AblationConfig& ablation) {
  Forward<T> f(params, batch, hp);
  Objective<T> out;
  const T l1 = static_cast<T>(hp.lambda1);
  const T l2 = static_cast<T>(hp.lambda2);

  out.parts.l_ret = add_retrieval(f, batch, hp, ablation.use_hard_mining);
  out.mean_hinge = out.parts.l_ret;
  if (ablation.use_ma) {
    out.parts.l_ma = alignment_encoder_loss(params.critic_modality, f.emb.v_pen, f.emb.r_pen,
                                            hp.alignment_mode, l1, &f.grads.critic_modality,
                                            &f.up.v_pen, &f.up.r_pen);
  }
  if (ablation.use_r2i) {
    const R2iTerms<T> t = r2i_losses(params, batch.grids, std::span<const int>(batch.class_ids),
                                     f.emb.r_final, R2iWeights<T>{l2, T(0), l2}, &f.grads,
                                     &f.up.r_final);
    out.parts.l_g_r2i = t.gen_loss;
    out.parts.l_c_r2i = t.cls_loss;
  }
  if (ablation.use_i2r) {
    const I2rTerms<T> t =
        i2r_losses(params, f.emb.v_final, batch.ingredients, std::span<const int>(batch.class_ids),
                   l2, l2, &f.grads, &f.up.v_final);
    out.parts.l_g_i2r = t.ingredient_loss;
    out.parts.l_c_i2r = t.cls_loss;
  }
  f.finish(params);
  out.parts.total = total_loss(out.parts, hp);
  out.value = out.parts.total;
  out.grads = std::move(f.grads);
  return out;
}

#define XMEM_INSTANTIATE_OBJECTIVES(T)                                                          \
  template T total_loss(const LossBreakdown<T>&, const HyperParams&);                           \
  template Objective<T> retrieval_objective(const ModelParams<T>&, const PairedBatch<T>&,       \
                                            const HyperParams&, bool);                          \
  template Objective<T> critic_objective(const ModelParams<T>&, const PairedBatch<T>&,          \
                                         const HyperParams&, std::span<const T>);               \
  template Objective<T> alignment_objective(const ModelParams<T>&, const PairedBatch<T>&,       \
                                            const HyperParams&);                                \
  template Objective<T> r2i_disc_objective(const ModelParams<T>&, const PairedBatch<T>&,        \
                                           const HyperParams&);                                 \
  template Objective<T> r2i_objective(const ModelParams<T>&, const PairedBatch<T>&,             \
                                      const HyperParams&);                                      \
  template Objective<T> i2r_objective(const ModelParams<T>&, const PairedBatch<T>&,             \
                                      const HyperParams&);                                      \
  template Objective<T> joint_objective(const ModelParams<T>&, const PairedBatch<T>&,           \
                                        const HyperParams&, const AblationConfig&);

XMEM_INSTANTIATE_OBJECTIVES(float)
XMEM_INSTANTIATE_OBJECTIVES(double)

}  // namespace xmem
