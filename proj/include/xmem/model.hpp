#ifndef XMEM_MODEL_HPP_
#define XMEM_MODEL_HPP_

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "xmem/batch.hpp"
#include "xmem/layers.hpp"
#include "xmem/tensor.hpp"

namespace xmem {

/// Dimensions that fix every layer shape of the network.
struct Architecture {
  size_t d_img = 32;
  size_t d_rcp = 48;
  size_t d = 16;
  size_t grid_g = 8;
  size_t n_classes = 10;
  size_t n_ingredients = 40;
  size_t hidden = 0;  // 0 -> 2*d

  size_t hidden_width() const { return hidden ? hidden : 2 * d; }
  bool operator==(const Architecture&) const = default;
};

enum class Module {
  enc_image,
  enc_recipe,
  shared_fc,
  critic_modality,
  gen_r2i,
  disc_r2i,
  cls_r2i,
  ing_predictor,
  cls_i2r,
};

const char* module_name(Module m);

/// Which optimizer player owns a module. The alternating schedule updates
/// one player at a time.
enum class Player { modality_critic, image_discriminator, embedding };

Player player_of(Module m);

/// Every trainable weight group of the network. The projection `shared_fc`
/// is a single group used by both branches, so its gradient accumulates
/// contributions from images and recipes alike.
template <typename T>
struct ModelParams {
  Mlp<T> enc_image;
  Mlp<T> enc_recipe;
  ParamGroup<T> shared_fc;
  Mlp<T> critic_modality;
  Mlp<T> gen_r2i;
  Mlp<T> disc_r2i;
  Mlp<T> cls_r2i;
  Mlp<T> ing_predictor;
  Mlp<T> cls_i2r;

  static ModelParams init(const Architecture& arch, uint64_t seed);

  ModelParams zeros_like() const;
  Architecture architecture() const;
  size_t parameter_count() const;

  /// Visits groups in manifest order (the order used by checkpoints).
  void for_each_group(const std::function<void(Module, ParamGroup<T>&, Activation)>& f);
  void for_each_group(
      const std::function<void(Module, const ParamGroup<T>&, Activation)>& f) const;

  Mlp<T>& mlp(Module m);
  const Mlp<T>& mlp(Module m) const;

  bool operator==(const ModelParams&) const = default;
};

template <typename T>
struct EmbeddingBatch {
  Tensor<T> v_pen;    // image encoder output
  Tensor<T> r_pen;    // recipe encoder output
  Tensor<T> v_final;  // shared projection of v_pen (unit rows when normalized)
  Tensor<T> r_final;
};

/// Intermediate values from embed_batch needed by its backward pass.
template <typename T>
struct EmbedCache {
  MlpCache<T> image;
  MlpCache<T> recipe;
  Tensor<T> v_proj;  // before normalization
  Tensor<T> r_proj;
  bool normalized = false;
};

/// Upstream gradients into the embedding path. Empty tensors mean zero.
template <typename T>
struct EmbedUpstream {
  Tensor<T> v_pen, r_pen, v_final, r_final;
};

template <typename T>
EmbeddingBatch<T> embed_features(const ModelParams<T>& params, const Tensor<T>& image_feats,
                                 const Tensor<T>& recipe_feats, bool normalize,
                                 EmbedCache<T>* cache = nullptr);

template <typename T>
EmbeddingBatch<T> embed_batch(const ModelParams<T>& params, const PairedBatch<T>& batch,
                              bool normalize, EmbedCache<T>* cache = nullptr) {
  return embed_features(params, batch.image_feats, batch.recipe_feats, normalize, cache);
}

/// Accumulates encoder and shared-projection gradients into `grads`.
template <typename T>
void embed_backward(const ModelParams<T>& params, const EmbedCache<T>& cache,
                    const EmbedUpstream<T>& upstream, ModelParams<T>& grads);

/// Image-only or recipe-only embedding (used at evaluation time).
template <typename T>
Tensor<T> embed_images(const ModelParams<T>& params, const Tensor<T>& image_feats, bool normalize);
template <typename T>
Tensor<T> embed_recipes(const ModelParams<T>& params, const Tensor<T>& recipe_feats,
                        bool normalize);

/// One modality-critic score per row.
template <typename T>
std::vector<T> critic_score(const ModelParams<T>& params, const Tensor<T>& feats);

/// B x g*g synthetic image grid, values in (-1,1).
template <typename T>
Tensor<T> generate_image(const ModelParams<T>& params, const Tensor<T>& r_final);

/// B x M raw ingredient logits.
template <typename T>
Tensor<T> predict_ingredients(const ModelParams<T>& params, const Tensor<T>& v_final);

/// Row-wise L2 normalization and its backward.
template <typename T>
Tensor<T> normalize_rows(const Tensor<T>& x);
template <typename T>
Tensor<T> normalize_rows_backward(const Tensor<T>& x, const Tensor<T>& y, const Tensor<T>& dy);

}  // namespace xmem

#endif  // XMEM_MODEL_HPP_
