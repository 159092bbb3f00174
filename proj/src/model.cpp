#include "xmem/model.hpp"

#include <cmath>
#include <stdexcept>

namespace xmem {

const char* activation_name(Activation a) {
  switch (a) {
    case Activation::identity: return "identity";
    case Activation::relu: return "relu";
    case Activation::tanh: return "tanh";
    case Activation::leaky_relu: return "leaky_relu";
  }
  return "?";
}

Activation parse_activation(const std::string& name) {
  if (name == "identity") return Activation::identity;
  if (name == "relu") return Activation::relu;
  if (name == "tanh") return Activation::tanh;
  if (name == "leaky_relu") return Activation::leaky_relu;
  throw std::invalid_argument("unknown activation '" + name + "'");
}

const char* module_name(Module m) {
  switch (m) {
    case Module::enc_image: return "enc_image";
    case Module::enc_recipe: return "enc_recipe";
    case Module::shared_fc: return "shared_fc";
    case Module::critic_modality: return "critic_modality";
    case Module::gen_r2i: return "gen_r2i";
    case Module::disc_r2i: return "disc_r2i";
    case Module::cls_r2i: return "cls_r2i";
    case Module::ing_predictor: return "ing_predictor";
    case Module::cls_i2r: return "cls_i2r";
  }
  return "?";
}

Player player_of(Module m) {
  switch (m) {
    case Module::critic_modality: return Player::modality_critic;
    case Module::disc_r2i: return Player::image_discriminator;
    default: return Player::embedding;
  }
}

namespace {

constexpr Module kMlpModules[] = {Module::enc_image,     Module::enc_recipe, Module::critic_modality,
                                  Module::gen_r2i,       Module::disc_r2i,   Module::cls_r2i,
                                  Module::ing_predictor, Module::cls_i2r};

}  // namespace

template <typename T>
ModelParams<T> ModelParams<T>::init(const Architecture& arch, uint64_t seed) {
  if (arch.d == 0 || arch.d_img == 0 || arch.d_rcp == 0 || arch.grid_g == 0 ||
      arch.n_classes < 2 || arch.n_ingredients == 0) {
    throw DimensionError("ModelParams::init: all dimensions must be positive, n_classes >= 2");
  }
  std::mt19937_64 rng(seed);
  const size_t h = arch.hidden_width();
  const size_t g2 = arch.grid_g * arch.grid_g;
  const auto lk = Activation::leaky_relu;
  const auto id = Activation::identity;

  ModelParams p;
  p.enc_image = Mlp<T>::build("enc_image", {arch.d_img, h, arch.d}, {lk, lk}, rng);
  p.enc_recipe = Mlp<T>::build("enc_recipe", {arch.d_rcp, h, arch.d}, {lk, lk}, rng);
  auto fc = Mlp<T>::build("shared_fc", {arch.d, arch.d}, {id}, rng);
  p.shared_fc = std::move(fc.layers.front().params);
  p.shared_fc.name = "shared_fc";
  p.critic_modality = Mlp<T>::build("critic_modality", {arch.d, h, 1}, {lk, id}, rng);
  p.gen_r2i = Mlp<T>::build("gen_r2i", {arch.d, h, g2}, {lk, Activation::tanh}, rng);
  p.disc_r2i = Mlp<T>::build("disc_r2i", {g2, h, 1}, {lk, id}, rng);
  p.cls_r2i = Mlp<T>::build("cls_r2i", {g2, h, arch.n_classes}, {lk, id}, rng);
  p.ing_predictor = Mlp<T>::build("ing_predictor", {arch.d, h, arch.n_ingredients}, {lk, id}, rng);
  p.cls_i2r = Mlp<T>::build("cls_i2r", {arch.d, h, arch.n_classes}, {lk, id}, rng);
  return p;
}

template <typename T>
ModelParams<T> ModelParams<T>::zeros_like() const {
  ModelParams z;
  for (Module m : kMlpModules) z.mlp(m) = mlp(m).zeros_like();
  z.shared_fc = shared_fc.zeros_like();
  return z;
}

template <typename T>
Architecture ModelParams<T>::architecture() const {
  Architecture a;
  a.d_img = enc_image.in_dim();
  a.d_rcp = enc_recipe.in_dim();
  a.d = shared_fc.fan_out();
  a.grid_g = static_cast<size_t>(std::lround(std::sqrt(static_cast<double>(gen_r2i.out_dim()))));
  a.n_classes = cls_i2r.out_dim();
  a.n_ingredients = ing_predictor.out_dim();
  a.hidden = enc_image.layers.empty() ? 0 : enc_image.layers.front().params.fan_out();
  if (a.hidden == 2 * a.d) a.hidden = 0;
  return a;
}

template <typename T>
size_t ModelParams<T>::parameter_count() const {
  size_t n = shared_fc.count();
  for (Module m : kMlpModules) n += mlp(m).count();
  return n;
}

template <typename T>
Mlp<T>& ModelParams<T>::mlp(Module m) {
  switch (m) {
    case Module::enc_image: return enc_image;
    case Module::enc_recipe: return enc_recipe;
    case Module::critic_modality: return critic_modality;
    case Module::gen_r2i: return gen_r2i;
    case Module::disc_r2i: return disc_r2i;
    case Module::cls_r2i: return cls_r2i;
    case Module::ing_predictor: return ing_predictor;
    case Module::cls_i2r: return cls_i2r;
    case Module::shared_fc: break;
  }
  throw std::invalid_argument("ModelParams::mlp: shared_fc is a single group");
}

template <typename T>
const Mlp<T>& ModelParams<T>::mlp(Module m) const {
  return const_cast<ModelParams*>(this)->mlp(m);
}

template <typename T>
void ModelParams<T>::for_each_group(
    const std::function<void(Module, ParamGroup<T>&, Activation)>& f) {
  auto visit = [&](Module m) {
    for (auto& l : mlp(m).layers) f(m, l.params, l.act);
  };
  visit(Module::enc_image);
  visit(Module::enc_recipe);
  f(Module::shared_fc, shared_fc, Activation::identity);
  for (Module m : {Module::critic_modality, Module::gen_r2i, Module::disc_r2i, Module::cls_r2i,
                   Module::ing_predictor, Module::cls_i2r}) {
    visit(m);
  }
}

template <typename T>
void ModelParams<T>::for_each_group(
    const std::function<void(Module, const ParamGroup<T>&, Activation)>& f) const {
  const_cast<ModelParams*>(this)->for_each_group(
      [&](Module m, ParamGroup<T>& g, Activation a) { f(m, g, a); });
}

template <typename T>
Tensor<T> normalize_rows(const Tensor<T>& x) {
  Tensor<T> y(x.rows(), x.cols());
  for (size_t i = 0; i < x.rows(); ++i) {
    auto xr = x.row(i);
    const T n = std::max(std::sqrt(dot(xr, xr)), T(1e-12));
    auto yr = y.row(i);
    for (size_t j = 0; j < xr.size(); ++j) yr[j] = xr[j] / n;
  }
  return y;
}

template <typename T>
Tensor<T> normalize_rows_backward(const Tensor<T>& x, const Tensor<T>& y, const Tensor<T>& dy) {
  Tensor<T> dx(x.rows(), x.cols());
  for (size_t i = 0; i < x.rows(); ++i) {
    auto xr = x.row(i);
    auto yr = y.row(i);
    auto gr = dy.row(i);
    const T raw = std::sqrt(dot(xr, xr));
    auto out = dx.row(i);
    if (raw < T(1e-12)) {
      for (size_t j = 0; j < xr.size(); ++j) out[j] = gr[j] / T(1e-12);
      continue;
    }
    const T yg = dot(yr, gr);
    for (size_t j = 0; j < xr.size(); ++j) out[j] = (gr[j] - yr[j] * yg) / raw;
  }
  return dx;
}

template <typename T>
EmbeddingBatch<T> embed_features(const ModelParams<T>& params, const Tensor<T>& image_feats,
                                 const Tensor<T>& recipe_feats, bool normalize,
                                 EmbedCache<T>* cache) {
  if (image_feats.cols() != params.enc_image.in_dim()) {
    throw DimensionError("embed_batch: image features " + image_feats.shape_str() +
                         " but encoder expects width " + std::to_string(params.enc_image.in_dim()));
  }
  if (recipe_feats.cols() != params.enc_recipe.in_dim()) {
    throw DimensionError("embed_batch: recipe features " + recipe_feats.shape_str() +
                         " but encoder expects width " +
                         std::to_string(params.enc_recipe.in_dim()));
  }
  EmbeddingBatch<T> out;
  out.v_pen = params.enc_image.forward(image_feats, cache ? &cache->image : nullptr);
  out.r_pen = params.enc_recipe.forward(recipe_feats, cache ? &cache->recipe : nullptr);
  Tensor<T> v_proj = affine_forward(out.v_pen, params.shared_fc);
  Tensor<T> r_proj = affine_forward(out.r_pen, params.shared_fc);
  check_finite(v_proj, "shared_fc");
  check_finite(r_proj, "shared_fc");
  if (normalize) {
    out.v_final = normalize_rows(v_proj);
    out.r_final = normalize_rows(r_proj);
  } else {
    out.v_final = v_proj;
    out.r_final = r_proj;
  }
  if (cache) {
    cache->v_proj = std::move(v_proj);
    cache->r_proj = std::move(r_proj);
    cache->normalized = normalize;
  }
  return out;
}

template <typename T>
void embed_backward(const ModelParams<T>& params, const EmbedCache<T>& cache,
                    const EmbedUpstream<T>& up, ModelParams<T>& grads) {
  auto branch = [&](const Mlp<T>& enc, const MlpCache<T>& enc_cache, const Tensor<T>& proj,
                    const Tensor<T>& d_final, const Tensor<T>& d_pen, Mlp<T>& enc_grad) {
    const Tensor<T>& pen = enc_cache.post.back();
    Tensor<T> d_pen_total(pen.rows(), pen.cols());
    if (!d_final.empty()) {
      Tensor<T> d_proj = d_final;
      if (cache.normalized) d_proj = normalize_rows_backward(proj, normalize_rows(proj), d_final);
      d_pen_total = affine_backward(pen, params.shared_fc, d_proj, grads.shared_fc);
    }
    if (!d_pen.empty()) add_inplace(d_pen_total, d_pen);
    enc.backward(enc_cache, d_pen_total, enc_grad);
  };
  branch(params.enc_image, cache.image, cache.v_proj, up.v_final, up.v_pen, grads.enc_image);
  branch(params.enc_recipe, cache.recipe, cache.r_proj, up.r_final, up.r_pen, grads.enc_recipe);
}

template <typename T>
Tensor<T> embed_images(const ModelParams<T>& params, const Tensor<T>& image_feats, bool normalize) {
  if (image_feats.cols() != params.enc_image.in_dim()) {
    throw DimensionError("embed_images: features " + image_feats.shape_str() +
                         " but encoder expects width " + std::to_string(params.enc_image.in_dim()));
  }
  Tensor<T> v = affine_forward(params.enc_image.forward(image_feats), params.shared_fc);
  return normalize ? normalize_rows(v) : v;
}

template <typename T>
Tensor<T> embed_recipes(const ModelParams<T>& params, const Tensor<T>& recipe_feats,
                        bool normalize) {
  if (recipe_feats.cols() != params.enc_recipe.in_dim()) {
    throw DimensionError("embed_recipes: features " + recipe_feats.shape_str() +
                         " but encoder expects width " +
                         std::to_string(params.enc_recipe.in_dim()));
  }
  Tensor<T> r = affine_forward(params.enc_recipe.forward(recipe_feats), params.shared_fc);
  return normalize ? normalize_rows(r) : r;
}

template <typename T>
std::vector<T> critic_score(const ModelParams<T>& params, const Tensor<T>& feats) {
  if (feats.cols() != params.critic_modality.in_dim()) {
    throw DimensionError("critic_score: features " + feats.shape_str() + " but critic expects width " +
                         std::to_string(params.critic_modality.in_dim()));
  }
  Tensor<T> s = params.critic_modality.forward(feats);
  return s.storage();
}

template <typename T>
Tensor<T> generate_image(const ModelParams<T>& params, const Tensor<T>& r_final) {
  if (r_final.cols() != params.gen_r2i.in_dim()) {
    throw DimensionError("generate_image: input " + r_final.shape_str() +
                         " but generator expects width " + std::to_string(params.gen_r2i.in_dim()));
  }
  return params.gen_r2i.forward(r_final);
}

template <typename T>
Tensor<T> predict_ingredients(const ModelParams<T>& params, const Tensor<T>& v_final) {
  if (v_final.cols() != params.ing_predictor.in_dim()) {
    throw DimensionError("predict_ingredients: input " + v_final.shape_str() +
                         " but predictor expects width " +
                         std::to_string(params.ing_predictor.in_dim()));
  }
  return params.ing_predictor.forward(v_final);
}

#define XMEM_INSTANTIATE_MODEL(T)                                                              \
  template struct ModelParams<T>;                                                              \
  template Tensor<T> normalize_rows(const Tensor<T>&);                                         \
  template Tensor<T> normalize_rows_backward(const Tensor<T>&, const Tensor<T>&,               \
                                             const Tensor<T>&);                                \
  template EmbeddingBatch<T> embed_features(const ModelParams<T>&, const Tensor<T>&,           \
                                            const Tensor<T>&, bool, EmbedCache<T>*);           \
  template void embed_backward(const ModelParams<T>&, const EmbedCache<T>&,                    \
                               const EmbedUpstream<T>&, ModelParams<T>&);                      \
  template Tensor<T> embed_images(const ModelParams<T>&, const Tensor<T>&, bool);              \
  template Tensor<T> embed_recipes(const ModelParams<T>&, const Tensor<T>&, bool);             \
  template std::vector<T> critic_score(const ModelParams<T>&, const Tensor<T>&);               \
  template Tensor<T> generate_image(const ModelParams<T>&, const Tensor<T>&);                  \
  template Tensor<T> predict_ingredients(const ModelParams<T>&, const Tensor<T>&);

XMEM_INSTANTIATE_MODEL(float)
XMEM_INSTANTIATE_MODEL(double)

}  // namespace xmem
