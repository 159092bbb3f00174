#include "xmem/losses.hpp"

#include <cmath>

#include "xmem/errors.hpp"

namespace xmem {

AlignmentMode parse_alignment_mode(const std::string& s) {
  if (s == "wgan_gp") return AlignmentMode::wgan_gp;
  if (s == "logistic") return AlignmentMode::logistic;
  throw ConfigError("alignment_mode must be wgan_gp or logistic, got '" + s + "'");
}

const char* alignment_mode_name(AlignmentMode m) {
  return m == AlignmentMode::wgan_gp ? "wgan_gp" : "logistic";
}

namespace {

template <typename T>
Tensor<T> pairwise_distances(const Tensor<T>& v, const Tensor<T>& r) {
  Tensor<T> d(v.rows(), r.rows());
  for (size_t i = 0; i < v.rows(); ++i) {
    for (size_t j = 0; j < r.rows(); ++j) d(i, j) = euclidean_distance(v.row(i), r.row(j));
  }
  return d;
}

// Adds scale * d||a - b|| / da to ga and its negation to gb.
template <typename T>
void add_distance_grad(std::span<const T> a, std::span<const T> b, T dist, T scale,
                       std::span<T> ga, std::span<T> gb) {
  if (dist <= T(0)) return;
  for (size_t k = 0; k < a.size(); ++k) {
    const T u = scale * (a[k] - b[k]) / dist;
    ga[k] += u;
    gb[k] -= u;
  }
}

template <typename T>
void check_triplet_inputs(const Tensor<T>& v, const Tensor<T>& r, std::span<const uint64_t> ids) {
  if (!v.same_shape(r)) {
    throw DimensionError("triplet loss: V " + v.shape_str() + " vs R " + r.shape_str());
  }
  if (ids.size() != v.rows()) {
    throw DimensionError("triplet loss: " + std::to_string(ids.size()) + " recipe ids for " +
                         std::to_string(v.rows()) + " rows");
  }
  if (v.rows() < 2) throw DegenerateBatchError("triplet loss: batch of size < 2 has no negatives");
}

}  // namespace

template <typename T>
TripletResult<T> triplet_loss_hard(const Tensor<T>& v, const Tensor<T>& r,
                                   std::span<const uint64_t> ids, T alpha) {
  check_triplet_inputs(v, r, ids);
  const size_t n = v.rows();
  const Tensor<T> dist = pairwise_distances(v, r);  // dist(i, j) = d(V_i, R_j)

  TripletResult<T> res;
  struct Pick {
    size_t anchor, pos, neg;
    T d_pos, d_neg, hinge;
    AnchorModality modality;
  };
  std::vector<Pick> picks;
  for (int side = 0; side < 2; ++side) {
    const auto modality = side == 0 ? AnchorModality::image : AnchorModality::recipe;
    for (size_t a = 0; a < n; ++a) {
      auto d_of = [&](size_t j) { return side == 0 ? dist(a, j) : dist(j, a); };
      bool have_pos = false, have_neg = false;
      size_t p = 0, q = 0;
      for (size_t j = 0; j < n; ++j) {
        const T dj = d_of(j);
        if (ids[j] == ids[a]) {
          if (!have_pos || dj > d_of(p)) p = j;
          have_pos = true;
        } else {
          if (!have_neg || dj < d_of(q)) q = j;
          have_neg = true;
        }
      }
      if (!have_neg) continue;
      const T hinge = std::max(T(0), d_of(p) - d_of(q) + alpha);
      picks.push_back({a, p, q, d_of(p), d_of(q), hinge, modality});
    }
  }
  if (picks.empty()) {
    throw DegenerateBatchError("triplet loss: every row shares one recipe id, no negatives");
  }

  res.contributing = picks.size();
  res.grad_v = Tensor<T>(v.rows(), v.cols());
  res.grad_r = Tensor<T>(r.rows(), r.cols());
  const T scale = T(1) / static_cast<T>(picks.size());
  T total = 0;
  for (const auto& pk : picks) {
    total += pk.hinge;
    res.selections.push_back({pk.modality, pk.anchor, pk.pos, pk.neg, static_cast<double>(pk.hinge)});
    if (pk.hinge <= T(0)) continue;
    if (pk.modality == AnchorModality::image) {
      add_distance_grad(v.row(pk.anchor), r.row(pk.pos), pk.d_pos, scale, res.grad_v.row(pk.anchor),
                        res.grad_r.row(pk.pos));
      add_distance_grad(v.row(pk.anchor), r.row(pk.neg), pk.d_neg, -scale,
                        res.grad_v.row(pk.anchor), res.grad_r.row(pk.neg));
    } else {
      add_distance_grad(r.row(pk.anchor), v.row(pk.pos), pk.d_pos, scale, res.grad_r.row(pk.anchor),
                        res.grad_v.row(pk.pos));
      add_distance_grad(r.row(pk.anchor), v.row(pk.neg), pk.d_neg, -scale,
                        res.grad_r.row(pk.anchor), res.grad_v.row(pk.neg));
    }
  }
  res.loss = total * scale;
  return res;
}

template <typename T>
TripletResult<T> triplet_loss_all(const Tensor<T>& v, const Tensor<T>& r,
                                  std::span<const uint64_t> ids, T alpha) {
  check_triplet_inputs(v, r, ids);
  const size_t n = v.rows();
  const Tensor<T> dist = pairwise_distances(v, r);

  // Count anchors first so the per-anchor weights are known.
  size_t contributing = 0;
  std::vector<size_t> n_pos(n), n_neg(n);
  for (size_t a = 0; a < n; ++a) {
    for (size_t j = 0; j < n; ++j) (ids[j] == ids[a] ? n_pos[a] : n_neg[a])++;
    if (n_neg[a] > 0) contributing += 2;  // one image anchor, one recipe anchor
  }
  if (contributing == 0) {
    throw DegenerateBatchError("triplet loss: every row shares one recipe id, no negatives");
  }

  TripletResult<T> res;
  res.contributing = contributing;
  res.grad_v = Tensor<T>(v.rows(), v.cols());
  res.grad_r = Tensor<T>(r.rows(), r.cols());
  const T anchor_scale = T(1) / static_cast<T>(contributing);
  T total = 0;
  for (int side = 0; side < 2; ++side) {
    const Tensor<T>& anchors = side == 0 ? v : r;
    const Tensor<T>& others = side == 0 ? r : v;
    Tensor<T>& g_anchor = side == 0 ? res.grad_v : res.grad_r;
    Tensor<T>& g_other = side == 0 ? res.grad_r : res.grad_v;
    for (size_t a = 0; a < n; ++a) {
      if (n_neg[a] == 0) continue;
      auto d_of = [&](size_t j) { return side == 0 ? dist(a, j) : dist(j, a); };
      const T w = anchor_scale / static_cast<T>(n_pos[a] * n_neg[a]);
      for (size_t p = 0; p < n; ++p) {
        if (ids[p] != ids[a]) continue;
        for (size_t q = 0; q < n; ++q) {
          if (ids[q] == ids[a]) continue;
          const T hinge = d_of(p) - d_of(q) + alpha;
          if (hinge <= T(0)) continue;
          total += w * hinge;
          add_distance_grad(anchors.row(a), others.row(p), d_of(p), w, g_anchor.row(a),
                            g_other.row(p));
          add_distance_grad(anchors.row(a), others.row(q), d_of(q), -w, g_anchor.row(a),
                            g_other.row(q));
        }
      }
    }
  }
  res.loss = total;
  return res;
}

template <typename T>
std::vector<T> softmax_cross_entropy(const Tensor<T>& logits, std::span<const int> labels,
                                     Tensor<T>* grad) {
  if (labels.size() != logits.rows()) {
    throw DimensionError("softmax_cross_entropy: " + std::to_string(labels.size()) +
                         " labels for logits " + logits.shape_str());
  }
  if (grad) *grad = Tensor<T>(logits.rows(), logits.cols());
  std::vector<T> out(logits.rows());
  for (size_t i = 0; i < logits.rows(); ++i) {
    auto z = logits.row(i);
    if (labels[i] < 0 || static_cast<size_t>(labels[i]) >= z.size()) {
      throw DimensionError("softmax_cross_entropy: label " + std::to_string(labels[i]) +
                           " outside [0," + std::to_string(z.size()) + ")");
    }
    T m = z[0];
    for (T x : z) m = std::max(m, x);
    T s = 0;
    for (T x : z) s += std::exp(x - m);
    const T lse = m + std::log(s);
    out[i] = lse - z[static_cast<size_t>(labels[i])];
    if (grad) {
      auto g = grad->row(i);
      for (size_t k = 0; k < z.size(); ++k) g[k] = std::exp(z[k] - lse);
      g[static_cast<size_t>(labels[i])] -= T(1);
    }
  }
  return out;
}

namespace {

template <typename T>
T mean_of(const Tensor<T>& column) {
  T s = 0;
  for (T x : column.values()) s += x;
  return s / static_cast<T>(column.size());
}

}  // namespace

template <typename T>
CriticTerms<T> critic_loss(const Mlp<T>& critic, const Tensor<T>& v_pen, const Tensor<T>& r_pen,
                           std::span<const T> interp, AlignmentMode mode, T lambda_gp, T weight,
                           Mlp<T>* critic_grad, Tensor<T>* d_vpen, Tensor<T>* d_rpen) {
  if (lambda_gp < T(0)) throw std::invalid_argument("critic_loss: lambda_gp must be >= 0");
  if (!v_pen.same_shape(r_pen) || v_pen.cols() != critic.in_dim()) {
    throw DimensionError("critic_loss: V_m " + v_pen.shape_str() + ", R_m " + r_pen.shape_str() +
                         ", critic width " + std::to_string(critic.in_dim()));
  }
  const size_t n = v_pen.rows();
  const T inv_n = T(1) / static_cast<T>(n);
  MlpCache<T> cv, cr;
  const Tensor<T> sv = critic.forward(v_pen, &cv);
  const Tensor<T> sr = critic.forward(r_pen, &cr);

  CriticTerms<T> out;
  out.wasserstein = mean_of(sv) - mean_of(sr);
  Tensor<T> gsv(n, 1), gsr(n, 1);  // dloss/dscore
  if (mode == AlignmentMode::wgan_gp) {
    out.loss = -out.wasserstein;
    gsv.fill(-inv_n * weight);
    gsr.fill(inv_n * weight);
  } else {
    T acc = 0;
    for (size_t i = 0; i < n; ++i) {
      acc += softplus(-sv(i, 0)) + softplus(sr(i, 0));
      gsv(i, 0) = -sigmoid(-sv(i, 0)) * inv_n * weight;
      gsr(i, 0) = sigmoid(sr(i, 0)) * inv_n * weight;
    }
    out.loss = acc * inv_n;
  }
  const bool want_grad = critic_grad || d_vpen || d_rpen;
  if (want_grad) {
    Mlp<T> scratch = critic_grad ? Mlp<T>{} : critic.zeros_like();
    Mlp<T>& cg = critic_grad ? *critic_grad : scratch;
    Tensor<T> dv = critic.backward(cv, gsv, cg);
    Tensor<T> dr = critic.backward(cr, gsr, cg);
    if (d_vpen) add_inplace(*d_vpen, dv);
    if (d_rpen) add_inplace(*d_rpen, dr);
  }

  if (mode == AlignmentMode::wgan_gp) {
    if (interp.size() != n) {
      throw DimensionError("critic_loss: need one interpolation weight per row, got " +
                           std::to_string(interp.size()));
    }
    Tensor<T> x_hat(n, v_pen.cols());
    for (size_t i = 0; i < n; ++i) {
      const T e = interp[i];
      for (size_t k = 0; k < v_pen.cols(); ++k) x_hat(i, k) = e * v_pen(i, k) + (T(1) - e) * r_pen(i, k);
    }
    MlpCache<T> ch;
    critic.forward(x_hat, &ch);
    const Tensor<T> g = critic.input_gradient(ch);
    Tensor<T> upstream(n, g.cols());
    T gp = 0;
    for (size_t i = 0; i < n; ++i) {
      auto gi = g.row(i);
      const T norm = std::sqrt(dot(gi, gi));
      gp += (norm - T(1)) * (norm - T(1));
      // d/dg (||g|| - 1)^2 is undefined at g = 0; use 0 there.
      if (norm > T(0)) {
        const T c = T(2) * (norm - T(1)) / norm * inv_n * lambda_gp * weight;
        for (size_t k = 0; k < gi.size(); ++k) upstream(i, k) = c * gi[k];
      }
    }
    out.gp = gp * inv_n;
    out.loss += lambda_gp * out.gp;
    // The input gradient is locally constant in x_hat for a piecewise-linear
    // critic, so the penalty sends nothing back to V_m / R_m.
    if (critic_grad) critic.input_gradient_backward(ch, upstream, *critic_grad);
  }
  return out;
}

template <typename T>
T alignment_encoder_loss(const Mlp<T>& critic, const Tensor<T>& v_pen, const Tensor<T>& r_pen,
                         AlignmentMode mode, T weight, Mlp<T>* critic_grad, Tensor<T>* d_vpen,
                         Tensor<T>* d_rpen) {
  if (mode == AlignmentMode::logistic) {
    // The cross-entropy objective is the negated critic loss.
    const CriticTerms<T> t = critic_loss(critic, v_pen, r_pen, std::span<const T>{},
                                         AlignmentMode::logistic, T(0), -weight, critic_grad,
                                         d_vpen, d_rpen);
    return -t.loss;
  }
  if (!v_pen.same_shape(r_pen) || v_pen.cols() != critic.in_dim()) {
    throw DimensionError("alignment_encoder_loss: V_m " + v_pen.shape_str() + ", R_m " +
                         r_pen.shape_str() + ", critic width " + std::to_string(critic.in_dim()));
  }
  // Negated Wasserstein part of the critic loss; the penalty involves only the critic.
  MlpCache<T> cv, cr;
  const Tensor<T> sv = critic.forward(v_pen, &cv);
  const Tensor<T> sr = critic.forward(r_pen, &cr);
  const size_t n = v_pen.rows();
  const T inv_n = T(1) / static_cast<T>(n);
  if (critic_grad || d_vpen || d_rpen) {
    Mlp<T> scratch = critic_grad ? Mlp<T>{} : critic.zeros_like();
    Mlp<T>& cg = critic_grad ? *critic_grad : scratch;
    const Tensor<T> gsv(n, 1, inv_n * weight), gsr(n, 1, -inv_n * weight);
    Tensor<T> dv = critic.backward(cv, gsv, cg);
    Tensor<T> dr = critic.backward(cr, gsr, cg);
    if (d_vpen) add_inplace(*d_vpen, dv);
    if (d_rpen) add_inplace(*d_rpen, dr);
  }
  return mean_of(sv) - mean_of(sr);
}

template <typename T>
R2iTerms<T> r2i_losses(const ModelParams<T>& params, const Tensor<T>& real_grids,
                       std::span<const int> class_ids, const Tensor<T>& r_final,
                       const R2iWeights<T>& w, ModelParams<T>* grads, Tensor<T>* d_rfinal) {
  const size_t n = r_final.rows();
  if (real_grids.empty() || real_grids.rows() != n) {
    throw DimensionError("r2i_losses: batch has no real grids for " + std::to_string(n) + " rows");
  }
  if (real_grids.cols() != params.disc_r2i.in_dim()) {
    throw DimensionError("r2i_losses: grids " + real_grids.shape_str() + " but discriminator expects " +
                         std::to_string(params.disc_r2i.in_dim()));
  }
  MlpCache<T> cg, cdr, cdf, ccr, ccf;
  const Tensor<T> fake = params.gen_r2i.forward(r_final, &cg);
  const Tensor<T> d_real = params.disc_r2i.forward(real_grids, &cdr);
  const Tensor<T> d_fake = params.disc_r2i.forward(fake, &cdf);
  const Tensor<T> c_real = params.cls_r2i.forward(real_grids, &ccr);
  const Tensor<T> c_fake = params.cls_r2i.forward(fake, &ccf);

  const T inv_n = T(1) / static_cast<T>(n);
  R2iTerms<T> out;
  Tensor<T> g_dreal(n, 1), g_dfake(n, 1);
  T disc_real = 0, disc_fake = 0, gen = 0;
  for (size_t i = 0; i < n; ++i) {
    disc_real += softplus(-d_real(i, 0));
    disc_fake += softplus(d_fake(i, 0));
    gen += softplus(-d_fake(i, 0));
    g_dreal(i, 0) = w.disc * T(0.5) * inv_n * -sigmoid(-d_real(i, 0));
    g_dfake(i, 0) = w.disc * T(0.5) * inv_n * sigmoid(d_fake(i, 0)) +
                    w.gen * inv_n * -sigmoid(-d_fake(i, 0));
  }
  out.disc_loss = T(0.5) * (disc_real + disc_fake) * inv_n;
  out.gen_loss = gen * inv_n;

  Tensor<T> g_creal, g_cfake;
  const auto ce_real = softmax_cross_entropy(c_real, class_ids, &g_creal);
  const auto ce_fake = softmax_cross_entropy(c_fake, class_ids, &g_cfake);
  T ce = 0;
  for (size_t i = 0; i < n; ++i) ce += ce_real[i] + ce_fake[i];
  out.cls_loss = T(0.5) * ce * inv_n;

  if (!grads && !d_rfinal) return out;
  ModelParams<T> scratch;
  if (!grads) scratch = params.zeros_like();
  ModelParams<T>& g = grads ? *grads : scratch;
  scale_inplace(g_creal, w.cls * T(0.5) * inv_n);
  scale_inplace(g_cfake, w.cls * T(0.5) * inv_n);
  params.disc_r2i.backward(cdr, g_dreal, g.disc_r2i);
  params.cls_r2i.backward(ccr, g_creal, g.cls_r2i);
  Tensor<T> d_fake_grid = params.disc_r2i.backward(cdf, g_dfake, g.disc_r2i);
  add_inplace(d_fake_grid, params.cls_r2i.backward(ccf, g_cfake, g.cls_r2i));
  Tensor<T> dr = params.gen_r2i.backward(cg, d_fake_grid, g.gen_r2i);
  if (d_rfinal) add_inplace(*d_rfinal, dr);
  return out;
}

template <typename T>
I2rTerms<T> i2r_losses(const ModelParams<T>& params, const Tensor<T>& v_final,
                       const Tensor<T>& multi_hot, std::span<const int> class_ids, T w_ingredient,
                       T w_cls, ModelParams<T>* grads, Tensor<T>* d_vfinal) {
  const size_t n = v_final.rows();
  if (multi_hot.rows() != n || multi_hot.cols() != params.ing_predictor.out_dim()) {
    throw DimensionError("i2r_losses: multi-hot " + multi_hot.shape_str() + " but predictor emits " +
                         std::to_string(params.ing_predictor.out_dim()) + " slots");
  }
  MlpCache<T> ci, cc;
  const Tensor<T> logits = params.ing_predictor.forward(v_final, &ci);
  const Tensor<T> cls = params.cls_i2r.forward(v_final, &cc);

  const T inv_nm = T(1) / static_cast<T>(logits.size());
  I2rTerms<T> out;
  Tensor<T> g_logits(logits.rows(), logits.cols());
  T bce = 0;
  auto z = logits.values();
  auto y = multi_hot.values();
  auto gz = g_logits.values();
  for (size_t k = 0; k < z.size(); ++k) {
    bce += std::max(z[k], T(0)) - z[k] * y[k] + std::log1p(std::exp(-std::abs(z[k])));
    gz[k] = (sigmoid(z[k]) - y[k]) * inv_nm * w_ingredient;
  }
  out.ingredient_loss = bce * inv_nm;

  Tensor<T> g_cls;
  const auto ce = softmax_cross_entropy(cls, class_ids, &g_cls);
  const T inv_n = T(1) / static_cast<T>(n);
  T total = 0;
  for (T c : ce) total += c;
  out.cls_loss = total * inv_n;

  if (!grads && !d_vfinal) return out;
  ModelParams<T> scratch;
  if (!grads) scratch = params.zeros_like();
  ModelParams<T>& g = grads ? *grads : scratch;
  scale_inplace(g_cls, inv_n * w_cls);
  Tensor<T> dv = params.ing_predictor.backward(ci, g_logits, g.ing_predictor);
  add_inplace(dv, params.cls_i2r.backward(cc, g_cls, g.cls_i2r));
  if (d_vfinal) add_inplace(*d_vfinal, dv);
  return out;
}

#define XMEM_INSTANTIATE_LOSSES(T)                                                               \
  template TripletResult<T> triplet_loss_hard(const Tensor<T>&, const Tensor<T>&,                \
                                              std::span<const uint64_t>, T);                      \
  template TripletResult<T> triplet_loss_all(const Tensor<T>&, const Tensor<T>&,                 \
                                             std::span<const uint64_t>, T);                       \
  template std::vector<T> softmax_cross_entropy(const Tensor<T>&, std::span<const int>,          \
                                                Tensor<T>*);                                     \
  template CriticTerms<T> critic_loss(const Mlp<T>&, const Tensor<T>&, const Tensor<T>&,         \
                                      std::span<const T>, AlignmentMode, T, T, Mlp<T>*,          \
                                      Tensor<T>*, Tensor<T>*);                                   \
  template T alignment_encoder_loss(const Mlp<T>&, const Tensor<T>&, const Tensor<T>&,           \
                                    AlignmentMode, T, Mlp<T>*, Tensor<T>*, Tensor<T>*);           \
  template R2iTerms<T> r2i_losses(const ModelParams<T>&, const Tensor<T>&, std::span<const int>, \
                                  const Tensor<T>&, const R2iWeights<T>&, ModelParams<T>*,       \
                                  Tensor<T>*);                                                   \
  template I2rTerms<T> i2r_losses(const ModelParams<T>&, const Tensor<T>&, const Tensor<T>&,     \
                                  std::span<const int>, T, T, ModelParams<T>*, Tensor<T>*);

XMEM_INSTANTIATE_LOSSES(float)
XMEM_INSTANTIATE_LOSSES(double)

}  // namespace xmem
