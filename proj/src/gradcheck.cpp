#include "xmem/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "xmem/errors.hpp"
#include "xmem/objectives.hpp"

namespace xmem {

CheckReport finite_diff_check(const std::function<double()>& loss, const std::vector<ParamBlock>& params,
                              const std::vector<ParamBlock>& analytic, double step, double tol,
                              size_t samples, uint64_t seed) {
  if (params.size() != analytic.size()) {
    throw DimensionError("finite_diff_check: parameter and gradient block counts differ");
  }
  size_t total = 0;
  for (size_t b = 0; b < params.size(); ++b) {
    if (params[b].values.size() != analytic[b].values.size()) {
      throw DimensionError("finite_diff_check: gradient of '" + params[b].name + "' has wrong size");
    }
    total += params[b].values.size();
  }

  const double f0 = loss();
  if (loss() != f0) throw DeterminismError("finite_diff_check: loss is not deterministic");

  std::mt19937_64 rng(seed);
  std::vector<std::pair<size_t, size_t>> coords;
  for (size_t b = 0; b < params.size(); ++b) {
    const size_t n = params[b].values.size();
    if (n == 0) continue;
    std::uniform_int_distribution<size_t> pick(0, n - 1);
    for (int k = 0; k < 2; ++k) coords.emplace_back(b, pick(rng));
  }
  if (total > 0) {
    std::uniform_int_distribution<size_t> pick(0, total - 1);
    for (size_t s = 0; s < samples; ++s) {
      size_t flat = pick(rng), b = 0;
      while (flat >= params[b].values.size()) flat -= params[b].values.size(), ++b;
      coords.emplace_back(b, flat);
    }
  }

  CheckReport report;
  report.tol = tol;
  for (const auto& [b, i] : coords) {
    double& x = params[b].values[i];
    const double saved = x;
    x = saved + step;
    const double up = loss();
    x = saved - step;
    const double down = loss();
    x = saved;
    const double numeric = (up - down) / (2 * step);
    const double a = analytic[b].values[i];
    const double rel = std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
    ++report.checked;
    if (rel > report.max_rel_error || report.worst.empty()) {
      report.max_rel_error = rel;
      report.worst = params[b].name + "[" + std::to_string(i) + "]";
    }
  }
  if (loss() != f0) throw DeterminismError("finite_diff_check: parameters not restored");
  return report;
}

std::vector<ParamBlock> param_blocks(ModelParams<double>& params) {
  std::vector<ParamBlock> out;
  params.for_each_group([&](Module, ParamGroup<double>& g, Activation) {
    out.push_back({g.name + ".weights", g.weights.values()});
    out.push_back({g.name + ".bias", std::span<double>(g.bias)});
  });
  return out;
}

CheckReport finite_diff_check(const std::function<double(const ModelParams<double>&)>& loss,
                              const ModelParams<double>& params, const ModelParams<double>& analytic,
                              double step, double tol, size_t samples, uint64_t seed) {
  ModelParams<double> work = params;
  ModelParams<double> grads = analytic;
  return finite_diff_check([&] { return loss(work); }, param_blocks(work), param_blocks(grads), step,
                           tol, samples, seed);
}

Architecture gradcheck_architecture() {
  Architecture a;
  a.d_img = 6;
  a.d_rcp = 7;
  a.d = 4;
  a.grid_g = 3;
  a.n_classes = 4;
  a.n_ingredients = 5;
  return a;
}

PairedBatch<double> random_batch(const Architecture& arch, size_t size, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  PairedBatch<double> b;
  b.ingredients = Tensor<double>(size, arch.n_ingredients);
  b.recipe_feats = Tensor<double>(size, arch.d_rcp);
  b.image_feats = Tensor<double>(size, arch.d_img);
  b.grids = Tensor<double>(size, arch.grid_g * arch.grid_g);
  for (size_t i = 0; i < size; ++i) {
    b.recipe_ids.push_back(i / 2 + (i % 4 == 3 ? 100 : 0));
    b.class_ids.push_back(static_cast<int>(rng() % arch.n_classes));
    for (size_t j = 0; j < arch.n_ingredients; ++j) b.ingredients(i, j) = (rng() % 2) ? 1.0 : 0.0;
  }
  for (auto* t : {&b.recipe_feats, &b.image_feats}) {
    for (auto& x : t->values()) x = normal(rng);
  }
  for (auto& x : b.grids.values()) x = unit(rng);
  return b;
}

namespace {

enum class Component { r2i_gen, r2i_cls, i2r_ing, i2r_cls };

// A single translation-consistency term together with its full gradient.
Objective<double> component_objective(const ModelParams<double>& params, const PairedBatch<double>& batch,
                                      bool normalize, Component c) {
  EmbedCache<double> cache;
  const EmbeddingBatch<double> emb = embed_batch(params, batch, normalize, &cache);
  Objective<double> out;
  out.grads = params.zeros_like();
  EmbedUpstream<double> up;
  const std::span<const int> cls(batch.class_ids);
  if (c == Component::r2i_gen || c == Component::r2i_cls) {
    up.r_final = Tensor<double>(emb.r_final.rows(), emb.r_final.cols());
    const R2iWeights<double> w{c == Component::r2i_gen ? 1.0 : 0.0, 0.0, c == Component::r2i_cls ? 1.0 : 0.0};
    const auto t = r2i_losses(params, batch.grids, cls, emb.r_final, w, &out.grads, &up.r_final);
    out.value = c == Component::r2i_gen ? t.gen_loss : t.cls_loss;
  } else {
    up.v_final = Tensor<double>(emb.v_final.rows(), emb.v_final.cols());
    const bool ing = c == Component::i2r_ing;
    const auto t = i2r_losses(params, emb.v_final, batch.ingredients, cls, ing ? 1.0 : 0.0, ing ? 0.0 : 1.0,
                              &out.grads, &up.v_final);
    out.value = ing ? t.ingredient_loss : t.cls_loss;
  }
  embed_backward(params, cache, up, out.grads);
  return out;
}

}  // namespace

std::vector<LossCheck> run_gradcheck_suite(const GradcheckOptions& opt) {
  const Architecture arch = gradcheck_architecture();
  const ModelParams<double> params = ModelParams<double>::init(arch, opt.seed);
  const PairedBatch<double> batch = random_batch(arch, 8, opt.seed + 1000);
  std::mt19937_64 rng(opt.seed + 2000);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<double> interp(batch.size());
  for (auto& e : interp) e = unit(rng);

  HyperParams wgan;
  wgan.d = arch.d;
  HyperParams logistic = wgan;
  logistic.alignment_mode = AlignmentMode::logistic;

  using Fn = std::function<Objective<double>(const ModelParams<double>&)>;
  const std::span<const double> eps(interp);
  const std::vector<std::pair<std::string, Fn>> losses = {
      {"l_ret_hard", [&](const auto& p) { return retrieval_objective(p, batch, wgan, true); }},
      {"l_ret_all_pairs", [&](const auto& p) { return retrieval_objective(p, batch, wgan, false); }},
      {"l_ma_critic_wgan_gp", [&](const auto& p) { return critic_objective(p, batch, wgan, eps); }},
      {"l_ma_encoder_wgan_gp", [&](const auto& p) { return alignment_objective(p, batch, wgan); }},
      {"l_ma_critic_logistic", [&](const auto& p) { return critic_objective(p, batch, logistic, eps); }},
      {"l_ma_encoder_logistic", [&](const auto& p) { return alignment_objective(p, batch, logistic); }},
      {"l_r2i_gen", [&](const auto& p) { return component_objective(p, batch, true, Component::r2i_gen); }},
      {"l_r2i_disc", [&](const auto& p) { return r2i_disc_objective(p, batch, wgan); }},
      {"l_r2i_cls", [&](const auto& p) { return component_objective(p, batch, true, Component::r2i_cls); }},
      {"l_i2r_ingredients", [&](const auto& p) { return component_objective(p, batch, true, Component::i2r_ing); }},
      {"l_i2r_cls", [&](const auto& p) { return component_objective(p, batch, true, Component::i2r_cls); }},
      {"total_wgan_gp", [&](const auto& p) { return joint_objective(p, batch, wgan, AblationConfig::all()); }},
      {"total_logistic", [&](const auto& p) { return joint_objective(p, batch, logistic, AblationConfig::all()); }},
  };

  std::vector<LossCheck> out;
  for (const auto& [name, fn] : losses) {
    ModelParams<double> grads = fn(params).grads;
    if (opt.fault != 0.0) {
      grads.for_each_group([&](Module, ParamGroup<double>& g, Activation) {
        for (auto& x : g.weights.values()) x += opt.fault;
        for (auto& x : g.bias) x += opt.fault;
      });
    }
    const auto value = [&](const ModelParams<double>& p) { return static_cast<double>(fn(p).value); };
    out.push_back({name, finite_diff_check(value, params, grads, opt.step, opt.tol, opt.samples, opt.seed)});
  }
  return out;
}

}  // namespace xmem
