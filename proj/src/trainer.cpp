#include "xmem/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <random>
#include <sstream>

#include "xmem/checkpoint.hpp"
#include "xmem/errors.hpp"
#include "xmem/kv.hpp"
#include "xmem/objectives.hpp"

namespace xmem {

bool EpochRecord::same_values(const EpochRecord& o) const {
  return epoch == o.epoch && l_ret == o.l_ret && l_ma == o.l_ma && l_r2i == o.l_r2i &&
         l_i2r == o.l_i2r && total == o.total && wasserstein_est == o.wasserstein_est &&
         mean_hinge == o.mean_hinge;
}

namespace {

constexpr const char* kLogColumns = "epoch,l_ret,l_ma,l_r2i,l_i2r,total,wasserstein_est,mean_hinge,seconds";

}  // namespace

void TrainLog::write(const std::string& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write log '" + path + "'");
  for (const auto& [k, v] : header) out << "# " << k << " = " << v << "\n";
  out << kLogColumns << "\n";
  for (const auto& r : records) {
    out << r.epoch;
    for (double x : {r.l_ret, r.l_ma, r.l_r2i, r.l_i2r, r.total, r.wasserstein_est, r.mean_hinge, r.seconds}) {
      out << ',' << format_double(x);
    }
    out << "\n";
  }
  if (!out) throw IoError("write failed for '" + path + "'");
}

TrainLog TrainLog::read(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open log '" + path + "'");
  TrainLog log;
  std::string line;
  size_t lineno = 0;
  bool columns = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    if (!columns && line.rfind("# ", 0) == 0) {
      for (auto& kv : parse_kv(line.substr(2) + "\n")) log.header.push_back(std::move(kv));
      continue;
    }
    if (!columns) {
      if (line != kLogColumns) throw ParseError("unexpected log columns", lineno);
      columns = true;
      continue;
    }
    std::istringstream cells(line);
    std::string cell;
    std::vector<double> v;
    while (std::getline(cells, cell, ',')) {
      try {
        v.push_back(kv_double("log", cell));
      } catch (const ConfigError&) {
        throw ParseError("invalid number '" + cell + "'", lineno);
      }
    }
    if (v.size() != 9) throw ParseError("expected 9 columns", lineno);
    log.records.push_back({static_cast<size_t>(v[0]), v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8]});
  }
  return log;
}

bool TrainLog::same_values(const TrainLog& o) const {
  if (header != o.header || records.size() != o.records.size()) return false;
  for (size_t i = 0; i < records.size(); ++i) {
    if (!records[i].same_values(o.records[i])) return false;
  }
  return true;
}

uint64_t epoch_seed(uint64_t seed, size_t epoch) {
  // splitmix64 of (seed, epoch)
  uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (static_cast<uint64_t>(epoch) + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

template <typename T>
EpochRecord train_epoch(ModelParams<T>& params, OptimizerState<T>& state, const Dataset& train,
                        const HyperParams& hp, const AblationConfig& ablation, uint64_t rng_seed) {
  if (hp.batch_size < 2) throw ConfigError("batch_size must be >= 2");
  if (train.recipes.empty()) throw std::invalid_argument("train_epoch: empty dataset");
  const auto start = std::chrono::steady_clock::now();

  const bool multi = std::any_of(train.recipes.begin(), train.recipes.end(),
                                 [](const RecipeRecord& r) { return r.images.size() >= 2; });
  const auto batches = make_batches(train, hp.batch_size, rng_seed, multi ? kManyToOneMix : 0.0);
  std::mt19937_64 rng(rng_seed ^ 0x5bd1e995ULL);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  EpochRecord rec;
  for (const auto& refs : batches) {
    const PairedBatch<T> batch = assemble_batch<T>(train, refs);
    if (ablation.use_ma) {
      std::vector<T> eps(batch.size());
      for (int s = 0; s < hp.critic_steps; ++s) {
        for (auto& e : eps) e = static_cast<T>(unit(rng));
        const Objective<T> c = critic_objective(params, batch, hp, std::span<const T>(eps));
        adam_step(params, c.grads, state, hp, Player::modality_critic);
        if (s + 1 == hp.critic_steps) rec.wasserstein_est += static_cast<double>(c.wasserstein);
      }
    }
    if (ablation.use_r2i) {
      const Objective<T> d = r2i_disc_objective(params, batch, hp);
      adam_step(params, d.grads, state, hp, Player::image_discriminator);
    }
    const Objective<T> j = joint_objective(params, batch, hp, ablation);
    adam_step(params, j.grads, state, hp, Player::embedding);
    rec.l_ret += static_cast<double>(j.parts.l_ret);
    rec.l_ma += static_cast<double>(j.parts.l_ma);
    rec.l_r2i += static_cast<double>(j.parts.l_r2i());
    rec.l_i2r += static_cast<double>(j.parts.l_i2r());
    rec.total += static_cast<double>(j.parts.total);
    rec.mean_hinge += static_cast<double>(j.mean_hinge);
  }
  const double n = static_cast<double>(batches.size());
  for (double* x : {&rec.l_ret, &rec.l_ma, &rec.l_r2i, &rec.l_i2r, &rec.total, &rec.wasserstein_est,
                    &rec.mean_hinge}) {
    *x /= n;
  }
  rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return rec;
}

template <typename T>
TrainResult<T> train_model(const Dataset& ds, const TrainConfig& cfg, const ModelParams<T>* init,
                           const TrainHooks<T>& hooks) {
  cfg.validate();
  const Architecture arch = cfg.architecture(ds.info);
  TrainResult<T> out;
  out.params = init ? *init : ModelParams<T>::init(arch, cfg.seed);
  if (out.params.architecture() != arch) {
    throw ConfigError("initial checkpoint does not match the configured architecture");
  }
  for (const auto& [k, v] : parse_kv(cfg.to_text())) out.log.header.emplace_back(k, v);
  const Dataset train = ds.subset(Split::train);
  OptimizerState<T> state = OptimizerState<T>::for_params(out.params);
  for (size_t e = 0; e < cfg.hp.epochs; ++e) {
    EpochRecord r = train_epoch(out.params, state, train, cfg.hp, cfg.ablation, epoch_seed(cfg.seed, e));
    r.epoch = e + 1;
    out.log.records.push_back(r);
    if (hooks.on_epoch) hooks.on_epoch(r);
    if (hooks.on_checkpoint && hooks.checkpoint_every && (e + 1) % hooks.checkpoint_every == 0) {
      hooks.on_checkpoint(e + 1, out.params);
    }
  }
  return out;
}

std::string checkpoint_path(const std::string& out_dir) {
  return (std::filesystem::path(out_dir) / "model.ckpt").string();
}

std::string log_path(const std::string& out_dir) {
  return (std::filesystem::path(out_dir) / "train_log.csv").string();
}

template <typename T>
TrainResult<T> run_training(const TrainFiles& files, const TrainConfig& cfg,
                            const std::function<void(const EpochRecord&)>& on_epoch) {
  const Dataset ds = load_dataset(files.dataset);
  std::error_code ec;
  std::filesystem::create_directories(files.out_dir, ec);
  if (ec) throw IoError("cannot create output directory '" + files.out_dir + "': " + ec.message());

  std::optional<ModelParams<T>> init;
  if (!files.init_checkpoint.empty()) init = load_checkpoint<T>(files.init_checkpoint);

  TrainHooks<T> hooks;
  hooks.on_epoch = on_epoch;
  hooks.checkpoint_every = files.checkpoint_every;
  hooks.on_checkpoint = [&](size_t epoch, const ModelParams<T>& p) {
    const auto path = std::filesystem::path(files.out_dir) / ("model_epoch" + std::to_string(epoch) + ".ckpt");
    save_checkpoint(p, path.string());
  };
  TrainResult<T> result = train_model(ds, cfg, init ? &*init : nullptr, hooks);
  save_checkpoint(result.params, checkpoint_path(files.out_dir));
  result.log.write(log_path(files.out_dir));
  return result;
}

double modality_probe_accuracy(const Tensor<double>& v_fit, const Tensor<double>& r_fit,
                               const Tensor<double>& v_test, const Tensor<double>& r_test) {
  const size_t d = v_fit.cols();
  for (const auto* t : {&r_fit, &v_test, &r_test}) {
    if (t->cols() != d) throw DimensionError("modality_probe_accuracy: feature widths differ");
  }
  if (v_fit.rows() == 0 || r_fit.rows() == 0 || v_test.rows() + r_test.rows() == 0) {
    throw std::invalid_argument("modality_probe_accuracy: empty feature set");
  }
  // Standardize with statistics of the fit set.
  std::vector<double> mean(d, 0.0), scale(d, 0.0);
  const double n_fit = static_cast<double>(v_fit.rows() + r_fit.rows());
  for (const auto* t : {&v_fit, &r_fit}) {
    for (size_t i = 0; i < t->rows(); ++i) {
      for (size_t j = 0; j < d; ++j) mean[j] += (*t)(i, j) / n_fit;
    }
  }
  for (const auto* t : {&v_fit, &r_fit}) {
    for (size_t i = 0; i < t->rows(); ++i) {
      for (size_t j = 0; j < d; ++j) scale[j] += ((*t)(i, j) - mean[j]) * ((*t)(i, j) - mean[j]) / n_fit;
    }
  }
  for (auto& s : scale) s = s > 1e-24 ? 1.0 / std::sqrt(s) : 0.0;

  std::vector<double> w(d, 0.0);
  double b = 0.0;
  constexpr double kRate = 0.5, kL2 = 1e-3;
  constexpr int kIters = 500;
  auto logit = [&](std::span<const double> x) {
    double z = b;
    for (size_t j = 0; j < d; ++j) z += w[j] * (x[j] - mean[j]) * scale[j];
    return z;
  };
  for (int it = 0; it < kIters; ++it) {
    std::vector<double> gw(d, 0.0);
    double gb = 0.0;
    for (int label = 0; label < 2; ++label) {
      const Tensor<double>& t = label ? v_fit : r_fit;
      for (size_t i = 0; i < t.rows(); ++i) {
        const double p = 1.0 / (1.0 + std::exp(-logit(t.row(i))));
        const double g = (p - label) / n_fit;
        for (size_t j = 0; j < d; ++j) gw[j] += g * (t(i, j) - mean[j]) * scale[j];
        gb += g;
      }
    }
    for (size_t j = 0; j < d; ++j) w[j] -= kRate * (gw[j] + kL2 * w[j]);
    b -= kRate * gb;
  }
  size_t correct = 0;
  for (size_t i = 0; i < v_test.rows(); ++i) correct += logit(v_test.row(i)) > 0 ? 1 : 0;
  for (size_t i = 0; i < r_test.rows(); ++i) correct += logit(r_test.row(i)) <= 0 ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(v_test.rows() + r_test.rows());
}

template <typename T>
std::array<Tensor<double>, 2> penultimate_features(const ModelParams<T>& params, const Dataset& ds) {
  const auto refs = canonical_pairs(ds);
  const PairedBatch<T> b = assemble_batch<T>(ds, refs);
  const EmbeddingBatch<T> e = embed_batch(params, b, false);
  return {tensor_cast<double>(e.v_pen), tensor_cast<double>(e.r_pen)};
}

#define XMEM_INSTANTIATE_TRAINER(T)                                                                 \
  template EpochRecord train_epoch(ModelParams<T>&, OptimizerState<T>&, const Dataset&,             \
                                   const HyperParams&, const AblationConfig&, uint64_t);            \
  template TrainResult<T> train_model(const Dataset&, const TrainConfig&, const ModelParams<T>*,    \
                                      const TrainHooks<T>&);                                           \
  template TrainResult<T> run_training(const TrainFiles&, const TrainConfig&,                      \
                                       const std::function<void(const EpochRecord&)>&);             \
  template std::array<Tensor<double>, 2> penultimate_features(const ModelParams<T>&, const Dataset&);

XMEM_INSTANTIATE_TRAINER(float)
XMEM_INSTANTIATE_TRAINER(double)

}  // namespace xmem
