#ifndef XMEM_TRAINER_HPP_
#define XMEM_TRAINER_HPP_

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "xmem/config.hpp"
#include "xmem/data.hpp"
#include "xmem/model.hpp"
#include "xmem/optimizer.hpp"

namespace xmem {

/// Per-epoch means over batches.
struct EpochRecord {
  size_t epoch = 0;
  double l_ret = 0;
  double l_ma = 0;
  double l_r2i = 0;
  double l_i2r = 0;
  double total = 0;
  double wasserstein_est = 0;  // mean D(V_m) - mean D(R_m) after the critic steps
  double mean_hinge = 0;
  double seconds = 0;

  /// Equality of everything except wall-clock time.
  bool same_values(const EpochRecord& o) const;
};

struct TrainLog {
  std::vector<std::pair<std::string, std::string>> header;
  std::vector<EpochRecord> records;

  /// `# key = value` header lines, then the CSV
  /// epoch,l_ret,l_ma,l_r2i,l_i2r,total,wasserstein_est,mean_hinge,seconds
  void write(const std::string& path) const;
  static TrainLog read(const std::string& path);
  bool same_values(const TrainLog& o) const;
};

/// Fraction of batches built around a recipe with several images.
inline constexpr double kManyToOneMix = 0.5;

/// One pass over `train`: per batch, critic_steps critic updates (use_ma),
/// one image-discriminator update (use_r2i), then one update of the
/// embedding player on the joint objective.
template <typename T>
EpochRecord train_epoch(ModelParams<T>& params, OptimizerState<T>& state, const Dataset& train,
                        const HyperParams& hp, const AblationConfig& ablation, uint64_t rng_seed);

/// Seed of epoch `epoch` (0-based) for a run seeded with `seed`.
uint64_t epoch_seed(uint64_t seed, size_t epoch);

template <typename T>
struct TrainResult {
  ModelParams<T> params;
  TrainLog log;
};

template <typename T>
struct TrainHooks {
  std::function<void(const EpochRecord&)> on_epoch;
  /// Called with the 1-based epoch number every `checkpoint_every` epochs.
  std::function<void(size_t, const ModelParams<T>&)> on_checkpoint;
  size_t checkpoint_every = 0;
};

/// Trains on the train split from `init` (or a fresh initialization from
/// cfg.seed when null).
template <typename T>
TrainResult<T> train_model(const Dataset& ds, const TrainConfig& cfg, const ModelParams<T>* init = nullptr,
                           const TrainHooks<T>& hooks = {});

struct TrainFiles {
  std::string dataset;
  std::string out_dir;
  std::string init_checkpoint;  // optional
  size_t checkpoint_every = 0;
};

/// Loads the dataset, trains, and writes out_dir/model.ckpt (plus
/// model_epoch<k>.ckpt every k epochs) and out_dir/train_log.csv.
template <typename T>
TrainResult<T> run_training(const TrainFiles& files, const TrainConfig& cfg,
                            const std::function<void(const EpochRecord&)>& on_epoch = {});

std::string checkpoint_path(const std::string& out_dir);
std::string log_path(const std::string& out_dir);

/// Held-out accuracy of a logistic-regression probe telling V_m rows
/// (label 1) from R_m rows (label 0). Fit on the `fit` pair, scored on the
/// `test` pair.
double modality_probe_accuracy(const Tensor<double>& v_fit, const Tensor<double>& r_fit,
                               const Tensor<double>& v_test, const Tensor<double>& r_test);

/// Penultimate features {V_m, R_m} of the canonical pairs of `ds`.
template <typename T>
std::array<Tensor<double>, 2> penultimate_features(const ModelParams<T>& params, const Dataset& ds);

}  // namespace xmem

#endif  // XMEM_TRAINER_HPP_
