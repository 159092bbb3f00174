#ifndef XMEM_CONFIG_HPP_
#define XMEM_CONFIG_HPP_

#include <cstdint>
#include <string>
#include <vector>

#include "xmem/data.hpp"
#include "xmem/hyperparams.hpp"
#include "xmem/model.hpp"
#include "xmem/precision.hpp"

namespace xmem {

/// Everything a training run reads from its config file.
struct TrainConfig {
  HyperParams hp;
  AblationConfig ablation;
  size_t d_img = 32;
  size_t d_rcp = 48;
  size_t grid_g = 8;
  uint64_t seed = 1;
  Precision precision = Precision::f64;

  /// Applies one key; unknown keys and bad values throw ConfigError.
  void set(const std::string& key, const std::string& value);
  /// Applies a `key=value` override string.
  void apply_override(const std::string& assignment);
  /// d=1024, batch 64, lr 1e-4, lambda1 0.005, lambda2 0.002.
  void apply_full_scale_preset();
  /// Honors XMEM_PRECISION when set.
  void apply_environment();
  void validate() const;

  /// Every key with its resolved value, one `key = value` per line, in the
  /// canonical key order. Parsing this text reproduces the config.
  std::string to_text() const;

  /// Network shape for a dataset; feature dims must match the config.
  Architecture architecture(const DatasetInfo& info) const;

  bool operator==(const TrainConfig&) const = default;
};

const std::vector<std::string>& config_keys();

TrainConfig parse_train_config(const std::string& text);
TrainConfig load_train_config(const std::string& path);

}  // namespace xmem

#endif  // XMEM_CONFIG_HPP_
