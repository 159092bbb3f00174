#include "xmem/config.hpp"

#include <cstdlib>

#include "xmem/errors.hpp"
#include "xmem/kv.hpp"

namespace xmem {

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = {
      "d",          "d_img",        "d_rcp",   "grid_g",          "alpha",
      "lambda1",    "lambda2",      "lambda_gp", "critic_steps",  "lr",
      "beta1",      "beta2",        "eps",     "batch_size",      "epochs",
      "seed",       "normalize_embeddings", "alignment_mode", "use_hard_mining", "use_ma",
      "use_r2i",    "use_i2r",      "precision"};
  return keys;
}

void TrainConfig::set(const std::string& key, const std::string& value) {
  auto positive = [&](uint64_t v) {
    if (v == 0) throw ConfigError("'" + key + "' must be positive");
    return static_cast<size_t>(v);
  };
  if (key == "d") hp.d = positive(kv_uint(key, value));
  else if (key == "d_img") d_img = positive(kv_uint(key, value));
  else if (key == "d_rcp") d_rcp = positive(kv_uint(key, value));
  else if (key == "grid_g") grid_g = positive(kv_uint(key, value));
  else if (key == "alpha") hp.alpha = kv_double(key, value);
  else if (key == "lambda1") hp.lambda1 = kv_double(key, value);
  else if (key == "lambda2") hp.lambda2 = kv_double(key, value);
  else if (key == "lambda_gp") hp.lambda_gp = kv_double(key, value);
  else if (key == "critic_steps") hp.critic_steps = static_cast<int>(positive(kv_uint(key, value)));
  else if (key == "lr") hp.lr = kv_double(key, value);
  else if (key == "beta1") hp.beta1 = kv_double(key, value);
  else if (key == "beta2") hp.beta2 = kv_double(key, value);
  else if (key == "eps") hp.eps = kv_double(key, value);
  else if (key == "batch_size") hp.batch_size = static_cast<size_t>(kv_uint(key, value));
  else if (key == "epochs") hp.epochs = static_cast<size_t>(kv_uint(key, value));
  else if (key == "seed") seed = kv_uint(key, value);
  else if (key == "normalize_embeddings") hp.normalize_embeddings = kv_bool(key, value);
  else if (key == "alignment_mode") hp.alignment_mode = parse_alignment_mode(value);
  else if (key == "use_hard_mining") ablation.use_hard_mining = kv_bool(key, value);
  else if (key == "use_ma") ablation.use_ma = kv_bool(key, value);
  else if (key == "use_r2i") ablation.use_r2i = kv_bool(key, value);
  else if (key == "use_i2r") ablation.use_i2r = kv_bool(key, value);
  else if (key == "precision") precision = parse_precision(value);
  else {
    throw ConfigError("unknown config key '" + key + "'");
  }
}

void TrainConfig::apply_override(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("override must look like key=value, got '" + assignment + "'");
  }
  set(assignment.substr(0, eq), assignment.substr(eq + 1));
}

void TrainConfig::apply_full_scale_preset() {
  hp.d = 1024;
  hp.batch_size = 64;
  hp.lr = 1e-4;
  hp.lambda1 = 0.005;
  hp.lambda2 = 0.002;
}

void TrainConfig::apply_environment() {
  if (const char* env = std::getenv("XMEM_PRECISION"); env && *env) precision = parse_precision(env);
}

void TrainConfig::validate() const { hp.validate(); }

std::string TrainConfig::to_text() const {
  auto b = [](bool v) { return std::string(v ? "true" : "false"); };
  auto f = [](double v) { return format_double(v); };
  const std::vector<std::pair<std::string, std::string>> kv = {
      {"d", std::to_string(hp.d)},
      {"d_img", std::to_string(d_img)},
      {"d_rcp", std::to_string(d_rcp)},
      {"grid_g", std::to_string(grid_g)},
      {"alpha", f(hp.alpha)},
      {"lambda1", f(hp.lambda1)},
      {"lambda2", f(hp.lambda2)},
      {"lambda_gp", f(hp.lambda_gp)},
      {"critic_steps", std::to_string(hp.critic_steps)},
      {"lr", f(hp.lr)},
      {"beta1", f(hp.beta1)},
      {"beta2", f(hp.beta2)},
      {"eps", f(hp.eps)},
      {"batch_size", std::to_string(hp.batch_size)},
      {"epochs", std::to_string(hp.epochs)},
      {"seed", std::to_string(seed)},
      {"normalize_embeddings", b(hp.normalize_embeddings)},
      {"alignment_mode", alignment_mode_name(hp.alignment_mode)},
      {"use_hard_mining", b(ablation.use_hard_mining)},
      {"use_ma", b(ablation.use_ma)},
      {"use_r2i", b(ablation.use_r2i)},
      {"use_i2r", b(ablation.use_i2r)},
      {"precision", precision_name(precision)},
  };
  std::string out;
  for (const auto& [k, v] : kv) out += k + " = " + v + "\n";
  return out;
}

Architecture TrainConfig::architecture(const DatasetInfo& info) const {
  auto check = [](const char* key, size_t cfg, size_t data) {
    if (cfg != data) {
      throw ConfigError(std::string("config ") + key + "=" + std::to_string(cfg) +
                        " does not match dataset value " + std::to_string(data));
    }
  };
  check("d_img", d_img, info.d_img);
  check("d_rcp", d_rcp, info.d_rcp);
  check("grid_g", grid_g, info.grid_g);
  Architecture a;
  a.d_img = d_img;
  a.d_rcp = d_rcp;
  a.d = hp.d;
  a.grid_g = grid_g;
  a.n_classes = info.n_classes;
  a.n_ingredients = info.n_ingredients;
  return a;
}

TrainConfig parse_train_config(const std::string& text) {
  TrainConfig c;
  for (const auto& [k, v] : parse_kv(text)) c.set(k, v);
  return c;
}

TrainConfig load_train_config(const std::string& path) {
  TrainConfig c;
  for (const auto& [k, v] : parse_kv_file(path)) c.set(k, v);
  return c;
}

}  // namespace xmem
