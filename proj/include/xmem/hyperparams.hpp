#ifndef XMEM_HYPERPARAMS_HPP_
#define XMEM_HYPERPARAMS_HPP_

#include <string>

namespace xmem {

enum class AlignmentMode { wgan_gp, logistic };

AlignmentMode parse_alignment_mode(const std::string& s);
const char* alignment_mode_name(AlignmentMode m);

struct HyperParams {
  size_t d = 16;
  double alpha = 0.3;    // triplet margin
  double lambda1 = 0.005;  // modality alignment weight
  double lambda2 = 0.002;  // translation consistency weight
  double lambda_gp = 10.0;
  int critic_steps = 5;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  size_t batch_size = 32;
  size_t epochs = 50;
  bool normalize_embeddings = true;
  AlignmentMode alignment_mode = AlignmentMode::wgan_gp;

  /// Throws ConfigError naming the offending field.
  void validate() const;
  bool operator==(const HyperParams&) const = default;
};

/// Beta1 of the adversarial players (modality critic, image discriminator and
/// the image generator).
inline constexpr double kAdversarialBeta1 = 0.5;

/// Which loss components are active. All off is the plain triplet-loss arm.
struct AblationConfig {
  bool use_hard_mining = true;
  bool use_ma = true;
  bool use_r2i = true;
  bool use_i2r = true;

  static AblationConfig all() { return {}; }
  static AblationConfig plain_triplet() { return {false, false, false, false}; }

  /// Parses an arm token such as "tl", "tl+hm+ma" or "all".
  static AblationConfig parse_arm(const std::string& token);
  std::string arm_name() const;
  bool operator==(const AblationConfig&) const = default;
};

}  // namespace xmem

#endif  // XMEM_HYPERPARAMS_HPP_
