#ifndef XMEM_GRADCHECK_HPP_
#define XMEM_GRADCHECK_HPP_

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "xmem/batch.hpp"
#include "xmem/model.hpp"

namespace xmem {

/// A named, mutable block of parameters. The loss closure must read the
/// same storage the spans point to.
struct ParamBlock {
  std::string name;
  std::span<double> values;
};

struct CheckReport {
  double max_rel_error = 0;  // |a - n| / max(1, |a|, |n|)
  size_t checked = 0;
  std::string worst;  // "<block>[<index>]"
  double tol = 0;
  bool passed() const { return max_rel_error < tol; }
};

/// Compares `analytic` to central differences (f(x+h) - f(x-h)) / 2h at
/// sampled coordinates: two per block, then `samples` drawn uniformly over
/// all coordinates. Throws DeterminismError when two evaluations at the same
/// point disagree.
CheckReport finite_diff_check(const std::function<double()>& loss, const std::vector<ParamBlock>& params,
                              const std::vector<ParamBlock>& analytic, double step, double tol,
                              size_t samples, uint64_t seed);

/// Convenience form over the whole model: the loss receives the perturbed
/// parameters.
CheckReport finite_diff_check(const std::function<double(const ModelParams<double>&)>& loss,
                              const ModelParams<double>& params, const ModelParams<double>& analytic,
                              double step, double tol, size_t samples, uint64_t seed);

std::vector<ParamBlock> param_blocks(ModelParams<double>& params);

struct GradcheckOptions {
  uint64_t seed = 1;
  double step = 1e-5;
  double tol = 1e-6;
  size_t samples = 200;
  // Adds a constant to every analytic gradient entry. Used to confirm the
  // suite reports failures.
  double fault = 0.0;
};

struct LossCheck {
  std::string loss;
  CheckReport report;
};

/// Checks every loss term and the weighted total on a small random model
/// and batch drawn from `seed`.
std::vector<LossCheck> run_gradcheck_suite(const GradcheckOptions& opt);

/// Small architecture used by the suite.
Architecture gradcheck_architecture();

/// Random batch of `size` pairs; ids repeat so every anchor has a second
/// positive candidate for even rows.
PairedBatch<double> random_batch(const Architecture& arch, size_t size, uint64_t seed);

}  // namespace xmem

#endif  // XMEM_GRADCHECK_HPP_
