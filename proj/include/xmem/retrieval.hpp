#ifndef XMEM_RETRIEVAL_HPP_
#define XMEM_RETRIEVAL_HPP_

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "xmem/data.hpp"
#include "xmem/model.hpp"
#include "xmem/tensor.hpp"

namespace xmem {

struct RankResult {
  size_t query = 0;
  size_t truth = 0;
  size_t rank = 0;  // 1-based
};

/// Rank of candidates[truth] by L2 distance to `query`. Equal distances
/// count against the truth when the other candidate has a lower index.
RankResult rank_one(std::span<const double> query, const Tensor<double>& candidates, size_t truth);

/// `n_subsets` independent draws of `subset_size` distinct indices.
std::vector<std::vector<size_t>> sample_subsets(size_t n_pairs, size_t subset_size, size_t n_subsets,
                                                uint64_t seed);

enum class Direction { im2rec, rec2im };
const char* direction_name(Direction d);

struct SubsetMetrics {
  double medr = 0;
  double r1 = 0, r5 = 0, r10 = 0;  // percent
  bool operator==(const SubsetMetrics&) const = default;
};

struct RetrievalReport {
  Direction direction = Direction::im2rec;
  size_t subset_size = 0;
  std::vector<SubsetMetrics> subsets;
  double medr_mean = 0;
  double medr_std = 0;  // sample standard deviation over subsets
  double r1 = 0, r5 = 0, r10 = 0;
  bool operator==(const RetrievalReport&) const = default;
};

/// Median with the midpoint convention for even counts.
double median_rank(std::vector<size_t> ranks);
SubsetMetrics metrics_from_ranks(std::span<const size_t> ranks);
RetrievalReport aggregate_report(Direction dir, size_t subset_size, std::vector<SubsetMetrics> subsets);

/// Row i of `images` and `recipes` form pair i. Returns {im2rec, rec2im}.
std::array<RetrievalReport, 2> evaluate(const Tensor<double>& images, const Tensor<double>& recipes,
                                        size_t subset_size, size_t n_subsets, uint64_t seed);

/// Embeds the canonical pair of every recipe in `ds` and evaluates.
template <typename T>
std::array<RetrievalReport, 2> evaluate_model(const ModelParams<T>& params, const Dataset& ds,
                                              bool normalize, size_t subset_size, size_t n_subsets,
                                              uint64_t seed);

/// Canonical-pair embeddings {images, recipes} as f64.
template <typename T>
std::array<Tensor<double>, 2> embed_pairs(const ModelParams<T>& params, const Dataset& ds,
                                          bool normalize);

// CSV columns: direction,subset_size,medr_mean,medr_std,r_at_1,r_at_5,r_at_10,subset
// where `subset` is "mean" on aggregate rows and the subset index otherwise.
void write_report(std::span<const RetrievalReport> reports, const std::string& path);
std::vector<RetrievalReport> read_report(const std::string& path);
std::string format_report_table(std::span<const RetrievalReport> reports);

/// Embedding interchange file: header `id,modality,dim,values...`, then one
/// row per item; modality is image or recipe. Pairs are matched by id; for
/// ids with several image rows the first one is used.
struct EmbeddingSet {
  std::vector<uint64_t> ids;
  Tensor<double> images;
  Tensor<double> recipes;
};

void write_embeddings(const EmbeddingSet& set, const std::string& path);
EmbeddingSet read_embeddings(const std::string& path);

}  // namespace xmem

#endif  // XMEM_RETRIEVAL_HPP_
