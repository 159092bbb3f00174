#ifndef XMEM_DATA_HPP_
#define XMEM_DATA_HPP_

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "xmem/batch.hpp"

namespace xmem {

/// Parameters of the synthetic paired dataset.
struct SyntheticSpec {
  size_t n_classes = 10;
  size_t n_ingredients = 40;
  size_t n_recipes = 500;
  size_t images_min = 1;
  size_t images_max = 3;
  size_t d_img = 32;
  size_t d_rcp = 48;
  size_t grid_g = 8;
  double noise_img = 0.1;
  double noise_rcp = 0.1;
  double prototype_scale = 1.0;
  // Scale of the ingredient-dependent component of image features. At 0,
  // image features carry class information only.
  double image_coupling = 0.5;
  uint64_t seed = 7;

  void validate() const;
  /// Applies one `key = value` setting; unknown keys throw ConfigError.
  void set(const std::string& key, const std::string& value);
  std::string to_text() const;
};

SyntheticSpec load_synthetic_spec(const std::string& path);

enum class Split { train, val, test };

const char* split_name(Split s);
Split parse_split(const std::string& s);

struct ImageRecord {
  uint64_t image_id = 0;
  std::vector<double> feat;
  std::vector<double> grid;
  bool operator==(const ImageRecord&) const = default;
};

struct RecipeRecord {
  uint64_t recipe_id = 0;
  int class_id = 0;
  std::vector<int> ingredients;  // sorted slot indices in [0, M)
  std::vector<double> recipe_feat;
  std::vector<ImageRecord> images;
  Split split = Split::train;
  bool operator==(const RecipeRecord&) const = default;
};

struct DatasetInfo {
  size_t n_classes = 0;
  size_t n_ingredients = 0;
  size_t d_img = 0;
  size_t d_rcp = 0;
  size_t grid_g = 0;
  bool operator==(const DatasetInfo&) const = default;
};

/// Immutable after construction; images reference their recipe by nesting.
struct Dataset {
  DatasetInfo info;
  std::vector<RecipeRecord> recipes;

  Dataset subset(std::span<const Split> splits) const;
  Dataset subset(Split s) const { return subset(std::span<const Split>(&s, 1)); }
  size_t image_count() const;
  size_t count(Split s) const;
  bool operator==(const Dataset&) const = default;
};

/// Class prototypes, class-conditional ingredient sets, and fixed linear
/// maps from the multi-hot into both feature spaces, then a 70/15/15 split
/// by recipe.
Dataset generate_dataset(const SyntheticSpec& spec);

/// JSON lines: one header record, then one record per recipe. A `.gz`
/// suffix selects gzip compression.
void write_dataset(const Dataset& ds, const std::string& path);

/// Validates every record; schema violations throw ParseError with the line.
Dataset load_dataset(const std::string& path);

struct PairRef {
  size_t recipe;  // index into Dataset::recipes
  size_t image;   // index into RecipeRecord::images
  bool operator==(const PairRef&) const = default;
};

/// One epoch of batches. A `many_to_one_mix` fraction of batches holds at
/// least two images of one recipe; other batches take one image per recipe.
/// The trailing partial batch is dropped.
std::vector<std::vector<PairRef>> make_batches(const Dataset& ds, size_t batch_size, uint64_t seed,
                                               double many_to_one_mix);

template <typename T>
PairedBatch<T> assemble_batch(const Dataset& ds, std::span<const PairRef> refs);

/// One pair per recipe using its lowest-id image.
std::vector<PairRef> canonical_pairs(const Dataset& ds);

}  // namespace xmem

#endif  // XMEM_DATA_HPP_
