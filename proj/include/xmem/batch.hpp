#ifndef XMEM_BATCH_HPP_
#define XMEM_BATCH_HPP_

#include <cstdint>
#include <vector>

#include "xmem/tensor.hpp"

namespace xmem {

/// A minibatch of image-recipe pairs. Row i of every tensor belongs to the
/// same pair; several rows may share a recipe id (many images per recipe).
template <typename T>
struct PairedBatch {
  std::vector<uint64_t> recipe_ids;
  std::vector<int> class_ids;
  Tensor<T> ingredients;   // B x M multi-hot, entries in {0,1}
  Tensor<T> recipe_feats;  // B x d_rcp
  Tensor<T> image_feats;   // B x d_img
  Tensor<T> grids;         // B x g*g real image grids in [-1,1]

  size_t size() const { return recipe_ids.size(); }
};

}  // namespace xmem

#endif  // XMEM_BATCH_HPP_
