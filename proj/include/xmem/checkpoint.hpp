#ifndef XMEM_CHECKPOINT_HPP_
#define XMEM_CHECKPOINT_HPP_

#include <string>

#include "xmem/model.hpp"
#include "xmem/precision.hpp"

namespace xmem {

// Binary layout, all integers and reals little-endian:
//   "XMEM1"                      5 bytes
//   precision tag                u8, bytes per real (4 or 8)
//   group count                  u32
//   per group (manifest order):  u16 name length, name bytes, u8 activation,
//                                u32 rows, u32 cols, u32 bias length
//   per group (same order):      rows*cols weights (row-major), then bias
inline constexpr char kCheckpointMagic[] = "XMEM1";

template <typename T>
void save_checkpoint(const ModelParams<T>& params, const std::string& path);

/// Reads the precision tag only.
Precision checkpoint_precision(const std::string& path);

/// Throws ParseError if the file is malformed or stored in the other precision.
template <typename T>
ModelParams<T> load_checkpoint(const std::string& path);

}  // namespace xmem

#endif  // XMEM_CHECKPOINT_HPP_
