#ifndef XMEM_PRECISION_HPP_
#define XMEM_PRECISION_HPP_

#include <string>

namespace xmem {

/// Numeric run mode. Fixed for the duration of a run; tests and gradient
/// checks always use f64.
enum class Precision { f32, f64 };

Precision parse_precision(const std::string& s);
const char* precision_name(Precision p);

template <typename T>
constexpr Precision precision_of();
template <>
constexpr Precision precision_of<float>() { return Precision::f32; }
template <>
constexpr Precision precision_of<double>() { return Precision::f64; }

}  // namespace xmem

#endif  // XMEM_PRECISION_HPP_
