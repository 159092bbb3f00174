#ifndef XMEM_KV_HPP_
#define XMEM_KV_HPP_

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace xmem {

/// Parses `key = value` lines; `#` starts a comment. Malformed lines throw
/// ParseError with the line number.
std::vector<std::pair<std::string, std::string>> parse_kv(const std::string& text);
std::vector<std::pair<std::string, std::string>> parse_kv_file(const std::string& path);

// Value conversions; failures throw ConfigError naming `key`.
double kv_double(const std::string& key, const std::string& value);
uint64_t kv_uint(const std::string& key, const std::string& value);
bool kv_bool(const std::string& key, const std::string& value);

/// Shortest decimal text that round-trips.
std::string format_double(double v);

}  // namespace xmem

#endif  // XMEM_KV_HPP_
