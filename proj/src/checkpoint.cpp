#include "xmem/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>

#include "xmem/errors.hpp"

namespace xmem {

Precision parse_precision(const std::string& s) {
  if (s == "f32") return Precision::f32;
  if (s == "f64") return Precision::f64;
  throw ConfigError("precision must be f32 or f64, got '" + s + "'");
}

const char* precision_name(Precision p) { return p == Precision::f32 ? "f32" : "f64"; }

namespace {

class Writer {
 public:
  template <typename U>
  void uint(U v) {
    for (size_t i = 0; i < sizeof(U); ++i) bytes_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void real(float v) { uint(std::bit_cast<uint32_t>(v)); }
  void real(double v) { uint(std::bit_cast<uint64_t>(v)); }
  void raw(const std::string& s) { bytes_.insert(bytes_.end(), s.begin(), s.end()); }
  const std::vector<char>& bytes() const { return bytes_; }

 private:
  std::vector<char> bytes_;
};

class Reader {
 public:
  explicit Reader(std::vector<char> bytes) : bytes_(std::move(bytes)) {}

  template <typename U>
  U uint() {
    need(sizeof(U));
    U v = 0;
    for (size_t i = 0; i < sizeof(U); ++i) {
      v |= static_cast<U>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(U);
    return v;
  }
  template <typename T>
  T real() {
    if constexpr (sizeof(T) == 4) {
      return std::bit_cast<float>(uint<uint32_t>());
    } else {
      return std::bit_cast<double>(uint<uint64_t>());
    }
  }
  std::string raw(size_t n) {
    need(n);
    std::string s(bytes_.data() + pos_, n);
    pos_ += n;
    return s;
  }
  bool at_end() const { return pos_ == bytes_.size(); }

 private:
  void need(size_t n) const {
    if (pos_ + n > bytes_.size()) throw ParseError("checkpoint truncated at byte " + std::to_string(pos_), 0);
  }
  std::vector<char> bytes_;
  size_t pos_ = 0;
};

std::vector<char> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path + "'");
  return std::vector<char>(std::istreambuf_iterator<char>(in), {});
}

Precision read_header(Reader& r) {
  if (r.raw(5) != kCheckpointMagic) throw ParseError("not a checkpoint (bad magic)", 0);
  const auto tag = r.uint<uint8_t>();
  if (tag == 4) return Precision::f32;
  if (tag == 8) return Precision::f64;
  throw ParseError("unknown precision tag " + std::to_string(tag), 0);
}

struct ManifestEntry {
  std::string name;
  Activation act;
  uint32_t rows, cols, bias;
};

const std::map<std::string, Module>& module_by_name() {
  static const std::map<std::string, Module> m = {
      {"enc_image", Module::enc_image},         {"enc_recipe", Module::enc_recipe},
      {"shared_fc", Module::shared_fc},         {"critic_modality", Module::critic_modality},
      {"gen_r2i", Module::gen_r2i},             {"disc_r2i", Module::disc_r2i},
      {"cls_r2i", Module::cls_r2i},             {"ing_predictor", Module::ing_predictor},
      {"cls_i2r", Module::cls_i2r}};
  return m;
}

}  // namespace

template <typename T>
void save_checkpoint(const ModelParams<T>& params, const std::string& path) {
  Writer w;
  w.raw(kCheckpointMagic);
  w.uint(static_cast<uint8_t>(sizeof(T)));
  uint32_t count = 0;
  params.for_each_group([&](Module, const ParamGroup<T>&, Activation) { ++count; });
  w.uint(count);
  params.for_each_group([&](Module, const ParamGroup<T>& g, Activation a) {
    w.uint(static_cast<uint16_t>(g.name.size()));
    w.raw(g.name);
    w.uint(static_cast<uint8_t>(a));
    w.uint(static_cast<uint32_t>(g.weights.rows()));
    w.uint(static_cast<uint32_t>(g.weights.cols()));
    w.uint(static_cast<uint32_t>(g.bias.size()));
  });
  params.for_each_group([&](Module, const ParamGroup<T>& g, Activation) {
    for (T v : g.weights.values()) w.real(v);
    for (T v : g.bias) w.real(v);
  });
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint '" + path + "'");
  out.write(w.bytes().data(), static_cast<std::streamsize>(w.bytes().size()));
  if (!out) throw IoError("write failed for '" + path + "'");
}

Precision checkpoint_precision(const std::string& path) {
  std::vector<char> bytes = read_file(path);
  bytes.resize(std::min<size_t>(bytes.size(), 6));
  Reader r(std::move(bytes));
  return read_header(r);
}

template <typename T>
ModelParams<T> load_checkpoint(const std::string& path) {
  Reader r(read_file(path));
  const Precision p = read_header(r);
  if (p != precision_of<T>()) {
    throw ParseError(std::string("checkpoint stored in ") + precision_name(p) + ", requested " +
                         precision_name(precision_of<T>()),
                     0);
  }
  const auto count = r.uint<uint32_t>();
  std::vector<ManifestEntry> manifest;
  for (uint32_t i = 0; i < count; ++i) {
    ManifestEntry e;
    e.name = r.raw(r.uint<uint16_t>());
    const auto act = r.uint<uint8_t>();
    if (act > static_cast<uint8_t>(Activation::leaky_relu)) {
      throw ParseError("group '" + e.name + "' has unknown activation", 0);
    }
    e.act = static_cast<Activation>(act);
    e.rows = r.uint<uint32_t>();
    e.cols = r.uint<uint32_t>();
    e.bias = r.uint<uint32_t>();
    if (e.bias != e.cols) throw ParseError("group '" + e.name + "' bias length != cols", 0);
    manifest.push_back(std::move(e));
  }

  ModelParams<T> params;
  bool have_fc = false;
  for (const auto& e : manifest) {
    Tensor<T> w(e.rows, e.cols);
    for (auto& v : w.values()) v = r.template real<T>();
    std::vector<T> b(e.bias);
    for (auto& v : b) v = r.template real<T>();
    ParamGroup<T> group{e.name, std::move(w), std::move(b)};

    const auto dot_pos = e.name.find('.');
    const auto it = module_by_name().find(e.name.substr(0, dot_pos));
    if (it == module_by_name().end()) throw ParseError("unknown group '" + e.name + "'", 0);
    if (it->second == Module::shared_fc) {
      params.shared_fc = std::move(group);
      have_fc = true;
      continue;
    }
    auto& mlp = params.mlp(it->second);
    if (dot_pos == std::string::npos || e.name.substr(dot_pos + 1) != std::to_string(mlp.layers.size())) {
      throw ParseError("group '" + e.name + "' out of manifest order", 0);
    }
    if (!mlp.layers.empty() && mlp.layers.back().params.fan_out() != group.fan_in()) {
      throw ParseError("group '" + e.name + "' does not chain with previous layer", 0);
    }
    mlp.layers.push_back({std::move(group), e.act});
  }
  if (!r.at_end()) throw ParseError("trailing bytes after parameter data", 0);
  if (!have_fc) throw ParseError("checkpoint has no shared_fc group", 0);
  for (Module m : {Module::enc_image, Module::enc_recipe, Module::critic_modality, Module::gen_r2i,
                   Module::disc_r2i, Module::cls_r2i, Module::ing_predictor, Module::cls_i2r}) {
    if (params.mlp(m).layers.empty()) {
      throw ParseError(std::string("checkpoint missing module ") + module_name(m), 0);
    }
  }
  return params;
}

template void save_checkpoint(const ModelParams<float>&, const std::string&);
template void save_checkpoint(const ModelParams<double>&, const std::string&);
template ModelParams<float> load_checkpoint(const std::string&);
template ModelParams<double> load_checkpoint(const std::string&);

}  // namespace xmem
