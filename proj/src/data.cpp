#include "xmem/data.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "json.hpp"
#include "xmem/errors.hpp"
#include "xmem/kv.hpp"

namespace xmem {

using nlohmann::json;

void SyntheticSpec::validate() const {
  if (n_classes < 2) throw ConfigError("n_classes must be >= 2");
  if (n_ingredients < n_classes) throw ConfigError("n_ingredients must be >= n_classes");
  if (n_recipes < 1) throw ConfigError("n_recipes must be >= 1");
  if (images_min < 1 || images_max < images_min) {
    throw ConfigError("images per recipe must satisfy 1 <= images_min <= images_max");
  }
  if (d_img == 0 || d_rcp == 0 || grid_g == 0) throw ConfigError("dimensions must be positive");
  if (!(noise_img >= 0) || !(noise_rcp >= 0)) throw ConfigError("noise levels must be >= 0");
  if (!(prototype_scale >= 0) || !(image_coupling >= 0)) {
    throw ConfigError("prototype_scale and image_coupling must be >= 0");
  }
}

void SyntheticSpec::set(const std::string& key, const std::string& value) {
  if (key == "n_classes") n_classes = kv_uint(key, value);
  else if (key == "n_ingredients") n_ingredients = kv_uint(key, value);
  else if (key == "n_recipes") n_recipes = kv_uint(key, value);
  else if (key == "images_min") images_min = kv_uint(key, value);
  else if (key == "images_max") images_max = kv_uint(key, value);
  else if (key == "d_img") d_img = kv_uint(key, value);
  else if (key == "d_rcp") d_rcp = kv_uint(key, value);
  else if (key == "grid_g") grid_g = kv_uint(key, value);
  else if (key == "noise_img") noise_img = kv_double(key, value);
  else if (key == "noise_rcp") noise_rcp = kv_double(key, value);
  else if (key == "prototype_scale") prototype_scale = kv_double(key, value);
  else if (key == "image_coupling") image_coupling = kv_double(key, value);
  else if (key == "seed") seed = kv_uint(key, value);
  else throw ConfigError("unknown dataset spec key '" + key + "'");
}

std::string SyntheticSpec::to_text() const {
  std::ostringstream o;
  o << "n_classes = " << n_classes << "\n"
    << "n_ingredients = " << n_ingredients << "\n"
    << "n_recipes = " << n_recipes << "\n"
    << "images_min = " << images_min << "\n"
    << "images_max = " << images_max << "\n"
    << "d_img = " << d_img << "\n"
    << "d_rcp = " << d_rcp << "\n"
    << "grid_g = " << grid_g << "\n"
    << "noise_img = " << format_double(noise_img) << "\n"
    << "noise_rcp = " << format_double(noise_rcp) << "\n"
    << "prototype_scale = " << format_double(prototype_scale) << "\n"
    << "image_coupling = " << format_double(image_coupling) << "\n"
    << "seed = " << seed << "\n";
  return o.str();
}

SyntheticSpec load_synthetic_spec(const std::string& path) {
  SyntheticSpec spec;
  for (const auto& [k, v] : parse_kv_file(path)) spec.set(k, v);
  spec.validate();
  return spec;
}

const char* split_name(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw ConfigError("unknown split '" + s + "'");
}

Dataset Dataset::subset(std::span<const Split> splits) const {
  Dataset out;
  out.info = info;
  for (const auto& r : recipes) {
    if (std::find(splits.begin(), splits.end(), r.split) != splits.end()) out.recipes.push_back(r);
  }
  return out;
}

size_t Dataset::image_count() const {
  size_t n = 0;
  for (const auto& r : recipes) n += r.images.size();
  return n;
}

size_t Dataset::count(Split s) const {
  return static_cast<size_t>(
      std::count_if(recipes.begin(), recipes.end(), [&](const RecipeRecord& r) { return r.split == s; }));
}

Dataset generate_dataset(const SyntheticSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const size_t C = spec.n_classes, M = spec.n_ingredients, g2 = spec.grid_g * spec.grid_g;

  // Per-class draws: prototypes, a typical-ingredient set, a grid pattern.
  std::vector<std::vector<double>> proto_img(C), proto_rcp(C), pattern(C);
  std::vector<std::vector<double>> ingredient_prob(C, std::vector<double>(M, 0.0));
  const size_t typical = std::min(M, std::max<size_t>(1, 2 * M / C));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (size_t c = 0; c < C; ++c) {
    for (size_t k = 0; k < spec.d_img; ++k) proto_img[c].push_back(spec.prototype_scale * gauss(rng));
    for (size_t k = 0; k < spec.d_rcp; ++k) proto_rcp[c].push_back(spec.prototype_scale * gauss(rng));
    for (size_t k = 0; k < g2; ++k) pattern[c].push_back(-0.8 + 1.6 * unit(rng));
    std::vector<size_t> slots(M);
    std::iota(slots.begin(), slots.end(), 0);
    std::shuffle(slots.begin(), slots.end(), rng);
    // Each typical slot is active with probability 1/2, so M/C slots on average.
    for (size_t k = 0; k < typical; ++k) ingredient_prob[c][slots[k]] = 0.5;
  }
  // Fixed linear maps from the multi-hot to recipe and image features.
  std::vector<double> map_rcp(spec.d_rcp * M), map_img(spec.d_img * M);
  for (auto& a : map_rcp) a = gauss(rng);
  for (auto& b : map_img) b = spec.image_coupling * gauss(rng);

  Dataset ds;
  ds.info = {C, M, spec.d_img, spec.d_rcp, spec.grid_g};
  std::uniform_int_distribution<size_t> pick_class(0, C - 1);
  std::uniform_int_distribution<size_t> pick_count(spec.images_min, spec.images_max);
  uint64_t next_image_id = 0;
  for (size_t r = 0; r < spec.n_recipes; ++r) {
    RecipeRecord rec;
    rec.recipe_id = r;
    const size_t c = pick_class(rng);
    rec.class_id = static_cast<int>(c);
    std::vector<double> mh(M, 0.0);
    for (size_t k = 0; k < M; ++k) {
      if (ingredient_prob[c][k] > 0 && unit(rng) < ingredient_prob[c][k]) {
        mh[k] = 1.0;
        rec.ingredients.push_back(static_cast<int>(k));
      }
    }
    for (size_t i = 0; i < spec.d_rcp; ++i) {
      double v = proto_rcp[c][i];
      for (size_t k = 0; k < M; ++k) v += map_rcp[i * M + k] * mh[k];
      rec.recipe_feat.push_back(v + spec.noise_rcp * gauss(rng));
    }
    std::vector<double> img_mean(spec.d_img);
    for (size_t i = 0; i < spec.d_img; ++i) {
      double v = proto_img[c][i];
      for (size_t k = 0; k < M; ++k) v += map_img[i * M + k] * mh[k];
      img_mean[i] = v;
    }
    const size_t n_images = pick_count(rng);
    for (size_t j = 0; j < n_images; ++j) {
      ImageRecord img;
      img.image_id = next_image_id++;
      for (size_t i = 0; i < spec.d_img; ++i) img.feat.push_back(img_mean[i] + spec.noise_img * gauss(rng));
      for (size_t k = 0; k < g2; ++k) {
        img.grid.push_back(std::clamp(pattern[c][k] + spec.noise_img * gauss(rng), -1.0, 1.0));
      }
      rec.images.push_back(std::move(img));
    }
    ds.recipes.push_back(std::move(rec));
  }

  std::vector<size_t> order(spec.n_recipes);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_train = static_cast<size_t>(std::llround(0.70 * static_cast<double>(spec.n_recipes)));
  const auto n_val = static_cast<size_t>(std::llround(0.15 * static_cast<double>(spec.n_recipes)));
  for (size_t i = 0; i < order.size(); ++i) {
    ds.recipes[order[i]].split = i < n_train ? Split::train : i < n_train + n_val ? Split::val : Split::test;
  }
  return ds;
}

namespace {

bool has_gz_suffix(const std::string& path) {
  return path.size() >= 3 && path.compare(path.size() - 3, 3, ".gz") == 0;
}

json header_json(const DatasetInfo& info) {
  return {{"format", "xmem-dataset"}, {"version", 1},          {"n_classes", info.n_classes},
          {"n_ingredients", info.n_ingredients}, {"d_img", info.d_img}, {"d_rcp", info.d_rcp},
          {"grid_g", info.grid_g}};
}

json recipe_json(const RecipeRecord& r) {
  json images = json::array();
  for (const auto& img : r.images) {
    images.push_back({{"image_id", img.image_id}, {"feat", img.feat}, {"grid", img.grid}});
  }
  return {{"recipe_id", r.recipe_id}, {"class_id", r.class_id},     {"split", split_name(r.split)},
          {"ingredients", r.ingredients}, {"recipe_feat", r.recipe_feat}, {"images", images}};
}

template <typename F>
auto field(const json& j, const char* key, size_t line, F&& convert) {
  if (!j.contains(key)) throw ParseError(std::string("missing field '") + key + "'", line);
  try {
    return convert(j.at(key));
  } catch (const json::exception& e) {
    throw ParseError(std::string("field '") + key + "': " + e.what(), line);
  }
}

std::vector<double> real_vector(const json& j, const char* key, size_t expected, size_t line) {
  auto v = field(j, key, line, [](const json& x) { return x.get<std::vector<double>>(); });
  if (v.size() != expected) {
    throw ParseError(std::string("field '") + key + "' has length " + std::to_string(v.size()) +
                         ", expected " + std::to_string(expected),
                     line);
  }
  for (double x : v) {
    if (!std::isfinite(x)) throw ParseError(std::string("field '") + key + "' is not finite", line);
  }
  return v;
}

RecipeRecord parse_recipe(const json& j, const DatasetInfo& info, size_t line) {
  if (!j.is_object()) throw ParseError("record is not an object", line);
  RecipeRecord r;
  r.recipe_id = field(j, "recipe_id", line, [](const json& x) { return x.get<uint64_t>(); });
  r.class_id = field(j, "class_id", line, [](const json& x) { return x.get<int>(); });
  if (r.class_id < 0 || static_cast<size_t>(r.class_id) >= info.n_classes) {
    throw ParseError("class_id " + std::to_string(r.class_id) + " out of range", line);
  }
  const auto split = field(j, "split", line, [](const json& x) { return x.get<std::string>(); });
  try {
    r.split = parse_split(split);
  } catch (const ConfigError& e) {
    throw ParseError(e.what(), line);
  }
  r.ingredients = field(j, "ingredients", line, [](const json& x) { return x.get<std::vector<int>>(); });
  std::set<int> seen;
  for (int k : r.ingredients) {
    if (k < 0 || static_cast<size_t>(k) >= info.n_ingredients || !seen.insert(k).second) {
      throw ParseError("ingredient index " + std::to_string(k) + " invalid or repeated", line);
    }
  }
  std::sort(r.ingredients.begin(), r.ingredients.end());
  r.recipe_feat = real_vector(j, "recipe_feat", info.d_rcp, line);
  const json images = field(j, "images", line, [](const json& x) { return x; });
  if (!images.is_array() || images.empty()) throw ParseError("'images' must be a non-empty array", line);
  for (const auto& ij : images) {
    if (!ij.is_object()) throw ParseError("image entry is not an object", line);
    ImageRecord img;
    img.image_id = field(ij, "image_id", line, [](const json& x) { return x.get<uint64_t>(); });
    img.feat = real_vector(ij, "feat", info.d_img, line);
    img.grid = real_vector(ij, "grid", info.grid_g * info.grid_g, line);
    r.images.push_back(std::move(img));
  }
  return r;
}

DatasetInfo parse_header(const json& j, size_t line) {
  if (!j.is_object() || j.value("format", "") != "xmem-dataset") {
    throw ParseError("first record must be the dataset header", line);
  }
  auto count = [&](const char* key) {
    return field(j, key, line, [](const json& x) { return x.get<size_t>(); });
  };
  DatasetInfo info{count("n_classes"), count("n_ingredients"), count("d_img"), count("d_rcp"),
                   count("grid_g")};
  if (info.n_classes < 2 || info.n_ingredients == 0 || info.d_img == 0 || info.d_rcp == 0 ||
      info.grid_g == 0) {
    throw ParseError("header dimensions must be positive (n_classes >= 2)", line);
  }
  return info;
}

}  // namespace

void write_dataset(const Dataset& ds, const std::string& path) {
  std::string text = header_json(ds.info).dump() + "\n";
  for (const auto& r : ds.recipes) text += recipe_json(r).dump() + "\n";
  gzFile f = gzopen(path.c_str(), has_gz_suffix(path) ? "wb9" : "wbT");
  if (!f) throw IoError("cannot write dataset '" + path + "'");
  const int written = gzwrite(f, text.data(), static_cast<unsigned>(text.size()));
  const int closed = gzclose(f);
  if (written != static_cast<int>(text.size()) || closed != Z_OK) {
    throw IoError("write failed for '" + path + "'");
  }
}

Dataset load_dataset(const std::string& path) {
  gzFile f = gzopen(path.c_str(), "rb");
  if (!f) throw IoError("dataset file not found: '" + path + "'");
  std::string text;
  char buf[1 << 16];
  int n = 0;
  while ((n = gzread(f, buf, sizeof(buf))) > 0) text.append(buf, static_cast<size_t>(n));
  const bool failed = n < 0;
  gzclose(f);
  if (failed) throw IoError("read failed for '" + path + "'");

  Dataset ds;
  std::istringstream in(text);
  std::string line;
  size_t lineno = 0;
  bool have_header = false;
  std::set<uint64_t> recipe_ids, image_ids;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError(std::string("malformed JSON: ") + e.what(), lineno);
    }
    if (!have_header) {
      ds.info = parse_header(j, lineno);
      have_header = true;
      continue;
    }
    RecipeRecord r = parse_recipe(j, ds.info, lineno);
    if (!recipe_ids.insert(r.recipe_id).second) {
      throw ParseError("duplicate recipe_id " + std::to_string(r.recipe_id), lineno);
    }
    for (const auto& img : r.images) {
      if (!image_ids.insert(img.image_id).second) {
        throw ParseError("duplicate image_id " + std::to_string(img.image_id), lineno);
      }
    }
    ds.recipes.push_back(std::move(r));
  }
  if (!have_header) throw ParseError("empty dataset file", lineno + 1);
  return ds;
}

std::vector<std::vector<PairRef>> make_batches(const Dataset& ds, size_t batch_size, uint64_t seed,
                                               double many_to_one_mix) {
  if (batch_size < 2) throw std::invalid_argument("make_batches: batch_size must be >= 2");
  if (batch_size > ds.image_count()) {
    throw std::invalid_argument("make_batches: batch_size " + std::to_string(batch_size) +
                                " exceeds dataset size " + std::to_string(ds.image_count()));
  }
  if (!(many_to_one_mix >= 0 && many_to_one_mix <= 1)) {
    throw std::invalid_argument("make_batches: many_to_one_mix must be in [0,1]");
  }
  std::vector<size_t> multi;
  for (size_t i = 0; i < ds.recipes.size(); ++i) {
    if (ds.recipes[i].images.size() >= 2) multi.push_back(i);
  }
  if (many_to_one_mix > 0 && multi.empty()) {
    throw std::invalid_argument("make_batches: many_to_one_mix > 0 but no recipe has two images");
  }

  std::mt19937_64 rng(seed);
  std::vector<size_t> order(ds.recipes.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  std::vector<std::vector<PairRef>> batches;
  size_t cursor = 0;
  while (true) {
    std::vector<PairRef> batch;
    const bool many = unit(rng) < many_to_one_mix;
    size_t seeded = ds.recipes.size();  // recipe placed up front in a many-to-one batch
    if (many) {
      seeded = multi[std::uniform_int_distribution<size_t>(0, multi.size() - 1)(rng)];
      batch.push_back({seeded, 0});
      batch.push_back({seeded, 1});
    }
    while (batch.size() < batch_size && cursor < order.size()) {
      const size_t r = order[cursor++];
      if (r == seeded) continue;
      const size_t n_img = ds.recipes[r].images.size();
      if (many) {
        for (size_t j = 0; j < n_img && batch.size() < batch_size; ++j) batch.push_back({r, j});
      } else {
        batch.push_back({r, std::uniform_int_distribution<size_t>(0, n_img - 1)(rng)});
      }
    }
    if (batch.size() < batch_size) break;
    batches.push_back(std::move(batch));
  }
  return batches;
}

template <typename T>
PairedBatch<T> assemble_batch(const Dataset& ds, std::span<const PairRef> refs) {
  const size_t n = refs.size();
  const auto& info = ds.info;
  PairedBatch<T> b;
  b.ingredients = Tensor<T>(n, info.n_ingredients);
  b.recipe_feats = Tensor<T>(n, info.d_rcp);
  b.image_feats = Tensor<T>(n, info.d_img);
  b.grids = Tensor<T>(n, info.grid_g * info.grid_g);
  for (size_t i = 0; i < n; ++i) {
    const auto& rec = ds.recipes.at(refs[i].recipe);
    const auto& img = rec.images.at(refs[i].image);
    b.recipe_ids.push_back(rec.recipe_id);
    b.class_ids.push_back(rec.class_id);
    for (int k : rec.ingredients) b.ingredients(i, static_cast<size_t>(k)) = T(1);
    std::copy(rec.recipe_feat.begin(), rec.recipe_feat.end(), b.recipe_feats.row(i).begin());
    std::copy(img.feat.begin(), img.feat.end(), b.image_feats.row(i).begin());
    std::copy(img.grid.begin(), img.grid.end(), b.grids.row(i).begin());
  }
  return b;
}

std::vector<PairRef> canonical_pairs(const Dataset& ds) {
  std::vector<PairRef> out;
  for (size_t r = 0; r < ds.recipes.size(); ++r) {
    const auto& imgs = ds.recipes[r].images;
    const auto it = std::min_element(imgs.begin(), imgs.end(), [](const ImageRecord& a, const ImageRecord& b) {
      return a.image_id < b.image_id;
    });
    out.push_back({r, static_cast<size_t>(it - imgs.begin())});
  }
  return out;
}

template PairedBatch<float> assemble_batch(const Dataset&, std::span<const PairRef>);
template PairedBatch<double> assemble_batch(const Dataset&, std::span<const PairRef>);

}  // namespace xmem
