#include "xmem/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

#include "xmem/errors.hpp"
#include "xmem/kv.hpp"

namespace xmem {

RankResult rank_one(std::span<const double> query, const Tensor<double>& candidates, size_t truth) {
  if (candidates.rows() == 0) throw std::invalid_argument("rank_one: empty candidate set");
  if (truth >= candidates.rows()) throw std::out_of_range("rank_one: truth index outside candidates");
  const double d_truth = euclidean_distance(query, candidates.row(truth));
  size_t rank = 1;
  for (size_t j = 0; j < candidates.rows(); ++j) {
    if (j == truth) continue;
    const double dj = euclidean_distance(query, candidates.row(j));
    if (dj < d_truth || (dj == d_truth && j < truth)) ++rank;
  }
  return {0, truth, rank};
}

std::vector<std::vector<size_t>> sample_subsets(size_t n_pairs, size_t subset_size, size_t n_subsets,
                                                uint64_t seed) {
  if (subset_size > n_pairs) {
    throw std::invalid_argument("sample_subsets: subset size " + std::to_string(subset_size) +
                                " exceeds " + std::to_string(n_pairs) + " pairs");
  }
  std::mt19937_64 rng(seed);
  std::vector<std::vector<size_t>> out;
  std::vector<size_t> pool(n_pairs);
  for (size_t s = 0; s < n_subsets; ++s) {
    std::iota(pool.begin(), pool.end(), 0);
    // Partial Fisher-Yates: the first subset_size slots are a uniform sample.
    for (size_t i = 0; i < subset_size; ++i) {
      const size_t j = std::uniform_int_distribution<size_t>(i, n_pairs - 1)(rng);
      std::swap(pool[i], pool[j]);
    }
    out.emplace_back(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(subset_size));
  }
  return out;
}

const char* direction_name(Direction d) { return d == Direction::im2rec ? "im2rec" : "rec2im"; }

double median_rank(std::vector<size_t> ranks) {
  if (ranks.empty()) throw std::invalid_argument("median_rank: no ranks");
  std::sort(ranks.begin(), ranks.end());
  const size_t n = ranks.size();
  if (n % 2 == 1) return static_cast<double>(ranks[n / 2]);
  return 0.5 * (static_cast<double>(ranks[n / 2 - 1]) + static_cast<double>(ranks[n / 2]));
}

SubsetMetrics metrics_from_ranks(std::span<const size_t> ranks) {
  SubsetMetrics m;
  m.medr = median_rank({ranks.begin(), ranks.end()});
  auto recall = [&](size_t k) {
    const auto hits = std::count_if(ranks.begin(), ranks.end(), [&](size_t r) { return r <= k; });
    return 100.0 * static_cast<double>(hits) / static_cast<double>(ranks.size());
  };
  m.r1 = recall(1);
  m.r5 = recall(5);
  m.r10 = recall(10);
  return m;
}

RetrievalReport aggregate_report(Direction dir, size_t subset_size, std::vector<SubsetMetrics> subsets) {
  if (subsets.empty()) throw std::invalid_argument("aggregate_report: no subsets");
  RetrievalReport r;
  r.direction = dir;
  r.subset_size = subset_size;
  const double n = static_cast<double>(subsets.size());
  for (const auto& s : subsets) {
    r.medr_mean += s.medr;
    r.r1 += s.r1;
    r.r5 += s.r5;
    r.r10 += s.r10;
  }
  r.medr_mean /= n;
  r.r1 /= n;
  r.r5 /= n;
  r.r10 /= n;
  if (subsets.size() > 1) {
    double ss = 0;
    for (const auto& s : subsets) ss += (s.medr - r.medr_mean) * (s.medr - r.medr_mean);
    r.medr_std = std::sqrt(ss / (n - 1));
  }
  r.subsets = std::move(subsets);
  return r;
}

std::array<RetrievalReport, 2> evaluate(const Tensor<double>& images, const Tensor<double>& recipes,
                                        size_t subset_size, size_t n_subsets, uint64_t seed) {
  if (!images.same_shape(recipes)) {
    throw DimensionError("evaluate: image embeddings " + images.shape_str() + " vs recipe embeddings " +
                         recipes.shape_str());
  }
  const auto subsets = sample_subsets(images.rows(), subset_size, n_subsets, seed);
  std::array<std::vector<SubsetMetrics>, 2> per_dir;
  for (const auto& idx : subsets) {
    Tensor<double> sub_img(idx.size(), images.cols()), sub_rcp(idx.size(), recipes.cols());
    for (size_t i = 0; i < idx.size(); ++i) {
      std::copy_n(images.row(idx[i]).begin(), images.cols(), sub_img.row(i).begin());
      std::copy_n(recipes.row(idx[i]).begin(), recipes.cols(), sub_rcp.row(i).begin());
    }
    std::vector<size_t> im2rec(idx.size()), rec2im(idx.size());
    for (size_t q = 0; q < idx.size(); ++q) {
      im2rec[q] = rank_one(sub_img.row(q), sub_rcp, q).rank;
      rec2im[q] = rank_one(sub_rcp.row(q), sub_img, q).rank;
    }
    per_dir[0].push_back(metrics_from_ranks(im2rec));
    per_dir[1].push_back(metrics_from_ranks(rec2im));
  }
  return {aggregate_report(Direction::im2rec, subset_size, std::move(per_dir[0])),
          aggregate_report(Direction::rec2im, subset_size, std::move(per_dir[1]))};
}

template <typename T>
std::array<Tensor<double>, 2> embed_pairs(const ModelParams<T>& params, const Dataset& ds,
                                          bool normalize) {
  const auto refs = canonical_pairs(ds);
  const PairedBatch<T> b = assemble_batch<T>(ds, refs);
  return {tensor_cast<double>(embed_images(params, b.image_feats, normalize)),
          tensor_cast<double>(embed_recipes(params, b.recipe_feats, normalize))};
}

template <typename T>
std::array<RetrievalReport, 2> evaluate_model(const ModelParams<T>& params, const Dataset& ds,
                                              bool normalize, size_t subset_size, size_t n_subsets,
                                              uint64_t seed) {
  const auto [img, rcp] = embed_pairs(params, ds, normalize);
  return evaluate(img, rcp, subset_size, n_subsets, seed);
}

template std::array<Tensor<double>, 2> embed_pairs(const ModelParams<float>&, const Dataset&, bool);
template std::array<Tensor<double>, 2> embed_pairs(const ModelParams<double>&, const Dataset&, bool);
template std::array<RetrievalReport, 2> evaluate_model(const ModelParams<float>&, const Dataset&, bool,
                                                       size_t, size_t, uint64_t);
template std::array<RetrievalReport, 2> evaluate_model(const ModelParams<double>&, const Dataset&, bool,
                                                       size_t, size_t, uint64_t);

namespace {

constexpr const char* kReportHeader = "direction,subset_size,medr_mean,medr_std,r_at_1,r_at_5,r_at_10,subset";

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

Direction parse_direction(const std::string& s, size_t line) {
  if (s == "im2rec") return Direction::im2rec;
  if (s == "rec2im") return Direction::rec2im;
  throw ParseError("unknown direction '" + s + "'", line);
}

double parse_number(const std::string& s, size_t line) {
  try {
    return kv_double("value", s);
  } catch (const ConfigError&) {
    throw ParseError("invalid number '" + s + "'", line);
  }
}

}  // namespace

void write_report(std::span<const RetrievalReport> reports, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write report '" + path + "'");
  out << kReportHeader << "\n";
  auto row = [&](const RetrievalReport& r, double medr, double std, double r1, double r5, double r10,
                 const std::string& subset) {
    out << direction_name(r.direction) << ',' << r.subset_size << ',' << format_double(medr) << ','
        << format_double(std) << ',' << format_double(r1) << ',' << format_double(r5) << ','
        << format_double(r10) << ',' << subset << "\n";
  };
  for (const auto& r : reports) {
    row(r, r.medr_mean, r.medr_std, r.r1, r.r5, r.r10, "mean");
    for (size_t i = 0; i < r.subsets.size(); ++i) {
      const auto& s = r.subsets[i];
      row(r, s.medr, 0.0, s.r1, s.r5, s.r10, std::to_string(i));
    }
  }
  if (!out) throw IoError("write failed for '" + path + "'");
}

std::vector<RetrievalReport> read_report(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open report '" + path + "'");
  std::string line;
  if (!std::getline(in, line) || line != kReportHeader) throw ParseError("bad report header", 1);
  std::vector<RetrievalReport> out;
  size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto c = split_csv(line);
    if (c.size() != 8) throw ParseError("expected 8 columns", lineno);
    const Direction dir = parse_direction(c[0], lineno);
    const auto subset_size = static_cast<size_t>(parse_number(c[1], lineno));
    const double medr = parse_number(c[2], lineno), sd = parse_number(c[3], lineno);
    const double r1 = parse_number(c[4], lineno), r5 = parse_number(c[5], lineno),
                 r10 = parse_number(c[6], lineno);
    if (c[7] == "mean") {
      RetrievalReport r;
      r.direction = dir;
      r.subset_size = subset_size;
      r.medr_mean = medr;
      r.medr_std = sd;
      r.r1 = r1;
      r.r5 = r5;
      r.r10 = r10;
      out.push_back(std::move(r));
    } else {
      if (out.empty() || out.back().direction != dir) throw ParseError("subset row before its aggregate", lineno);
      out.back().subsets.push_back({medr, r1, r5, r10});
    }
  }
  return out;
}

std::string format_report_table(std::span<const RetrievalReport> reports) {
  std::ostringstream o;
  auto cell = [&](const std::string& v, int w) { o << std::left << std::setw(w) << v << ' '; };
  cell("direction", 9);
  cell("subset", 6);
  for (const char* h : {"MedR", "MedR_std", "R@1", "R@5"}) cell(h, 22);
  o << "R@10\n";
  for (const auto& r : reports) {
    cell(direction_name(r.direction), 9);
    cell(std::to_string(r.subset_size), 6);
    for (double v : {r.medr_mean, r.medr_std, r.r1, r.r5}) cell(format_double(v), 22);
    o << format_double(r.r10) << "\n";
  }
  return o.str();
}

void write_embeddings(const EmbeddingSet& set, const std::string& path) {
  if (!set.images.same_shape(set.recipes) || set.ids.size() != set.images.rows()) {
    throw DimensionError("write_embeddings: inconsistent pair counts");
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write embeddings '" + path + "'");
  out << "id,modality,dim,values...\n";
  const size_t dim = set.images.cols();
  auto emit = [&](uint64_t id, const char* modality, std::span<const double> v) {
    out << id << ',' << modality << ',' << dim;
    for (double x : v) out << ',' << format_double(x);
    out << "\n";
  };
  for (size_t i = 0; i < set.ids.size(); ++i) {
    emit(set.ids[i], "image", set.images.row(i));
    emit(set.ids[i], "recipe", set.recipes.row(i));
  }
  if (!out) throw IoError("write failed for '" + path + "'");
}

EmbeddingSet read_embeddings(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open embeddings '" + path + "'");
  std::string line;
  if (!std::getline(in, line) || line.rfind("id,modality,dim", 0) != 0) {
    throw ParseError("bad embeddings header", 1);
  }
  std::map<uint64_t, std::vector<double>> image_rows, recipe_rows;
  std::vector<uint64_t> order;
  size_t dim = 0, lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto c = split_csv(line);
    if (c.size() < 3) throw ParseError("expected id,modality,dim,values", lineno);
    const auto id = static_cast<uint64_t>(parse_number(c[0], lineno));
    const auto d = static_cast<size_t>(parse_number(c[2], lineno));
    if (dim == 0) dim = d;
    if (d != dim || c.size() != 3 + d) throw ParseError("row dimension mismatch", lineno);
    std::vector<double> v;
    for (size_t k = 0; k < d; ++k) v.push_back(parse_number(c[3 + k], lineno));
    if (c[1] == "image") {
      image_rows.try_emplace(id, std::move(v));
    } else if (c[1] == "recipe") {
      if (!recipe_rows.try_emplace(id, std::move(v)).second) {
        throw ParseError("duplicate recipe row for id " + std::to_string(id), lineno);
      }
      order.push_back(id);
    } else {
      throw ParseError("modality must be image or recipe, got '" + c[1] + "'", lineno);
    }
  }
  EmbeddingSet set;
  std::vector<double> img, rcp;
  for (uint64_t id : order) {
    const auto it = image_rows.find(id);
    if (it == image_rows.end()) throw ParseError("recipe id " + std::to_string(id) + " has no image row", 0);
    set.ids.push_back(id);
    img.insert(img.end(), it->second.begin(), it->second.end());
    const auto& r = recipe_rows[id];
    rcp.insert(rcp.end(), r.begin(), r.end());
  }
  set.images = Tensor<double>(set.ids.size(), dim, std::move(img));
  set.recipes = Tensor<double>(set.ids.size(), dim, std::move(rcp));
  return set;
}

}  // namespace xmem
