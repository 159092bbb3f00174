#include "xmem/cli.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "xmem/checkpoint.hpp"
#include "xmem/config.hpp"
#include "xmem/data.hpp"
#include "xmem/errors.hpp"
#include "xmem/gradcheck.hpp"
#include "xmem/kv.hpp"
#include "xmem/retrieval.hpp"
#include "xmem/trainer.hpp"

namespace xmem {

namespace {

using Settings = std::vector<std::pair<std::string, std::string>>;

void print_banner(std::ostream& out, const Settings& s) {
  out << "# effective config\n";
  for (const auto& [k, v] : s) out << "# " << k << " = " << v << "\n";
}

Settings config_settings(const TrainConfig& cfg) { return parse_kv(cfg.to_text()); }

std::vector<Split> parse_splits(const std::string& list) {
  std::vector<Split> out;
  std::istringstream in(list);
  std::string tok;
  while (std::getline(in, tok, ',')) out.push_back(parse_split(tok));
  if (out.empty()) throw ConfigError("empty split list");
  return out;
}

struct ConfigFlags {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string preset;

  void add_to(CLI::App* cmd) {
    cmd->add_option("--config", config_path, "key = value config file");
    cmd->add_option("--set", overrides, "override one config key, key=value")->take_all();
    cmd->add_option("--preset", preset, "base preset applied before the config file")
        ->check(CLI::IsMember({"paper"}));
  }

  // defaults, then preset, then file, then --set, then XMEM_PRECISION
  TrainConfig resolve() const {
    TrainConfig cfg;
    if (preset == "paper") cfg.apply_full_scale_preset();
    if (!config_path.empty()) {
      for (const auto& [k, v] : parse_kv_file(config_path)) cfg.set(k, v);
    }
    for (const auto& o : overrides) cfg.apply_override(o);
    cfg.apply_environment();
    cfg.validate();
    return cfg;
  }
};

int cmd_gen_data(const std::string& spec_path, const std::string& out_path, std::ostream& out) {
  const SyntheticSpec spec = load_synthetic_spec(spec_path);
  Settings s = parse_kv(spec.to_text());
  s.emplace_back("out", out_path);
  print_banner(out, s);
  const Dataset ds = generate_dataset(spec);
  write_dataset(ds, out_path);
  out << "recipes=" << ds.recipes.size() << " images=" << ds.image_count()
      << " classes=" << ds.info.n_classes << "\n";
  return kExitOk;
}

template <typename T>
int train_impl(const TrainFiles& files, const TrainConfig& cfg, std::ostream& out) {
  const auto result = run_training<T>(files, cfg, [&](const EpochRecord& r) {
    out << "epoch " << r.epoch << " l_ret=" << format_double(r.l_ret) << " l_ma=" << format_double(r.l_ma)
        << " l_r2i=" << format_double(r.l_r2i) << " l_i2r=" << format_double(r.l_i2r)
        << " total=" << format_double(r.total) << " wasserstein=" << format_double(r.wasserstein_est)
        << "\n";
  });
  out << "wrote " << checkpoint_path(files.out_dir) << " and " << log_path(files.out_dir) << "\n";
  return kExitOk;
}

int cmd_train(const ConfigFlags& flags, TrainFiles files, std::ostream& out) {
  const TrainConfig cfg = flags.resolve();
  Settings s = config_settings(cfg);
  s.emplace_back("data", files.dataset);
  s.emplace_back("out_dir", files.out_dir);
  s.emplace_back("checkpoint_every", std::to_string(files.checkpoint_every));
  if (!files.init_checkpoint.empty()) s.emplace_back("init", files.init_checkpoint);
  print_banner(out, s);
  return cfg.precision == Precision::f32 ? train_impl<float>(files, cfg, out) : train_impl<double>(files, cfg, out);
}

struct EvalFlags {
  std::string checkpoint;
  std::string embeddings;
  std::string data;
  std::string split = "val,test";
  std::string out_path = "retrieval_report.csv";
  std::string write_embeddings_path;
  size_t subset_size = 100;
  size_t subsets = 10;
  uint64_t seed = 1;
};

EmbeddingSet checkpoint_embeddings(const EvalFlags& f, const TrainConfig& cfg) {
  if (f.data.empty()) throw ConfigError("--data is required with --checkpoint");
  const Dataset ds = load_dataset(f.data);
  const auto splits = parse_splits(f.split);
  const Dataset eval_set = ds.subset(splits);
  EmbeddingSet set;
  for (const auto& r : eval_set.recipes) set.ids.push_back(r.recipe_id);
  auto embed = [&]<typename T>(const ModelParams<T>& p) {
    const Architecture a = p.architecture();
    if (a.d_img != ds.info.d_img || a.d_rcp != ds.info.d_rcp) {
      throw ConfigError("checkpoint feature dims do not match the dataset");
    }
    auto [img, rcp] = embed_pairs(p, eval_set, cfg.hp.normalize_embeddings);
    set.images = std::move(img);
    set.recipes = std::move(rcp);
  };
  if (checkpoint_precision(f.checkpoint) == Precision::f32) {
    embed(load_checkpoint<float>(f.checkpoint));
  } else {
    embed(load_checkpoint<double>(f.checkpoint));
  }
  return set;
}

int cmd_eval(const EvalFlags& f, const ConfigFlags& cflags, std::ostream& out) {
  const TrainConfig cfg = cflags.resolve();
  Settings s;
  if (!f.checkpoint.empty()) {
    s.emplace_back("checkpoint", f.checkpoint);
    s.emplace_back("data", f.data);
    s.emplace_back("split", f.split);
    s.emplace_back("normalize_embeddings", cfg.hp.normalize_embeddings ? "true" : "false");
  } else {
    s.emplace_back("embeddings", f.embeddings);
  }
  s.emplace_back("subset_size", std::to_string(f.subset_size));
  s.emplace_back("subsets", std::to_string(f.subsets));
  s.emplace_back("seed", std::to_string(f.seed));
  s.emplace_back("out", f.out_path);
  print_banner(out, s);

  const EmbeddingSet set = f.checkpoint.empty() ? read_embeddings(f.embeddings) : checkpoint_embeddings(f, cfg);
  if (f.subset_size > set.ids.size()) {
    throw ConfigError("subset size " + std::to_string(f.subset_size) + " exceeds the " +
                      std::to_string(set.ids.size()) + " available pairs");
  }
  if (!f.write_embeddings_path.empty()) write_embeddings(set, f.write_embeddings_path);
  const auto reports = evaluate(set.images, set.recipes, f.subset_size, f.subsets, f.seed);
  write_report(reports, f.out_path);
  out << format_report_table(reports);
  return kExitOk;
}

int cmd_gradcheck(const GradcheckOptions& opt, std::ostream& out) {
  print_banner(out, {{"seed", std::to_string(opt.seed)},
                     {"step", format_double(opt.step)},
                     {"tol", format_double(opt.tol)},
                     {"samples", std::to_string(opt.samples)}});
  bool ok = true;
  for (const auto& c : run_gradcheck_suite(opt)) {
    ok = ok && c.report.passed();
    out << (c.report.passed() ? "PASS " : "FAIL ") << c.loss << " max_rel_error=" << format_double(c.report.max_rel_error)
        << " checked=" << c.report.checked << " worst=" << c.report.worst << "\n";
  }
  return ok ? kExitOk : kExitFailure;
}

struct AblateFlags {
  std::string data;
  std::string arms = "tl,tl+hm,tl+hm+ma,all";
  std::string split = "val,test";
  std::string out_path = "ablation.csv";
  size_t subset_size = 100;
  size_t subsets = 10;
  uint64_t eval_seed = 1;
};

template <typename T>
std::string ablate_row(const Dataset& ds, const Dataset& eval_set, const TrainConfig& cfg, const AblateFlags& f) {
  const auto result = train_model<T>(ds, cfg);
  const auto rep = evaluate_model(result.params, eval_set, cfg.hp.normalize_embeddings, f.subset_size, f.subsets,
                                  f.eval_seed);
  std::string row = cfg.ablation.arm_name();
  for (const auto& r : rep) {
    for (double x : {r.medr_mean, r.medr_std, r.r1, r.r5, r.r10}) row += "," + format_double(x);
  }
  const double final_ret = result.log.records.empty() ? 0.0 : result.log.records.back().l_ret;
  row += "," + format_double(final_ret);
  return row;
}

int cmd_ablate(const ConfigFlags& cflags, const AblateFlags& f, std::ostream& out) {
  const TrainConfig base = cflags.resolve();
  std::vector<AblationConfig> arms;
  std::istringstream in(f.arms);
  std::string tok;
  while (std::getline(in, tok, ',')) arms.push_back(AblationConfig::parse_arm(tok));
  if (arms.empty()) throw ConfigError("--arms is empty");

  Settings s = config_settings(base);
  s.emplace_back("data", f.data);
  s.emplace_back("arms", f.arms);
  s.emplace_back("split", f.split);
  s.emplace_back("subset_size", std::to_string(f.subset_size));
  s.emplace_back("subsets", std::to_string(f.subsets));
  s.emplace_back("eval_seed", std::to_string(f.eval_seed));
  s.emplace_back("out", f.out_path);
  print_banner(out, s);

  const Dataset ds = load_dataset(f.data);
  const auto splits = parse_splits(f.split);
  const Dataset eval_set = ds.subset(splits);
  if (f.subset_size > eval_set.recipes.size()) {
    throw ConfigError("subset size " + std::to_string(f.subset_size) + " exceeds the " +
                      std::to_string(eval_set.recipes.size()) + " available pairs");
  }
  std::ofstream csv(f.out_path, std::ios::trunc);
  if (!csv) throw IoError("cannot write '" + f.out_path + "'");
  const std::string header =
      "arm,im2rec_medr,im2rec_medr_std,im2rec_r_at_1,im2rec_r_at_5,im2rec_r_at_10,"
      "rec2im_medr,rec2im_medr_std,rec2im_r_at_1,rec2im_r_at_5,rec2im_r_at_10,final_l_ret";
  csv << header << "\n";
  out << header << "\n";
  for (const auto& arm : arms) {
    TrainConfig cfg = base;
    cfg.ablation = arm;
    const std::string row = cfg.precision == Precision::f32 ? ablate_row<float>(ds, eval_set, cfg, f)
                                                            : ablate_row<double>(ds, eval_set, cfg, f);
    csv << row << "\n";
    out << row << "\n";
  }
  if (!csv) throw IoError("write failed for '" + f.out_path + "'");
  return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Cross-modal recipe/image embedding toolkit", "xmem"};
  app.require_subcommand(1);

  std::string spec_path, gen_out;
  auto* gen = app.add_subcommand("gen-data", "write a synthetic paired dataset");
  gen->add_option("--spec", spec_path, "synthetic spec file (key = value)")->required();
  gen->add_option("--out", gen_out, "output path; .gz selects gzip")->required();

  ConfigFlags train_cfg;
  TrainFiles files;
  auto* train = app.add_subcommand("train", "train a model");
  train_cfg.add_to(train);
  train->add_option("--data", files.dataset, "dataset file")->required();
  train->add_option("--out-dir", files.out_dir, "output directory")->required();
  train->add_option("--checkpoint-every", files.checkpoint_every, "extra checkpoint every k epochs");
  train->add_option("--init", files.init_checkpoint, "start from this checkpoint");

  ConfigFlags eval_cfg;
  EvalFlags ef;
  auto* eval = app.add_subcommand("eval", "retrieval evaluation");
  eval_cfg.add_to(eval);
  auto* ck = eval->add_option("--checkpoint", ef.checkpoint, "model checkpoint");
  auto* em = eval->add_option("--embeddings", ef.embeddings, "embedding interchange file");
  ck->excludes(em);
  eval->add_option("--data", ef.data, "dataset file (with --checkpoint)");
  eval->add_option("--split", ef.split, "comma-separated splits to evaluate")->capture_default_str();
  eval->add_option("--subset-size", ef.subset_size, "pairs per subset")->capture_default_str();
  eval->add_option("--subsets", ef.subsets, "number of subsets")->capture_default_str();
  eval->add_option("--seed", ef.seed, "subset sampling seed")->capture_default_str();
  eval->add_option("--out", ef.out_path, "report CSV")->capture_default_str();
  eval->add_option("--write-embeddings", ef.write_embeddings_path, "also write the embeddings used");

  GradcheckOptions gopt;
  auto* gc = app.add_subcommand("gradcheck", "finite-difference check of every loss");
  gc->add_option("--seed", gopt.seed, "model and batch seed")->capture_default_str();
  gc->add_option("--samples", gopt.samples, "random coordinates per loss")->capture_default_str();
  gc->add_option("--inject-fault", gopt.fault)->group("");

  ConfigFlags ablate_cfg;
  AblateFlags af;
  auto* ablate = app.add_subcommand("ablate", "train and evaluate each ablation arm");
  ablate_cfg.add_to(ablate);
  ablate->add_option("--data", af.data, "dataset file")->required();
  ablate->add_option("--arms", af.arms, "comma-separated arms, e.g. tl,tl+hm,all")->capture_default_str();
  ablate->add_option("--split", af.split, "comma-separated evaluation splits")->capture_default_str();
  ablate->add_option("--subset-size", af.subset_size, "pairs per subset")->capture_default_str();
  ablate->add_option("--subsets", af.subsets, "number of subsets")->capture_default_str();
  ablate->add_option("--eval-seed", af.eval_seed, "subset sampling seed")->capture_default_str();
  ablate->add_option("--out", af.out_path, "comparison CSV")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*gen) return cmd_gen_data(spec_path, gen_out, out);
    if (*train) return cmd_train(train_cfg, files, out);
    if (*eval) {
      if (ef.checkpoint.empty() && ef.embeddings.empty()) {
        err << "eval: one of --checkpoint or --embeddings is required\n";
        return kExitUsage;
      }
      return cmd_eval(ef, eval_cfg, out);
    }
    if (*gc) return cmd_gradcheck(gopt, out);
    if (*ablate) return cmd_ablate(ablate_cfg, af, out);
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const IoError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace xmem
