#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>

#include "test_util.hpp"
#include "xmem/checkpoint.hpp"
#include "xmem/config.hpp"
#include "xmem/data.hpp"
#include "xmem/errors.hpp"
#include "xmem/gradcheck.hpp"
#include "xmem/objectives.hpp"
#include "xmem/optimizer.hpp"
#include "xmem/trainer.hpp"

using namespace xmem;

namespace {

const Dataset& desk_dataset() {
  static const Dataset ds = generate_dataset(SyntheticSpec{});
  return ds;
}

Dataset small_dataset() {
  SyntheticSpec s;
  s.n_recipes = 120;
  return generate_dataset(s);
}

double median(std::vector<double> x) {
  std::sort(x.begin(), x.end());
  const size_t n = x.size();
  return n % 2 ? x[n / 2] : 0.5 * (x[n / 2 - 1] + x[n / 2]);
}

// Which modules differ between two parameter sets.
std::vector<Module> changed_modules(ModelParams<double> a, ModelParams<double> b) {
  std::vector<std::pair<Module, ParamGroup<double>>> ga, gb;
  a.for_each_group([&](Module m, ParamGroup<double>& g, Activation) { ga.emplace_back(m, g); });
  b.for_each_group([&](Module m, ParamGroup<double>& g, Activation) { gb.emplace_back(m, g); });
  std::vector<Module> out;
  for (size_t i = 0; i < ga.size(); ++i) {
    if (!(ga[i].second == gb[i].second) &&
        (out.empty() || out.back() != ga[i].first))
      out.push_back(ga[i].first);
  }
  return out;
}

class ScopedEnv {
 public:
  ScopedEnv(const char* name, const char* value) : name_(name) { setenv(name, value, 1); }
  ~ScopedEnv() { unsetenv(name_); }

 private:
  const char* name_;
};

}  // namespace

TEST_CASE("adam update examples") {
  AdamConfig c;
  c.lr = 0.1;
  c.eps = 1e-8;
  SUBCASE("zero gradient") {
    std::vector<double> theta{1.0, -2.0}, g{0.0, 0.0};
    AdamSlot<double> slot;
    adam_update<double>(theta, g, slot, c);
    CHECK(theta == std::vector<double>{1.0, -2.0});
    CHECK(slot.step == 1);
  }
  SUBCASE("first step with unit gradient") {
    std::vector<double> theta{0.0}, g{1.0};
    AdamSlot<double> slot;
    adam_update<double>(theta, g, slot, c);
    CHECK(theta[0] == doctest::Approx(-0.1 / (1 + 1e-8)).epsilon(1e-14));
  }
  SUBCASE("descends a quadratic") {
    std::vector<double> theta{1.0};
    AdamSlot<double> slot;
    double prev = 1.0;
    for (int i = 0; i < 5; ++i) {
      std::vector<double> g{2 * theta[0]};
      adam_update<double>(theta, g, slot, c);
      CHECK(theta[0] * theta[0] < prev);
      prev = theta[0] * theta[0];
    }
    CHECK(slot.step == 5);
  }
  SUBCASE("shape mismatch") {
    std::vector<double> theta{0.0, 1.0}, g{1.0};
    AdamSlot<double> slot;
    CHECK_THROWS_AS(adam_update<double>(theta, g, slot, c), DimensionError);
  }
}

TEST_CASE("optimizer players own disjoint modules") {
  const Architecture a = gradcheck_architecture();
  const auto p0 = ModelParams<double>::init(a, 1);
  auto grads = p0.zeros_like();
  grads.for_each_group([](Module, ParamGroup<double>& g, Activation) {
    for (auto& x : g.weights.values()) x = 1.0;
    for (auto& x : g.bias) x = 1.0;
  });
  HyperParams hp;
  for (Player pl : {Player::modality_critic, Player::image_discriminator, Player::embedding}) {
    auto p = p0;
    auto st = OptimizerState<double>::for_params(p);
    adam_step(p, grads, st, hp, pl);
    const auto changed = changed_modules(p0, p);
    CHECK(!changed.empty());
    for (Module m : changed) CHECK(player_of(m) == pl);
  }
  CHECK(player_of(Module::critic_modality) == Player::modality_critic);
  CHECK(player_of(Module::disc_r2i) == Player::image_discriminator);
  CHECK(player_of(Module::gen_r2i) == Player::embedding);
  CHECK(player_of(Module::shared_fc) == Player::embedding);
  CHECK(beta1_for(Module::critic_modality, hp) == kAdversarialBeta1);
  CHECK(beta1_for(Module::disc_r2i, hp) == kAdversarialBeta1);
  CHECK(beta1_for(Module::enc_image, hp) == hp.beta1);
}

TEST_CASE("a critic step leaves every other module untouched") {
  const Architecture a = gradcheck_architecture();
  const auto p = ModelParams<double>::init(a, 2);
  const auto batch = random_batch(a, 8, 3);
  HyperParams hp;
  hp.d = a.d;
  std::vector<double> eps(8, 0.5);
  const auto obj = critic_objective(p, batch, hp, std::span<const double>(eps));
  auto q = p;
  auto st = OptimizerState<double>::for_params(q);
  adam_step(q, obj.grads, st, hp, Player::modality_critic);
  CHECK(changed_modules(p, q) == std::vector<Module>{Module::critic_modality});
}

TEST_CASE("plain triplet arm with zero weights only moves the encoders") {
  const Dataset ds = small_dataset().subset(Split::train);
  TrainConfig cfg;
  cfg.hp.lambda1 = cfg.hp.lambda2 = 0;
  cfg.ablation = AblationConfig::plain_triplet();
  auto p0 = ModelParams<double>::init(cfg.architecture(ds.info), 5);
  auto p = p0;
  auto st = OptimizerState<double>::for_params(p);
  train_epoch(p, st, ds, cfg.hp, cfg.ablation, 9);
  const auto changed = changed_modules(p0, p);
  CHECK(changed == std::vector<Module>{Module::enc_image, Module::enc_recipe, Module::shared_fc});
}

TEST_CASE("every arm moves only what it trains") {
  const Dataset ds = small_dataset().subset(Split::train);
  TrainConfig cfg;
  cfg.hp.critic_steps = 1;
  auto p0 = ModelParams<double>::init(cfg.architecture(ds.info), 5);
  auto p = p0;
  auto st = OptimizerState<double>::for_params(p);
  train_epoch(p, st, ds, cfg.hp, AblationConfig::all(), 9);
  CHECK(changed_modules(p0, p).size() == 9);
}

TEST_CASE("training is deterministic") {
  const Dataset ds = small_dataset();
  TrainConfig cfg;
  cfg.hp.epochs = 3;
  const auto a = train_model<double>(ds, cfg);
  const auto b = train_model<double>(ds, cfg);
  CHECK(a.log.same_values(b.log));
  CHECK(a.params == b.params);
  cfg.seed = 2;
  CHECK(!train_model<double>(ds, cfg).log.same_values(a.log));
}

TEST_CASE("retrieval loss and critic gap shrink over training") {
  std::vector<double> ret_drop, w_drop;
  for (uint64_t seed = 1; seed <= 5; ++seed) {
    TrainConfig cfg;
    cfg.seed = seed;
    cfg.hp.epochs = 30;
    const auto r = train_model<double>(desk_dataset(), cfg);
    REQUIRE(r.log.records.size() == 30);
    const auto& first = r.log.records.front();
    const auto& last = r.log.records.back();
    ret_drop.push_back(first.l_ret - last.l_ret);
    w_drop.push_back(std::abs(first.wasserstein_est) - std::abs(last.wasserstein_est));
  }
  CHECK(median(ret_drop) > 0);
  CHECK(median(w_drop) > 0);
}

TEST_CASE("training files") {
  test::TempDir dir;
  const Dataset ds = small_dataset();
  const std::string data = dir.file("ds.jsonl");
  write_dataset(ds, data);
  TrainConfig cfg;
  cfg.hp.epochs = 0;

  SUBCASE("zero epochs writes the initialization") {
    TrainFiles f{data, dir.file("run0"), "", 0};
    run_training<double>(f, cfg);
    const auto saved = load_checkpoint<double>(checkpoint_path(f.out_dir));
    CHECK(saved == ModelParams<double>::init(cfg.architecture(ds.info), cfg.seed));
    CHECK(TrainLog::read(log_path(f.out_dir)).records.empty());
  }
  SUBCASE("resuming with no epochs reproduces the checkpoint") {
    TrainConfig c2 = cfg;
    c2.hp.epochs = 2;
    TrainFiles f{data, dir.file("run1"), "", 1};
    run_training<double>(f, c2);
    const std::string first = test::read_file(checkpoint_path(f.out_dir));
    CHECK(std::filesystem::exists(dir.file("run1/model_epoch1.ckpt")));
    CHECK(std::filesystem::exists(dir.file("run1/model_epoch2.ckpt")));
    TrainFiles g{data, dir.file("run2"), checkpoint_path(f.out_dir), 0};
    run_training<double>(g, cfg);
    CHECK(test::read_file(checkpoint_path(g.out_dir)) == first);
  }
  SUBCASE("same seed, byte-identical checkpoints") {
    TrainConfig c2 = cfg;
    c2.hp.epochs = 2;
    run_training<double>(TrainFiles{data, dir.file("a"), "", 0}, c2);
    run_training<double>(TrainFiles{data, dir.file("b"), "", 0}, c2);
    CHECK(test::read_file(checkpoint_path(dir.file("a"))) == test::read_file(checkpoint_path(dir.file("b"))));
  }
  SUBCASE("missing dataset") {
    try {
      run_training<double>(TrainFiles{dir.file("nope.jsonl"), dir.file("x"), "", 0}, cfg);
      FAIL("expected IoError");
    } catch (const IoError& e) {
      CHECK(std::string(e.what()).find("not found") != std::string::npos);
    }
  }
  SUBCASE("mismatched feature dims") {
    TrainConfig c2 = cfg;
    c2.d_img = 7;
    CHECK_THROWS_AS(run_training<double>(TrainFiles{data, dir.file("y"), "", 0}, c2), ConfigError);
  }
}

TEST_CASE("train log round trip") {
  test::TempDir dir;
  TrainLog log;
  log.header = {{"seed", "3"}, {"d", "16"}};
  for (size_t e = 1; e <= 3; ++e) {
    EpochRecord r;
    r.epoch = e;
    r.l_ret = 0.1 * static_cast<double>(e) + 1e-17;
    r.wasserstein_est = -0.3 / static_cast<double>(e);
    r.total = 1.0 / 3.0;
    r.seconds = 0.25;
    log.records.push_back(r);
  }
  log.write(dir.file("log.csv"));
  const auto back = TrainLog::read(dir.file("log.csv"));
  CHECK(back.header == log.header);
  CHECK(back.same_values(log));
  const std::string text = test::read_file(dir.file("log.csv"));
  CHECK(text.find("epoch,l_ret,l_ma,l_r2i,l_i2r,total,wasserstein_est,mean_hinge,seconds") != std::string::npos);
}

TEST_CASE("config files") {
  SUBCASE("every key parses and the text form round-trips") {
    const TrainConfig c = parse_train_config(
        "# comment\n"
        "d = 8\nalpha = 0.2\nlambda1 = 0.1\nlambda2 = 0\nlambda_gp = 5\ncritic_steps = 2\n"
        "lr = 0.01\nbeta1 = 0.8\nbeta2 = 0.99\neps = 1e-6\nbatch_size = 16\nepochs = 4\n"
        "seed = 9\nnormalize_embeddings = false\nalignment_mode = logistic\n"
        "use_hard_mining = false\nuse_ma = true\nuse_r2i = false\nuse_i2r = true\n"
        "precision = f32\nd_img = 12\nd_rcp = 13\ngrid_g = 4\n");
    CHECK(c.hp.d == 8);
    CHECK(c.hp.critic_steps == 2);
    CHECK(c.hp.alignment_mode == AlignmentMode::logistic);
    CHECK(!c.hp.normalize_embeddings);
    CHECK(c.precision == Precision::f32);
    CHECK(c.grid_g == 4);
    CHECK(c.ablation.arm_name() == "tl+ma+i2r");
    CHECK(parse_train_config(c.to_text()) == c);
    CHECK(config_keys().size() == 23);
  }
  SUBCASE("unknown keys and bad values") {
    CHECK_THROWS_AS(parse_train_config("bogus = 1\n"), ConfigError);
    CHECK_THROWS_AS(parse_train_config("alpha = abc\n"), ConfigError);
    CHECK_THROWS_AS(parse_train_config("alpha\n"), ParseError);
    CHECK_THROWS_AS(parse_train_config("batch_size = 1\n").validate(), ConfigError);
    CHECK_THROWS_AS(parse_train_config("alignment_mode = minimax\n"), ConfigError);
    CHECK_THROWS_AS(load_train_config("/nonexistent/cfg.txt"), IoError);
  }
  SUBCASE("full-scale preset") {
    TrainConfig c;
    c.apply_full_scale_preset();
    CHECK(c.hp.d == 1024);
    CHECK(c.hp.batch_size == 64);
    CHECK(c.hp.lr == 1e-4);
    CHECK(c.hp.beta2 == 0.999);
    CHECK(c.hp.lambda1 == 0.005);
    CHECK(c.hp.lambda2 == 0.002);
  }
  SUBCASE("precision from the environment") {
    ScopedEnv env("XMEM_PRECISION", "f32");
    TrainConfig c;
    c.apply_environment();
    CHECK(c.precision == Precision::f32);
  }
  SUBCASE("overrides") {
    TrainConfig c;
    c.apply_override("lambda1=0");
    CHECK(c.hp.lambda1 == 0.0);
    CHECK_THROWS_AS(c.apply_override("lambda1"), ConfigError);
  }
}

TEST_CASE("ablation arm tokens") {
  CHECK(AblationConfig::parse_arm("tl") == AblationConfig::plain_triplet());
  CHECK(AblationConfig::parse_arm("all") == AblationConfig::all());
  CHECK(AblationConfig::parse_arm("tl+hm+ma+r2i+i2r") == AblationConfig::all());
  const auto a = AblationConfig::parse_arm("tl+hm+ma");
  CHECK(a.use_hard_mining);
  CHECK(a.use_ma);
  CHECK(!a.use_r2i);
  CHECK(a.arm_name() == "tl+hm+ma");
  CHECK_THROWS_AS(AblationConfig::parse_arm("hm"), ConfigError);
  CHECK_THROWS_AS(AblationConfig::parse_arm("tl+xx"), ConfigError);
}

TEST_CASE("modality probe") {
  std::mt19937_64 rng(3);
  const auto v = test::random_tensor(200, 4, rng), r = test::random_tensor(200, 4, rng);
  auto shifted = r;
  for (size_t i = 0; i < shifted.rows(); ++i) shifted(i, 0) += 6.0;
  const auto v2 = test::random_tensor(200, 4, rng), r2 = test::random_tensor(200, 4, rng);
  auto shifted2 = r2;
  for (size_t i = 0; i < shifted2.rows(); ++i) shifted2(i, 0) += 6.0;
  CHECK(modality_probe_accuracy(v, shifted, v2, shifted2) > 0.99);
  const double chance = modality_probe_accuracy(v, r, v2, r2);
  CHECK(chance > 0.4);
  CHECK(chance < 0.6);
}
