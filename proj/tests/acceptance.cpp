// Acceptance suite: one PASS/FAIL line per criterion, exit 1 if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "test_util.hpp"
#include "xmem/config.hpp"
#include "xmem/data.hpp"
#include "xmem/gradcheck.hpp"
#include "xmem/losses.hpp"
#include "xmem/retrieval.hpp"
#include "xmem/trainer.hpp"

using namespace xmem;
using T2 = Tensor<double>;

namespace {

// Tolerances and budgets.
constexpr double kGradTol = 1e-6;
constexpr double kGradStep = 1e-5;
constexpr double kGradBudgetSeconds = 60.0;
constexpr double kOracleTol = 1e-12;
constexpr size_t kOracleBatches = 200;
constexpr double kRandomMedrLo = 40.0, kRandomMedrHi = 60.0, kRandomR1Max = 4.0;
constexpr size_t kRankInstances = 1000;
constexpr double kMedrMax = 2.0;
constexpr double kR1Min = 60.0;
constexpr size_t kEpochBudget = 50;
constexpr double kTrainBudgetSeconds = 300.0;
constexpr double kProbeAlignedMax = 0.70;
constexpr double kProbeUnalignedMin = 0.85;
constexpr double kLn2Tol = 1e-12;
constexpr size_t kSeeds = 5;
constexpr size_t kSubsetSize = 100;
constexpr size_t kSubsets = 10;
constexpr uint64_t kEvalSeed = 1;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

double median(std::vector<double> x) {
  std::sort(x.begin(), x.end());
  const size_t n = x.size();
  return n % 2 ? x[n / 2] : 0.5 * (x[n / 2 - 1] + x[n / 2]);
}

int failures = 0;

void report(int id, const char* title, bool ok, const std::string& detail) {
  std::printf("[%s] criterion %d: %s | %s\n", ok ? "PASS" : "FAIL", id, title, detail.c_str());
  std::fflush(stdout);
  if (!ok) ++failures;
}

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

const Dataset& desk_dataset() {
  static const Dataset ds = generate_dataset(SyntheticSpec{});
  return ds;
}

const Dataset& held_out() {
  static const Split s[] = {Split::val, Split::test};
  static const Dataset ds = desk_dataset().subset(s);
  return ds;
}

struct ArmResult {
  double medr_i2r = 0, medr_r2i = 0, r1_i2r = 0, r1_r2i = 0, probe = 0, seconds = 0;
};

// Trains one arm from scratch and scores it on the held-out split.
ArmResult run_arm(const AblationConfig& arm, uint64_t seed) {
  TrainConfig cfg;
  cfg.seed = seed;
  cfg.hp.epochs = kEpochBudget;
  cfg.ablation = arm;
  const auto t0 = Clock::now();
  const auto res = train_model<double>(desk_dataset(), cfg);
  ArmResult out;
  out.seconds = seconds_since(t0);
  const auto rep = evaluate_model(res.params, held_out(), cfg.hp.normalize_embeddings, kSubsetSize, kSubsets,
                                  kEvalSeed);
  out.medr_i2r = rep[0].medr_mean;
  out.medr_r2i = rep[1].medr_mean;
  out.r1_i2r = rep[0].r1;
  out.r1_r2i = rep[1].r1;
  const auto [vf, rf] = penultimate_features(res.params, desk_dataset().subset(Split::train));
  const auto [vt, rt] = penultimate_features(res.params, held_out());
  out.probe = modality_probe_accuracy(vf, rf, vt, rt);
  return out;
}

std::vector<ArmResult> run_arm_seeds(const AblationConfig& arm) {
  std::vector<ArmResult> out;
  for (uint64_t s = 1; s <= kSeeds; ++s) out.push_back(run_arm(arm, s));
  return out;
}

template <typename F>
double med_of(const std::vector<ArmResult>& rs, F f) {
  std::vector<double> x;
  for (const auto& r : rs) x.push_back(f(r));
  return median(x);
}

void criterion_gradcheck() {
  const auto t0 = Clock::now();
  bool ok = true;
  double worst = 0;
  std::string worst_name;
  size_t checked = 0;
  for (uint64_t seed = 1; seed <= kSeeds; ++seed) {
    GradcheckOptions opt;
    opt.seed = seed;
    opt.step = kGradStep;
    opt.tol = kGradTol;
    for (const auto& c : run_gradcheck_suite(opt)) {
      ++checked;
      ok = ok && c.report.passed();
      if (c.report.max_rel_error > worst) {
        worst = c.report.max_rel_error;
        worst_name = c.loss;
      }
    }
  }
  const double secs = seconds_since(t0);
  ok = ok && checked == 13 * kSeeds && secs < kGradBudgetSeconds;
  report(1, "gradient correctness", ok,
         std::to_string(checked) + " loss checks over 5 seeds, worst rel error " + fmt("%.3g", worst) + " (" +
             worst_name + "), tol " + fmt("%.0e", kGradTol) + ", " + fmt("%.2f", secs) + " s");
}

void criterion_oracle() {
  std::mt19937_64 rng(2024);
  double worst = 0;
  size_t with_dup = 0, done = 0;
  bool ok = true;
  while (done < kOracleBatches) {
    const size_t b = 2 + rng() % 15;
    const size_t d = 1 + rng() % 6;
    std::vector<uint64_t> ids(b);
    for (auto& id : ids) id = rng() % (b / 2 + 1);
    const T2 v = test::random_tensor(b, d, rng), r = test::random_tensor(b, d, rng);
    const auto oracle = test::brute_force_hard(v, r, ids, 0.3);
    if (oracle.contributing == 0) continue;
    const auto got = triplet_loss_hard(v, r, std::span<const uint64_t>(ids), 0.3);
    worst = std::max(worst, std::abs(got.loss - oracle.loss));
    ok = ok && got.contributing == oracle.contributing;
    std::vector<uint64_t> sorted = ids;
    std::sort(sorted.begin(), sorted.end());
    with_dup += std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end();
    ++done;
  }
  ok = ok && worst <= kOracleTol && with_dup > 0;
  report(2, "hard-mined triplet loss vs brute force", ok,
         std::to_string(done) + " batches (B<=16, " + std::to_string(with_dup) +
             " with duplicated ids), max abs diff " + fmt("%.3g", worst) + ", tol " + fmt("%.0e", kOracleTol));
}

void criterion_retrieval() {
  std::mt19937_64 rng(99);
  // (a)
  const T2 p = test::random_tensor(300, 16, rng);
  bool a = true;
  for (const auto& rep : evaluate(p, p, kSubsetSize, kSubsets, kEvalSeed))
    a = a && rep.medr_mean == 1.0 && rep.r1 == 100.0;
  // (b)
  bool b = true;
  double lo = 1e9, hi = 0, r1max = 0;
  for (uint64_t s = 1; s <= kSeeds; ++s) {
    std::mt19937_64 g(s);
    const T2 v = test::random_tensor(500, 16, g), r = test::random_tensor(500, 16, g);
    for (const auto& rep : evaluate(v, r, kSubsetSize, kSubsets, s)) {
      lo = std::min(lo, rep.medr_mean);
      hi = std::max(hi, rep.medr_mean);
      r1max = std::max(r1max, rep.r1);
      b = b && rep.medr_mean >= kRandomMedrLo && rep.medr_mean <= kRandomMedrHi && rep.r1 <= kRandomR1Max;
    }
  }
  // (c)
  size_t agree = 0;
  for (size_t t = 0; t < kRankInstances; ++t) {
    const size_t n = 1 + rng() % 100;
    const size_t d = 1 + rng() % 4;
    T2 c = test::random_tensor(n, d, rng);
    if (t % 4 == 0)
      for (auto& x : c.values()) x = std::round(x);
    std::vector<double> q(d, 0.0);
    if (t % 4 != 0)
      for (auto& x : q) x = std::normal_distribution<double>()(rng);
    const size_t truth = rng() % n;
    agree += rank_one(q, c, truth).rank == test::sort_oracle_rank(q, c, truth);
  }
  const bool cc = agree == kRankInstances;
  report(3, "retrieval protocol sanity", a && b && cc,
         std::string("(a) perfect ") + (a ? "ok" : "bad") + "; (b) random MedR in [" + fmt("%.1f", lo) + ", " +
             fmt("%.1f", hi) + "], max R@1 " + fmt("%.1f", r1max) + "%; (c) rank_one agrees on " +
             std::to_string(agree) + "/" + std::to_string(kRankInstances));
}

void criterion_end_to_end(const std::vector<ArmResult>& full) {
  const double medr_i = med_of(full, [](const ArmResult& r) { return r.medr_i2r; });
  const double medr_r = med_of(full, [](const ArmResult& r) { return r.medr_r2i; });
  const double r1_i = med_of(full, [](const ArmResult& r) { return r.r1_i2r; });
  const double r1_r = med_of(full, [](const ArmResult& r) { return r.r1_r2i; });
  double slowest = 0;
  for (const auto& r : full) slowest = std::max(slowest, r.seconds);
  const bool ok = medr_i <= kMedrMax && medr_r <= kMedrMax && r1_i >= kR1Min && r1_r >= kR1Min &&
                  slowest < kTrainBudgetSeconds;
  report(4, "end-to-end learning", ok,
         "median of 5 seeds, 50 epochs: im2rec MedR " + fmt("%.2f", medr_i) + " R@1 " + fmt("%.1f", r1_i) +
             "%, rec2im MedR " + fmt("%.2f", medr_r) + " R@1 " + fmt("%.1f", r1_r) + "%; slowest run " +
             fmt("%.1f", slowest) + " s");
}

void criterion_ablation(const std::vector<ArmResult>& tl, const std::vector<ArmResult>& hm,
                        const std::vector<ArmResult>& full) {
  auto medr = [](const std::vector<ArmResult>& rs) {
    return med_of(rs, [](const ArmResult& r) { return 0.5 * (r.medr_i2r + r.medr_r2i); });
  };
  auto r1 = [](const std::vector<ArmResult>& rs) {
    return med_of(rs, [](const ArmResult& r) { return 0.5 * (r.r1_i2r + r.r1_r2i); });
  };
  const double m_tl = medr(tl), m_hm = medr(hm), m_all = medr(full);
  const bool ok = m_hm <= m_tl && m_all <= m_hm;
  const bool ties = m_hm == m_tl || m_all == m_hm;
  report(5, "ablation ordering", ok,
         "median MedR (mean of both directions) TL " + fmt("%.2f", m_tl) + ", TL+HM " + fmt("%.2f", m_hm) +
             ", full " + fmt("%.2f", m_all) + (ties ? " (ties at the MedR floor)" : "") + "; R@1 TL " +
             fmt("%.1f", r1(tl)) + "%, TL+HM " + fmt("%.1f", r1(hm)) + "%, full " + fmt("%.1f", r1(full)) + "%");
}

void criterion_probe(const std::vector<ArmResult>& aligned, const std::vector<ArmResult>& unaligned) {
  const double on = med_of(aligned, [](const ArmResult& r) { return r.probe; });
  const double off = med_of(unaligned, [](const ArmResult& r) { return r.probe; });
  report(6, "modality alignment effect", on <= kProbeAlignedMax && off >= kProbeUnalignedMin,
         "held-out probe accuracy, median of 5: use_ma on " + fmt("%.3f", on) + " (need <= 0.70), off " +
             fmt("%.3f", off) + " (need >= 0.85)");
}

void criterion_gan_identities() {
  std::mt19937_64 rng(5);
  const Architecture arch = gradcheck_architecture();
  auto p = ModelParams<double>::init(arch, 3);
  const size_t n = 8, d = p.critic_modality.in_dim();
  const T2 vm = test::random_tensor(n, d, rng), rm = test::random_tensor(n, d, rng);
  std::vector<double> eps(n);
  for (auto& e : eps) e = std::uniform_real_distribution<double>(0, 1)(rng);
  const double lgp = 10.0;

  Mlp<double> constant = p.critic_modality;
  for (auto& l : constant.layers) {
    l.params.weights.fill(0.0);
    std::fill(l.params.bias.begin(), l.params.bias.end(), 0.0);
  }
  constant.layers.back().params.bias[0] = 1.5;
  const double c_loss = critic_loss<double>(constant, vm, rm, eps, AlignmentMode::wgan_gp, lgp, 1.0, nullptr,
                                            nullptr, nullptr)
                            .loss;

  Mlp<double> linear;
  T2 w(d, 1);
  w(1, 0) = 1.0;
  linear.layers.push_back({ParamGroup<double>{"critic_modality.0", w, {0.25}}, Activation::identity});
  const double gp =
      critic_loss<double>(linear, vm, rm, eps, AlignmentMode::wgan_gp, lgp, 1.0, nullptr, nullptr, nullptr).gp;

  auto& last = p.disc_r2i.layers.back().params;
  last.weights.fill(0.0);
  std::fill(last.bias.begin(), last.bias.end(), 0.0);
  const auto batch = random_batch(arch, n, 4);
  const auto t = r2i_losses<double>(p, batch.grids, batch.class_ids, test::random_tensor(n, arch.d, rng),
                                    R2iWeights<double>{}, nullptr, nullptr);
  const double dd = std::abs(t.disc_loss - std::log(2.0)), dg = std::abs(t.gen_loss - std::log(2.0));
  const bool ok = c_loss == lgp && gp == 0.0 && dd <= kLn2Tol && dg <= kLn2Tol;
  report(7, "analytic GAN identities", ok,
         "constant critic loss " + fmt("%.17g", c_loss) + " (lambda_gp 10), unit linear critic GP " +
             fmt("%.3g", gp) + ", zero-logit |disc-ln2| " + fmt("%.2g", dd) + " |gen-ln2| " + fmt("%.2g", dg));
}

void criterion_determinism() {
  test::TempDir dir;
  SyntheticSpec spec;
  spec.n_recipes = 200;
  const std::string data = dir.file("ds.jsonl");
  write_dataset(generate_dataset(spec), data);
  TrainConfig cfg;
  cfg.hp.epochs = 3;
  std::string ckpt[2], rep[2];
  for (int i = 0; i < 2; ++i) {
    const std::string out = dir.file("run" + std::to_string(i));
    const auto res = run_training<double>(TrainFiles{data, out, "", 0}, cfg);
    const Dataset ds = load_dataset(data);
    const Split s[] = {Split::val, Split::test};
    const auto r = evaluate_model(res.params, ds.subset(s), true, 50, kSubsets, kEvalSeed);
    write_report(r, out + "/report.csv");
    ckpt[i] = test::read_file(checkpoint_path(out));
    rep[i] = test::read_file(out + "/report.csv");
  }
  const bool ok = !ckpt[0].empty() && ckpt[0] == ckpt[1] && rep[0] == rep[1];
  report(8, "determinism", ok,
         std::string("two f64 runs: checkpoints ") + (ckpt[0] == ckpt[1] ? "identical" : "differ") + " (" +
             std::to_string(ckpt[0].size()) + " bytes), reports " + (rep[0] == rep[1] ? "identical" : "differ"));
}

}  // namespace

int main() {
  const auto t0 = Clock::now();
  criterion_gradcheck();
  criterion_oracle();
  criterion_retrieval();

  const auto full = run_arm_seeds(AblationConfig::all());
  criterion_end_to_end(full);
  const auto tl = run_arm_seeds(AblationConfig::parse_arm("tl"));
  const auto hm = run_arm_seeds(AblationConfig::parse_arm("tl+hm"));
  criterion_ablation(tl, hm, full);
  const auto no_ma = run_arm_seeds(AblationConfig::parse_arm("tl+hm+r2i+i2r"));
  criterion_probe(full, no_ma);

  criterion_gan_identities();
  criterion_determinism();
  std::printf("%d of 8 criteria failed, %.1f s total\n", failures, seconds_since(t0));
  return failures == 0 ? 0 : 1;
}
