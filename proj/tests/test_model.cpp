#include <doctest.h>

#include <cmath>
#include <fstream>
#include <numeric>

#include "test_util.hpp"
#include "xmem/checkpoint.hpp"
#include "xmem/errors.hpp"
#include "xmem/gradcheck.hpp"
#include "xmem/model.hpp"

using namespace xmem;
using T2 = Tensor<double>;

namespace {

Architecture small_arch() {
  Architecture a;
  a.d_img = 5;
  a.d_rcp = 6;
  a.d = 4;
  a.grid_g = 3;
  a.n_classes = 3;
  a.n_ingredients = 7;
  return a;
}

void zero_all(Mlp<double>& m) {
  for (auto& l : m.layers) {
    for (auto& w : l.params.weights.values()) w = 0;
    for (auto& b : l.params.bias) b = 0;
  }
}

Mlp<double> identity_encoder(const std::string& name, size_t d) {
  Mlp<double> m;
  m.layers.push_back({ParamGroup<double>{name + ".0", T2::identity(d), std::vector<double>(d, 0.0)},
                      Activation::identity});
  return m;
}

}  // namespace

TEST_CASE("network shapes chain and names are unique") {
  const auto p = ModelParams<double>::init(small_arch(), 1);
  std::vector<std::string> names;
  size_t counted = 0;
  p.for_each_group([&](Module, const ParamGroup<double>& g, Activation) {
    names.push_back(g.name);
    counted += g.count();
  });
  std::sort(names.begin(), names.end());
  CHECK(std::adjacent_find(names.begin(), names.end()) == names.end());
  CHECK(counted == p.parameter_count());
  CHECK(p.architecture() == small_arch());
  CHECK(p.critic_modality.out_dim() == 1);
  CHECK(p.gen_r2i.out_dim() == 9);
  CHECK(p.cls_r2i.out_dim() == 3);
  CHECK(p.ing_predictor.out_dim() == 7);
}

TEST_CASE("parameter count holds a single shared projection") {
  const Architecture a = small_arch();
  const auto p = ModelParams<double>::init(a, 2);
  size_t expected = a.d * a.d + a.d;  // shared_fc, once
  auto mlp = [](std::vector<size_t> dims) {
    size_t n = 0;
    for (size_t k = 0; k + 1 < dims.size(); ++k) n += dims[k] * dims[k + 1] + dims[k + 1];
    return n;
  };
  const size_t h = 2 * a.d, g2 = a.grid_g * a.grid_g;
  expected += mlp({a.d_img, h, a.d}) + mlp({a.d_rcp, h, a.d}) + mlp({a.d, h, 1}) + mlp({a.d, h, g2}) +
              mlp({g2, h, 1}) + mlp({g2, h, a.n_classes}) + mlp({a.d, h, a.n_ingredients}) +
              mlp({a.d, h, a.n_classes});
  CHECK(p.parameter_count() == expected);
}

TEST_CASE("embed_batch examples") {
  const Architecture a = small_arch();
  std::mt19937_64 rng(3);
  SUBCASE("zero encoders give zero embeddings") {
    auto p = ModelParams<double>::init(a, 3);
    zero_all(p.enc_image);
    zero_all(p.enc_recipe);
    const auto e = embed_features(p, test::random_tensor(4, a.d_img, rng), test::random_tensor(4, a.d_rcp, rng), false);
    for (const T2* t : {&e.v_pen, &e.r_pen, &e.v_final, &e.r_final}) {
      for (double x : t->values()) CHECK(x == 0.0);
    }
  }
  SUBCASE("identity encoders expose raw features") {
    Architecture sq = a;
    sq.d_img = sq.d_rcp = sq.d;
    auto p = ModelParams<double>::init(sq, 4);
    p.enc_image = identity_encoder("enc_image", sq.d);
    p.enc_recipe = identity_encoder("enc_recipe", sq.d);
    const T2 img = test::random_tensor(3, sq.d, rng);
    const auto e = embed_features(p, img, test::random_tensor(3, sq.d, rng), true);
    CHECK(e.v_pen == img);
  }
  SUBCASE("the projection is shared between branches") {
    const auto p = ModelParams<double>::init(a, 5);
    const T2 img = test::random_tensor(4, a.d_img, rng);
    const auto e = embed_features(p, img, test::random_tensor(4, a.d_rcp, rng), false);
    CHECK(e.v_pen.rows() == 4);
    CHECK(e.v_final.cols() == a.d);
    CHECK(e.r_final.cols() == a.d);
    // FC applied by hand to V_m reproduces V, and to V_m standing in for R_m.
    const T2 manual = affine_forward(e.v_pen, p.shared_fc);
    CHECK(manual == e.v_final);
    auto q = p;
    q.enc_recipe = p.enc_image;  // same features in both branches
    const auto same = embed_features(q, img, img, false);
    CHECK(same.v_final == same.r_final);
  }
  SUBCASE("dimension mismatch") {
    const auto p = ModelParams<double>::init(a, 6);
    CHECK_THROWS_AS(embed_features(p, T2(2, a.d_img + 1), T2(2, a.d_rcp), true), DimensionError);
  }
}

TEST_CASE("normalized embeddings have unit rows") {
  const Architecture a = small_arch();
  const auto p = ModelParams<double>::init(a, 7);
  std::mt19937_64 rng(7);
  const auto e = embed_features(p, test::random_tensor(10, a.d_img, rng), test::random_tensor(10, a.d_rcp, rng), true);
  for (const T2* t : {&e.v_final, &e.r_final}) {
    for (size_t i = 0; i < t->rows(); ++i) CHECK(std::sqrt(dot(t->row(i), t->row(i))) == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("mutating the shared projection moves both modalities") {
  const Architecture a = small_arch();
  auto p = ModelParams<double>::init(a, 8);
  std::mt19937_64 rng(8);
  const T2 img = test::random_tensor(3, a.d_img, rng), rcp = test::random_tensor(3, a.d_rcp, rng);
  const auto before = embed_features(p, img, rcp, false);
  p.shared_fc.weights(0, 0) += 0.5;
  const auto after = embed_features(p, img, rcp, false);
  CHECK_FALSE(before.v_final == after.v_final);
  CHECK_FALSE(before.r_final == after.r_final);
  CHECK(before.v_pen == after.v_pen);
}

TEST_CASE("embed_batch is permutation equivariant") {
  const Architecture a = small_arch();
  const auto p = ModelParams<double>::init(a, 9);
  std::mt19937_64 rng(9);
  const T2 img = test::random_tensor(6, a.d_img, rng), rcp = test::random_tensor(6, a.d_rcp, rng);
  const std::vector<size_t> perm{3, 0, 5, 1, 4, 2};
  T2 pi(6, a.d_img), pr(6, a.d_rcp);
  for (size_t i = 0; i < 6; ++i) {
    std::copy_n(img.row(perm[i]).begin(), a.d_img, pi.row(i).begin());
    std::copy_n(rcp.row(perm[i]).begin(), a.d_rcp, pr.row(i).begin());
  }
  const auto e = embed_features(p, img, rcp, true), ep = embed_features(p, pi, pr, true);
  for (size_t i = 0; i < 6; ++i) {
    for (size_t j = 0; j < a.d; ++j) {
      CHECK(ep.v_final(i, j) == e.v_final(perm[i], j));
      CHECK(ep.r_final(i, j) == e.r_final(perm[i], j));
    }
  }
}

TEST_CASE("critic_score") {
  const Architecture a = small_arch();
  std::mt19937_64 rng(10);
  const T2 x = test::random_tensor(4, a.d, rng);
  SUBCASE("zero weights score 0") {
    auto p = ModelParams<double>::init(a, 10);
    zero_all(p.critic_modality);
    for (double s : critic_score(p, x)) CHECK(s == 0.0);
  }
  SUBCASE("linear critic is a dot product") {
    auto p = ModelParams<double>::init(a, 11);
    const T2 w = test::random_tensor(a.d, 1, rng);
    p.critic_modality.layers = {{ParamGroup<double>{"critic_modality.0", w, {0.0}}, Activation::identity}};
    const auto s = critic_score(p, x);
    for (size_t i = 0; i < 4; ++i) {
      double ref = 0;
      for (size_t j = 0; j < a.d; ++j) ref += w(j, 0) * x(i, j);
      CHECK(s[i] == doctest::Approx(ref).epsilon(1e-14));
    }
  }
  SUBCASE("random critic matches a layer-by-layer hand evaluation") {
    const auto p = ModelParams<double>::init(a, 12);
    const auto s = critic_score(p, x);
    const auto& l0 = p.critic_modality.layers[0].params;
    const auto& l1 = p.critic_modality.layers[1].params;
    for (size_t i = 0; i < 4; ++i) {
      double out = l1.bias[0];
      for (size_t k = 0; k < l0.fan_out(); ++k) {
        double z = l0.bias[k];
        for (size_t j = 0; j < a.d; ++j) z += x(i, j) * l0.weights(j, k);
        const double h = z > 0 ? z : 0.2 * z;
        out += h * l1.weights(k, 0);
      }
      CHECK(s[i] == doctest::Approx(out).epsilon(1e-13));
    }
  }
  SUBCASE("wrong width") {
    const auto p = ModelParams<double>::init(a, 13);
    CHECK_THROWS_AS(critic_score(p, T2(2, a.d + 1)), DimensionError);
  }
}

TEST_CASE("generate_image") {
  const Architecture a = small_arch();
  std::mt19937_64 rng(14);
  auto p = ModelParams<double>::init(a, 14);
  const T2 r = test::random_tensor(2, a.d, rng);
  const T2 g = generate_image(p, r);
  CHECK(g.rows() == 2);
  CHECK(g.cols() == a.grid_g * a.grid_g);
  for (double v : g.values()) CHECK((v > -1.0 && v < 1.0));
  const T2 r2 = test::random_tensor(2, a.d, rng);
  CHECK_FALSE(generate_image(p, r2) == g);
  zero_all(p.gen_r2i);
  const T2 zero = generate_image(p, r);
  for (double x : zero.values()) CHECK(x == 0.0);
}

TEST_CASE("predict_ingredients") {
  Architecture a = small_arch();
  std::mt19937_64 rng(15);
  auto p = ModelParams<double>::init(a, 15);
  const T2 v = test::random_tensor(5, a.d, rng);
  CHECK(predict_ingredients(p, v).rows() == 5);
  CHECK(predict_ingredients(p, v).cols() == a.n_ingredients);

  SUBCASE("2x3 toy network by hand") {
    a.d = 2;
    a.n_ingredients = 3;
    auto q = ModelParams<double>::init(a, 16);
    q.ing_predictor.layers = {
        {ParamGroup<double>{"ing_predictor.0", T2::from_rows({{1, -1}, {0.5, 2}}), {0.1, -0.3}},
         Activation::leaky_relu},
        {ParamGroup<double>{"ing_predictor.1", T2::from_rows({{1, 0, -1}, {2, 1, 0.5}}), {0, 0.2, 0}},
         Activation::identity}};
    const T2 x = T2::from_rows({{1, 1}, {-1, 0.5}});
    // row 0: z=(1.6, 0.7) h=(1.6, 0.7) -> (1.6+1.4, 0.7+0.2, -1.6+0.35)
    // row 1: z=(-0.65, 1.7) h=(-0.13, 1.7) -> (-0.13+3.4, 1.7+0.2, 0.13+0.85)
    const T2 y = predict_ingredients(q, x);
    const double ref[2][3] = {{3.0, 0.9, -1.25}, {3.27, 1.9, 0.98}};
    for (size_t i = 0; i < 2; ++i)
      for (size_t j = 0; j < 3; ++j) CHECK(y(i, j) == doctest::Approx(ref[i][j]).epsilon(1e-12));
  }
  SUBCASE("zero weights give logits 0") {
    zero_all(p.ing_predictor);
    const T2 logits = predict_ingredients(p, v);
    for (double z : logits.values()) CHECK(z == 0.0);
  }
}

TEST_CASE("normalize_rows backward matches finite differences") {
  std::mt19937_64 rng(17);
  T2 x = test::random_tensor(3, 4, rng);
  const T2 u = test::random_tensor(3, 4, rng);
  const T2 dx = normalize_rows_backward(x, normalize_rows(x), u);
  T2 g = dx;
  auto loss = [&] {
    const T2 y = normalize_rows(x);
    double s = 0;
    for (size_t i = 0; i < y.size(); ++i) s += y.values()[i] * u.values()[i];
    return s;
  };
  CHECK(finite_diff_check(loss, {{"x", x.values()}}, {{"dx", g.values()}}, 1e-6, 1e-7, 50, 1).passed());
}

TEST_CASE("embed_backward gradient through both branches") {
  const Architecture a = small_arch();
  const auto params = ModelParams<double>::init(a, 18);
  std::mt19937_64 rng(18);
  const T2 img = test::random_tensor(4, a.d_img, rng), rcp = test::random_tensor(4, a.d_rcp, rng);
  const T2 uv = test::random_tensor(4, a.d, rng), ur = test::random_tensor(4, a.d, rng);
  const T2 upv = test::random_tensor(4, a.d, rng), upr = test::random_tensor(4, a.d, rng);
  auto value = [&](const ModelParams<double>& p) {
    const auto e = embed_features(p, img, rcp, true);
    double s = 0;
    for (size_t i = 0; i < uv.size(); ++i) {
      s += e.v_final.values()[i] * uv.values()[i] + e.r_final.values()[i] * ur.values()[i];
      s += e.v_pen.values()[i] * upv.values()[i] + e.r_pen.values()[i] * upr.values()[i];
    }
    return s;
  };
  EmbedCache<double> cache;
  embed_features(params, img, rcp, true, &cache);
  ModelParams<double> grads = params.zeros_like();
  embed_backward(params, cache, EmbedUpstream<double>{upv, upr, uv, ur}, grads);
  CHECK(finite_diff_check(value, params, grads, 1e-5, 1e-6, 200, 2).passed());
}

TEST_CASE("checkpoint round trip") {
  test::TempDir dir;
  const auto p = ModelParams<double>::init(small_arch(), 19);
  save_checkpoint(p, dir.file("m.ckpt"));
  CHECK(checkpoint_precision(dir.file("m.ckpt")) == Precision::f64);
  CHECK(load_checkpoint<double>(dir.file("m.ckpt")) == p);

  const auto pf = ModelParams<float>::init(small_arch(), 19);
  save_checkpoint(pf, dir.file("f.ckpt"));
  CHECK(checkpoint_precision(dir.file("f.ckpt")) == Precision::f32);
  CHECK(load_checkpoint<float>(dir.file("f.ckpt")) == pf);
  CHECK_THROWS_AS(load_checkpoint<double>(dir.file("f.ckpt")), ParseError);

  SUBCASE("layout is stable") {
    const std::string bytes = test::read_file(dir.file("m.ckpt"));
    CHECK(bytes.substr(0, 5) == "XMEM1");
    CHECK(static_cast<unsigned char>(bytes[5]) == 8);
    save_checkpoint(p, dir.file("m2.ckpt"));
    CHECK(test::read_file(dir.file("m2.ckpt")) == bytes);
  }
  SUBCASE("truncated file is rejected") {
    const std::string bytes = test::read_file(dir.file("m.ckpt"));
    test::write_file(dir.file("t.ckpt"), bytes.substr(0, bytes.size() - 3));
    CHECK_THROWS_AS(load_checkpoint<double>(dir.file("t.ckpt")), ParseError);
  }
  SUBCASE("bad magic and trailing bytes") {
    std::string bytes = test::read_file(dir.file("m.ckpt"));
    test::write_file(dir.file("x.ckpt"), bytes + "z");
    CHECK_THROWS_AS(load_checkpoint<double>(dir.file("x.ckpt")), ParseError);
    bytes[0] = 'Y';
    test::write_file(dir.file("y.ckpt"), bytes);
    CHECK_THROWS_AS(load_checkpoint<double>(dir.file("y.ckpt")), ParseError);
  }
  SUBCASE("missing file") { CHECK_THROWS_AS(load_checkpoint<double>(dir.file("none.ckpt")), IoError); }
}
