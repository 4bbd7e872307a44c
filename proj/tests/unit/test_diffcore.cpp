// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "helpers.hpp"

#include <cmath>
#include <functional>

#include "common/rng.hpp"
#include "diffcore/mlp.hpp"
#include "diffcore/numerics.hpp"
#include "diffcore/ops.hpp"

using namespace scale;
using testutil::random_matrix;
using Mat = Matrix<double>;

TEST_CASE("stable_lse examples") {
  const std::vector<double> zeros{0.0, 0.0};
  CHECK(stable_lse<double>(zeros) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  const std::vector<double> big{1000.0, 1000.0};
  CHECK(stable_lse<double>(big) == doctest::Approx(1000.0 + std::log(2.0)).epsilon(1e-15));
  const std::vector<double> v{1.0, 2.0};
  const double reference = std::log(std::exp(1.0) + std::exp(2.0));
  CHECK(stable_lse<double>(v) == doctest::Approx(reference).epsilon(1e-14));
  CHECK(stable_lse<double>(v) == doctest::Approx(2.31326).epsilon(1e-5));
  const std::vector<double> huge{1e30, 1e30};
  CHECK(std::isfinite(stable_lse<double>(huge)));
  CHECK_THROWS_AS(stable_lse<double>(std::vector<double>{}), ValidationError);
}

TEST_CASE("stable_lse is shift equivariant and bounded") {
  std::mt19937_64 gen(11);
  std::normal_distribution<double> n(0, 5);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> v(1 + trial % 9);
    for (double& x : v) x = n(gen);
    const double c = n(gen) * 10;
    std::vector<double> shifted = v;
    for (double& x : shifted) x += c;
    CHECK(stable_lse<double>(shifted) == doctest::Approx(stable_lse<double>(v) + c).epsilon(1e-12));
    const double m = *std::max_element(v.begin(), v.end());
    const double lse = stable_lse<double>(v);
    CHECK(lse >= m);
    CHECK(lse <= m + std::log(static_cast<double>(v.size())) + 1e-12);
  }
}

TEST_CASE("stable_softplus examples and identities") {
  CHECK(stable_softplus(0.0) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  const double tiny = stable_softplus(-40.0);
  CHECK(tiny > 0.0);
  CHECK(tiny == doctest::Approx(std::exp(-40.0)).epsilon(1e-12));
  CHECK(stable_softplus(3.0) == doctest::Approx(std::log1p(std::exp(3.0))).epsilon(1e-14));
  CHECK(stable_softplus(3.0) == doctest::Approx(3.048587).epsilon(1e-6));
  CHECK(stable_softplus(800.0) == 800.0);
  std::mt19937_64 gen(3);
  std::uniform_real_distribution<double> u(-50, 50);
  double prev_x = -60, prev = stable_softplus(prev_x);
  for (int i = 0; i < 500; ++i) {
    const double x = u(gen);
    CHECK(std::fabs(stable_softplus(x) - stable_softplus(-x) - x) < 1e-6);
    CHECK(stable_softplus(x) >= 0.0);
    CHECK(stable_softplus(x) >= x);
  }
  for (double x = -59; x < 60; x += 0.5) {
    const double y = stable_softplus(x);
    CHECK(y > prev);
    prev = y;
    prev_x = x;
  }
}

TEST_CASE("cosine_sim examples") {
  const std::vector<double> a{1.0, 2.0}, b{2.0, 1.0}, e1{1.0, 0.0}, e2{0.0, 1.0}, zero{0.0, 0.0};
  CHECK(cosine_sim<double>(a, a) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(cosine_sim<double>(e1, e2) == 0.0);
  CHECK(cosine_sim<double>(a, b) == doctest::Approx(0.8).epsilon(1e-15));
  CHECK(cosine_sim<double>(zero, a) == 0.0);
  CHECK(cosine_sim<double>(zero, zero) == 0.0);
}

TEST_CASE("mlp_forward: zero parameters give zero output") {
  MlpParams<float> p("m", MlpSpec::quarter(12, 5));
  Tape<float> t;
  const Var y = mlp_forward(t, p, t.constant(random_matrix<float>(4, 12, 1)));
  CHECK(t.value(y).isZero(0));
}

TEST_CASE("mlp_forward: identity construction") {
  MlpParams<double> p("m", MlpSpec{3, 3, 3, Activation::kRelu});
  p.w1.value = Mat::Identity(3, 3);
  p.w2.value = Mat::Identity(3, 3);
  Tape<double> t;
  const Mat x = random_matrix<double>(5, 3, 2).cwiseAbs();
  CHECK(t.value(mlp_forward(t, p, t.constant(x))) == x);
}

TEST_CASE("mlp_forward matches the float64 oracle") {
  Rng rng(5);
  MlpParams<float> p("m", MlpSpec::quarter(16, 4));
  p.init(rng);
  const auto x = random_matrix<float>(6, 16, 9);
  Tape<float> t;
  const auto& y = t.value(mlp_forward(t, p, t.constant(x)));
  const auto l1 = testutil::layer(p.w1, p.b1);
  const auto l2 = testutil::layer(p.w2, p.b2);
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const auto ref = oracle::ref_mlp(l1, l2, testutil::row(x, r));
    for (std::size_t c = 0; c < ref.size(); ++c) CHECK(testutil::rel_diff(y(r, c), ref[c]) < 1e-5);
  }
}

TEST_CASE("mlp_forward rejects a width mismatch") {
  MlpParams<double> p("m", MlpSpec::quarter(8, 2));
  Tape<double> t;
  CHECK_THROWS_AS(mlp_forward(t, p, t.constant(Mat::Zero(2, 7))), ValidationError);
}

TEST_CASE("MlpSpec quarter sizing") {
  CHECK(MlpSpec::quarter(256, 10).hidden_dim == 64);
  CHECK(MlpSpec::quarter(18, 10).hidden_dim == 5);  // 4.5 rounds away from zero
  CHECK(MlpSpec::quarter(1, 1).hidden_dim == 1);
}

TEST_CASE("backward: linear and quadratic losses") {
  ParamTensor<double> p("p", 3, 4);
  p.value = random_matrix<double>(3, 4, 4);
  {
    Tape<double> t;
    p.zero_grad();
    t.backward(ad::sum_all(t, t.param(p)));
    CHECK(p.grad == Mat::Ones(3, 4));
  }
  {
    Tape<double> t;
    p.zero_grad();
    const Var v = t.param(p);
    t.backward(ad::scale(t, ad::sum_all(t, ad::mul(t, v, v)), 0.5));
    CHECK((p.grad - p.value).cwiseAbs().maxCoeff() < 1e-15);
  }
}

TEST_CASE("backward: unreachable parameters keep a zero gradient") {
  ParamTensor<double> used("used", 1, 2), unused("unused", 2, 2);
  used.value << 1, 2;
  unused.zero_grad();
  Tape<double> t;
  t.param(unused);
  t.backward(ad::sum_all(t, t.param(used)));
  CHECK(unused.grad.isZero(0));
}

TEST_CASE("backward: non-finite values abort and name the node") {
  ParamTensor<double> p("p", 1, 1);
  p.value(0, 0) = 1000.0;
  Tape<double> t;
  const Var e = ad::exp(t, t.param(p));
  try {
    t.backward(ad::sum_all(t, e));
    FAIL("expected NumericError");
  } catch (const NumericError& err) {
    CHECK(std::string(err.what()).find("exp") != std::string::npos);
  }
}

TEST_CASE("forward values are bitwise deterministic") {
  Rng r1(8), r2(8);
  MlpParams<float> a("m", MlpSpec::quarter(20, 6)), b("m", MlpSpec::quarter(20, 6));
  a.init(r1);
  b.init(r2);
  const auto x = random_matrix<float>(7, 20, 1);
  Tape<float> ta, tb;
  CHECK(ta.value(mlp_forward(ta, a, ta.constant(x))) == tb.value(mlp_forward(tb, b, tb.constant(x))));
}

// ---- per-op gradient certification ----------------------------------------

namespace {

using Build = std::function<Var(Tape<double>&, const std::vector<Var>&)>;

/// loss = sum(op(params) .* R) for a fixed random R; compares reverse mode to
/// oracle central differences on every parameter element.
void certify(const char* name, std::vector<ParamTensor<double>> ps, const Build& build, std::uint64_t seed = 1) {
  CAPTURE(name);
  Mat weights;
  auto evaluate = [&](bool grad) {
    Tape<double> t;
    std::vector<Var> vars;
    for (auto& p : ps) {
      if (grad) p.zero_grad();
      vars.push_back(t.param(p));
    }
    const Var out = build(t, vars);
    if (weights.size() == 0) weights = random_matrix<double>(t.value(out).rows(), t.value(out).cols(), seed + 99);
    const Var loss = ad::sum_all(t, ad::mul(t, out, t.constant(weights)));
    if (grad) t.backward(loss);
    oracle::FdSample s;
    s.value = t.value(loss)(0, 0);
    s.min_abs_preact = t.min_abs_preactivation();
    s.signature = t.relu_signature();
    return s;
  };

  evaluate(true);
  oracle::Vec flat, analytic;
  for (auto& p : ps) {
    for (Eigen::Index i = 0; i < p.value.size(); ++i) {
      flat.push_back(p.value.data()[i]);
      analytic.push_back(p.grad.data()[i]);
    }
  }
  const auto f = [&](const oracle::Vec& x) {
    std::size_t k = 0;
    for (auto& p : ps) {
      for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] = x[k++];
    }
    return evaluate(false);
  };
  const oracle::FdResult fd = oracle::fd_gradient(f, flat, 1e-5);
  f(flat);
  std::size_t checked = 0;
  for (std::size_t i = 0; i < flat.size(); ++i) {
    if (fd.excluded[i]) continue;
    ++checked;
    CAPTURE(i);
    CHECK(oracle::relative_error(analytic[i], fd.gradient[i]) < 1e-4);
  }
  CHECK(checked > 0);
}

ParamTensor<double> rnd(const char* n, Eigen::Index r, Eigen::Index c, std::uint64_t seed) {
  ParamTensor<double> p(n, r, c);
  p.value = random_matrix<double>(r, c, seed);
  return p;
}

}  // namespace

TEST_CASE("gradient certification of every op") {
  certify("affine", {rnd("x", 4, 5, 1), rnd("w", 3, 5, 2), rnd("b", 1, 3, 3)},
          [](auto& t, const auto& v) { return ad::affine(t, v[0], v[1], v[2]); });
  const std::vector<std::size_t> ia{0, 1, 1, 2, 0}, ib{1, 0, 1, 1, 0};
  certify("affine_pairs", {rnd("a", 3, 4, 4), rnd("b", 2, 3, 5), rnd("w", 2, 7, 6), rnd("bias", 1, 2, 7)},
          [&](auto& t, const auto& v) { return ad::affine_pairs(t, v[0], ia, v[1], ib, v[2], v[3]); });
  certify("relu", {rnd("x", 5, 6, 8)}, [](auto& t, const auto& v) { return ad::relu(t, v[0]); });
  certify("concat_cols", {rnd("a", 3, 2, 9), rnd("b", 3, 4, 10)},
          [](auto& t, const auto& v) { return ad::concat_cols(t, v[0], v[1]); });
  const std::vector<std::size_t> rows{2, 0, 2, 1};
  certify("gather_rows", {rnd("x", 3, 4, 11)}, [&](auto& t, const auto& v) { return ad::gather_rows(t, v[0], rows); });
  const std::vector<std::size_t> flat{5, 0, 5, 11, 3};
  certify("gather_elems", {rnd("x", 3, 4, 12)}, [&](auto& t, const auto& v) { return ad::gather_elems(t, v[0], flat); });
  certify("clamp", {rnd("x", 4, 4, 13)}, [](auto& t, const auto& v) { return ad::clamp(t, v[0], -0.5, 0.7); });
  certify("exp", {rnd("x", 3, 3, 14)}, [](auto& t, const auto& v) { return ad::exp(t, v[0]); });
  certify("add", {rnd("a", 2, 3, 15), rnd("b", 2, 3, 16)}, [](auto& t, const auto& v) { return ad::add(t, v[0], v[1]); });
  certify("sub", {rnd("a", 2, 3, 17), rnd("b", 2, 3, 18)}, [](auto& t, const auto& v) { return ad::sub(t, v[0], v[1]); });
  certify("mul", {rnd("a", 2, 3, 19), rnd("b", 2, 3, 20)}, [](auto& t, const auto& v) { return ad::mul(t, v[0], v[1]); });
  certify("scale", {rnd("x", 2, 3, 21)}, [](auto& t, const auto& v) { return ad::scale(t, v[0], -1.7); });
  certify("add_scalar", {rnd("x", 2, 3, 22)}, [](auto& t, const auto& v) { return ad::add_scalar(t, v[0], 0.3); });
  certify("row_sum", {rnd("x", 4, 3, 23)}, [](auto& t, const auto& v) { return ad::row_sum(t, v[0]); });
  certify("row_mean", {rnd("x", 4, 3, 24)}, [](auto& t, const auto& v) { return ad::row_mean(t, v[0]); });
  certify("mean_all", {rnd("x", 4, 3, 25)}, [](auto& t, const auto& v) { return ad::mean_all(t, v[0]); });
  certify("softplus", {rnd("x", 4, 3, 26)}, [](auto& t, const auto& v) { return ad::softplus(t, v[0]); });
  const std::vector<std::size_t> offsets{0, 2, 3, 7};
  certify("segment_lse", {rnd("x", 7, 1, 27)},
          [&](auto& t, const auto& v) { return ad::segment_lse(t, v[0], offsets); });
  certify("cosine_matrix", {rnd("a", 3, 4, 28), rnd("b", 5, 4, 29)},
          [](auto& t, const auto& v) { return ad::cosine_matrix(t, v[0], v[1]); });
  const std::vector<std::size_t> targets{1, 0, 3};
  certify("row_cross_entropy", {rnd("x", 3, 4, 30)},
          [&](auto& t, const auto& v) { return ad::row_cross_entropy(t, v[0], targets); });
}

TEST_CASE("relu subgradient at zero is zero") {
  ParamTensor<double> p("p", 1, 3);
  p.value << -1.0, 0.0, 2.0;
  p.zero_grad();
  Tape<double> t;
  t.backward(ad::sum_all(t, ad::relu(t, t.param(p))));
  CHECK(p.grad(0, 0) == 0.0);
  CHECK(p.grad(0, 1) == 0.0);
  CHECK(p.grad(0, 2) == 1.0);
  CHECK(t.min_abs_preactivation() == 0.0);
}

TEST_CASE("stop_gradient blocks gradient flow") {
  ParamTensor<double> p("p", 1, 2);
  p.value << 1.0, 2.0;
  p.zero_grad();
  Tape<double> t;
  const Var v = t.param(p);
  t.backward(ad::sum_all(t, ad::add(t, v, ad::stop_gradient(t, ad::scale(t, v, 5.0)))));
  CHECK(p.grad == Mat::Ones(1, 2));
}

TEST_CASE("ops reject mismatched shapes") {
  Tape<double> t;
  const Var a = t.constant(Mat::Zero(2, 3));
  const Var b = t.constant(Mat::Zero(3, 2));
  CHECK_THROWS_AS(ad::add(t, a, b), ValidationError);
  CHECK_THROWS_AS(ad::concat_cols(t, a, b), ValidationError);
  CHECK_THROWS_AS(ad::affine(t, a, b, t.constant(Mat::Zero(1, 2))), ValidationError);
}
