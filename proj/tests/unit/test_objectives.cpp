// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "bridge.hpp"

#include <cmath>

#include "objectives/micro_problem.hpp"

using namespace scale;
using Mat = Matrix<double>;

namespace {

Mat col(std::initializer_list<double> v) {
  Mat m(static_cast<Eigen::Index>(v.size()), 1);
  Eigen::Index i = 0;
  for (double x : v) m(i++, 0) = x;
  return m;
}

double scalar(Tape<double>& t, Var v) { return t.value(v)(0, 0); }

double aggregate(std::initializer_list<double> e, std::vector<double> s, double alpha) {
  Tape<double> t;
  const std::vector<std::size_t> offsets{0, e.size()};
  return scalar(t, aggregate_negatives(t, t.constant(col(e)), s, offsets, alpha));
}

double u_of(std::initializer_list<double> variances) {
  Mat lv(1, static_cast<Eigen::Index>(variances.size()));
  Eigen::Index i = 0;
  for (double v : variances) lv(0, i++) = std::log(v);
  Tape<double> t;
  return scalar(t, uncertainty(t, t.constant(lv)));
}

double scale_loss_of(double delta, double u, const ScaleHyper& h) {
  Tape<double> t;
  return scalar(t, scale_loss(t, t.constant(col({delta})), t.constant(col({u})), h));
}

double proto_of(const Mat& mu, const Mat& protos, std::size_t pos, double temp) {
  Tape<double> t;
  const std::vector<std::size_t> idx{pos};
  return scalar(t, proto_loss(t, t.constant(mu), t.constant(protos), idx, temp));
}

}  // namespace

TEST_CASE("uncertainty examples") {
  CHECK(u_of({1.0, 1.0, 1.0}) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(u_of({0.5, 1.5}) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(u_of({0.1, 0.2, 0.3, 0.4}) == doctest::Approx(0.25).epsilon(1e-14));
}

TEST_CASE("uncertainty carries no gradient") {
  ParamTensor<double> lv("lv", 1, 3);
  Tape<double> t;
  const Var u = uncertainty(t, t.param(lv));
  CHECK(!t.requires_grad(u));
}

TEST_CASE("aggregate_negatives examples") {
  CHECK(aggregate({1.7}, {0.3}, 0.0) == 1.7);
  CHECK(aggregate({1, 2}, {0, 0}, 1.0) == doctest::Approx(std::log(std::exp(1.0) + std::exp(2.0))).epsilon(1e-14));
  CHECK(aggregate({1, 2}, {0, 0}, 1.0) == doctest::Approx(2.31326).epsilon(1e-5));
  CHECK(aggregate({1, 2}, {1, 0}, 1.0) == doctest::Approx(2.0 + std::log(2.0)).epsilon(1e-14));
  CHECK(aggregate({1, 2}, {1, 0}, 1.0) == doctest::Approx(2.69315).epsilon(1e-5));
  Tape<double> t;
  const std::vector<std::size_t> offsets{0, 0};
  CHECK_THROWS_AS(aggregate_negatives(t, t.constant(Mat(0, 1)), {}, offsets, 1.0), ValidationError);
  CHECK_THROWS_AS(aggregate({1, 2}, {0.5}, 1.0), ValidationError);
}

TEST_CASE("aggregate_negatives with alpha 0 is plain log-sum-exp") {
  std::mt19937_64 gen(4);
  std::normal_distribution<double> n(0, 3);
  for (int trial = 0; trial < 50; ++trial) {
    const double a = n(gen), b = n(gen), c = n(gen);
    const std::vector<double> v{a, b, c};
    CHECK(aggregate({a, b, c}, {n(gen), n(gen), n(gen)}, 0.0) == stable_lse<double>(v));
  }
}

TEST_CASE("similarity bias is monotone and bounded") {
  std::mt19937_64 gen(9);
  std::normal_distribution<double> n(0, 2);
  std::uniform_real_distribution<double> u(0, 1);
  for (int trial = 0; trial < 100; ++trial) {
    const double e0 = n(gen), e1 = n(gen), e2 = n(gen), alpha = 0.1 + 2 * u(gen);
    std::vector<double> s{u(gen), u(gen), u(gen)};
    const double base = aggregate({e0, e1, e2}, s, alpha);
    const double plain = stable_lse<double>(std::vector<double>{e0, e1, e2});
    CHECK(base >= plain - 1e-12);
    CHECK(base <= plain + alpha * *std::max_element(s.begin(), s.end()) + 1e-12);
    std::vector<double> bumped = s;
    bumped[trial % 3] += 0.05;
    CHECK(aggregate({e0, e1, e2}, bumped, alpha) > base);
  }
}

TEST_CASE("energy_gap examples") {
  ScaleHyper h;
  h.tau = 1.0;
  h.beta_u = 0.5;
  Tape<double> t;
  CHECK(scalar(t, energy_gap(t, t.constant(col({3.0})), t.constant(col({3.0})), t.constant(col({2.0})), h)) == 0.0);
  CHECK(scalar(t, energy_gap(t, t.constant(col({1.0})), t.constant(col({2.0})), t.constant(col({1.0})), h)) == -0.5);
  h.beta_u = 0.0;
  CHECK(scalar(t, energy_gap(t, t.constant(col({1.0})), t.constant(col({2.5})), t.constant(col({9.0})), h)) ==
        1.0 - 2.5 + 1.0);
}

TEST_CASE("scale_loss examples") {
  ScaleHyper h;
  CHECK(scale_loss_of(0.0, 0.0, h) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  h.gamma = 2.0;
  CHECK(scale_loss_of(0.0, 1.0, h) == doctest::Approx(std::exp(-2.0) * std::log(2.0)).epsilon(1e-14));
  CHECK(scale_loss_of(0.0, 1.0, h) == doctest::Approx(0.09378).epsilon(1e-4));
  CHECK(scale_loss_of(-800.0, 0.3, h) == 0.0);
  CHECK(scale_loss_of(-50.0, 0.3, h) < 1e-20);
}

TEST_CASE("fixed margin without reweighting is softplus of the plain gap") {
  ScaleHyper h;
  h.alpha = 0;
  h.beta_u = 0;
  h.gamma = 0;
  h.tau = 0.7;
  Tape<double> t;
  const std::vector<std::size_t> offsets{0, 2, 3};
  const std::vector<double> sims{0.4, -0.2, 0.9};
  const Var pos = t.constant(col({1.5, -0.3}));
  const Var neg = aggregate_negatives(t, t.constant(col({0.2, 2.0, -1.0})), sims, offsets, h.alpha);
  const Var u = t.constant(col({0.8, 3.0}));
  const double loss = scalar(t, scale_loss(t, energy_gap(t, pos, neg, u, h), u, h));
  const double lse0 = stable_lse<double>(std::vector<double>{0.2, 2.0});
  const double expected = 0.5 * (stable_softplus(1.5 - lse0 + 0.7) + stable_softplus(-0.3 - (-1.0) + 0.7));
  CHECK(loss == doctest::Approx(expected).epsilon(1e-15));
}

TEST_CASE("uncertainty monotonicities") {
  ScaleHyper h;
  for (double u = 0.0; u < 5.0; u += 0.25) {
    CHECK(std::exp(-h.gamma * (u + 0.25)) < std::exp(-h.gamma * u));
    Tape<double> t;
    const double d0 = scalar(t, energy_gap(t, t.constant(col({1.0})), t.constant(col({0.5})), t.constant(col({u})), h));
    const double d1 =
        scalar(t, energy_gap(t, t.constant(col({1.0})), t.constant(col({0.5})), t.constant(col({u + 0.25})), h));
    CHECK(d1 < d0);
  }
}

TEST_CASE("proto_loss examples") {
  Mat mu(1, 2);
  mu << 1, 0;
  Mat one(1, 2);
  one << 3, 0;
  CHECK(proto_of(mu, one, 0, 0.2) == doctest::Approx(0.0).epsilon(1e-15));
  Mat sym(2, 2);
  sym << 1, 1, 1, -1;
  CHECK(proto_of(mu, sym, 0, 0.2) == doctest::Approx(std::log(2.0)).epsilon(1e-14));
  Mat pn(2, 2);
  pn << 1, 0, 0, 1;
  const double expected = -std::log(std::exp(5.0) / (std::exp(5.0) + 1.0));
  CHECK(proto_of(mu, pn, 0, 0.2) == doctest::Approx(expected).epsilon(1e-13));
  CHECK(proto_of(mu, pn, 0, 0.2) == doctest::Approx(0.006715).epsilon(1e-3));
  CHECK_THROWS_AS(proto_of(mu, pn, 2, 0.2), ValidationError);
}

TEST_CASE("proto_loss is nonnegative and falls as the positive similarity rises") {
  std::mt19937_64 gen(12);
  for (int trial = 0; trial < 50; ++trial) {
    const auto mu = testutil::random_matrix<double>(1, 4, gen());
    auto protos = testutil::random_matrix<double>(3, 4, gen());
    const double before = proto_of(mu, protos, 1, 0.3);
    CHECK(before >= 0.0);
    protos.row(1) = 0.5 * protos.row(1) + 0.5 * mu.row(0) * (protos.row(1).norm() / mu.row(0).norm());
    CHECK(proto_of(mu, protos, 1, 0.3) < before);
  }
}

TEST_CASE("total_loss examples and ablation wiring") {
  ScaleHyper h;
  Tape<double> t;
  const Var neg_elbo = t.constant(col({2.0}));
  const TotalLossVars<double> tl = total_loss(t, neg_elbo, t.constant(col({0.5})), t.constant(col({0.4})), h);
  CHECK(scalar(t, tl.total) == doctest::Approx(2.7).epsilon(1e-15));
  CHECK(scalar(t, tl.weighted_scale) == 0.5);
  CHECK(scalar(t, tl.weighted_proto) == 0.2);
  h.lambda1 = 0;
  h.lambda2 = 0;
  CHECK(scalar(t, total_loss(t, neg_elbo, t.constant(col({0.5})), t.constant(col({0.4})), h).total) == 2.0);
  const Var z = t.constant(col({0.0}));
  CHECK(scalar(t, total_loss(t, z, z, z, ScaleHyper{}).total) == 0.0);
}

TEST_CASE("total_loss attributes non-finite inputs") {
  Tape<double> t;
  const Var ok = t.constant(col({1.0}));
  const Var bad = t.constant(col({std::nan("")}));
  try {
    total_loss(t, ok, ok, bad, ScaleHyper{});
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("l_proto") != std::string::npos);
  }
  CHECK_THROWS_AS(total_loss(t, ok, bad, ok, ScaleHyper{}), NumericError);
}

TEST_CASE("ScaleHyper validation") {
  ScaleHyper h;
  CHECK_NOTHROW(h.validate());
  h.lambda_temp = 0;
  CHECK_THROWS_AS(h.validate(), ValidationError);
  h = {};
  h.alpha = -1;
  CHECK_THROWS_AS(h.validate(), ValidationError);
  h = {};
  h.tau = INFINITY;
  CHECK_THROWS_AS(h.validate(), ValidationError);
}

TEST_CASE("batch objective matches the float64 reference") {
  for (std::uint64_t seed = 0; seed < 25; ++seed) {
    CAPTURE(seed);
    auto c = testutil::micro_case(seed);
    Tape<double> t;
    const auto v = batch_objective(t, c.model, c.in, c.hyper, c.beta, c.eps);
    const auto ref = oracle::reference_objective(testutil::ref_model(c.model), c.ref_batch(),
                                                 testutil::ref_hyper(c.hyper), c.beta);
    CHECK(testutil::rel_diff(scalar(t, v.neg_elbo), ref.neg_elbo) < 1e-5);
    CHECK(testutil::rel_diff(scalar(t, v.l_scale), ref.l_scale) < 1e-5);
    CHECK(testutil::rel_diff(scalar(t, v.l_proto), ref.l_proto) < 1e-5);
    CHECK(testutil::rel_diff(scalar(t, v.total), ref.total) < 1e-5);
  }
}

TEST_CASE("lambda zeroing reduces the objective to -ELBO+ on the same code path") {
  auto c = testutil::micro_case(3);
  c.hyper.lambda1 = 0;
  c.hyper.lambda2 = 0;
  Tape<double> t;
  const auto v = batch_objective(t, c.model, c.in, c.hyper, c.beta, c.eps);
  CHECK(scalar(t, v.total) == scalar(t, v.neg_elbo));
  CHECK(scalar(t, v.weighted_scale) == 0.0);
  CHECK(scalar(t, v.weighted_proto) == 0.0);
}

TEST_CASE("batch objective input validation") {
  auto c = testutil::micro_case(1);
  Tape<double> t;
  auto bad = c.in;
  bad.targets.back() = 99;
  CHECK_THROWS_AS(batch_objective(t, c.model, bad, c.hyper, c.beta, c.eps), ValidationError);
  CHECK_THROWS_AS(batch_objective(t, c.model, c.in, c.hyper, c.beta, Mat(Mat::Zero(1, 4))), ValidationError);
  bad = c.in;
  bad.similarity.pop_back();
  CHECK_THROWS_AS(batch_objective(t, c.model, bad, c.hyper, c.beta, c.eps), ValidationError);
}

TEST_CASE("micro problem gradient matches finite differences") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    CAPTURE(seed);
    MicroProblem mp(seed);
    const auto params = mp.params();
    std::vector<double> grad(params.size());
    mp.gradient(params, grad);
    const auto f = [&](const oracle::Vec& p) {
      const auto e = mp.loss(p);
      return oracle::FdSample{e.loss, e.min_abs_preactivation, e.relu_signature};
    };
    const auto fd = oracle::fd_gradient(f, params, 1e-5);
    std::vector<oracle::GroupSpan> groups;
    for (const auto& g : mp.groups()) groups.push_back({g.name, g.offset, g.size});
    const auto report = oracle::compare_gradients(groups, grad, fd, 1e-4);
    CAPTURE(report.worst_group);
    CAPTURE(report.worst_error);
    CHECK(report.pass);
    CHECK(report.groups.size() == 28);
  }
}

TEST_CASE("micro problem loss equals the objective at its own parameters") {
  MicroProblem mp(2);
  const auto params = mp.params();
  std::vector<double> grad(params.size());
  CHECK(mp.loss(params).loss == mp.gradient(params, grad).loss);
}
