#include <cmath>
#include <cstring>
#include <functional>
#include <vector>

#include "doctest.h"
#include "gpldlab/gpld.hpp"
#include "gpldlab/grad_check.hpp"
#include "gpldlab/rng.hpp"

using namespace gpldlab;
using namespace gpldlab::gpld;
namespace a = gpldlab::ad;

namespace {

a::Tensor rand_mat(Rng& rng, int r, int c, double scl = 1.0) {
  std::vector<double> v(static_cast<std::size_t>(r) * c);
  for (double& x : v) x = scl * rng.normal();
  return a::Tensor::matrix(r, c, std::move(v));
}

// Random 2-layer softmax map u (1 x d) -> K x C table; weights are constants.
struct TwoLayerMap {
  int K, C, d, hidden;
  a::Tensor w1, b1;                // d x hidden, 1 x hidden
  std::vector<a::Tensor> w2, b2;   // per row: hidden x C, 1 x C

  static TwoLayerMap random(Rng& rng, int K, int C, int d, int hidden, double scl = 1.0) {
    TwoLayerMap m{K, C, d, hidden, rand_mat(rng, d, hidden, scl), rand_mat(rng, 1, hidden, scl), {}, {}};
    for (int i = 0; i < K; ++i) {
      m.w2.push_back(rand_mat(rng, hidden, C, scl));
      m.b2.push_back(rand_mat(rng, 1, C, scl));
    }
    return m;
  }

  ProbTable operator()(const a::Tensor& u) const {
    a::Tensor h = a::tanh(a::add(a::matmul(u, w1), b1));
    ProbTable t;
    t.K = K;
    t.C = C;
    t.input = u;
    for (int i = 0; i < K; ++i)
      t.rows.push_back(a::row_softmax(
          a::add(a::matmul(h, w2[static_cast<std::size_t>(i)]), b2[static_cast<std::size_t>(i)])));
    return t;
  }
};

}  // namespace

TEST_CASE("exact penalty of a softmax row at the symmetric point") {
  a::Tape tape;
  a::Tensor u = tape.leaf(a::Tensor::matrix(1, 2, {0.0, 0.0}));
  TableFn fn = [](const a::Tensor& x) {
    ProbTable t;
    t.K = 1;
    t.C = 2;
    t.input = x;
    t.rows.push_back(a::row_softmax(x));
    return t;
  };
  // J = diag(p) - p p^T at p=(1/2,1/2): entries +-0.25, squared Frobenius 0.25
  CHECK(exact_frobenius_penalty(fn, u) == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("exact penalty of a constant table is zero") {
  a::Tape tape;
  a::Tensor u = tape.leaf(a::Tensor::matrix(1, 3, {1.0, 2.0, 3.0}));
  TableFn fn = [](const a::Tensor& x) {
    ProbTable t;
    t.K = 2;
    t.C = 4;
    t.input = x;
    t.rows.push_back(a::row_softmax(a::Tensor::matrix(1, 4, {0.1, 0.2, 0.3, 0.4})));
    t.rows.push_back(a::row_softmax(a::Tensor::matrix(1, 4, {0.0, 0.0, 0.0, 0.0})));
    return t;
  };
  CHECK(exact_frobenius_penalty(fn, u) == 0.0);
}

TEST_CASE("penalty averages over rows: duplicated row matches single row") {
  Rng rng(21);
  auto map1 = TwoLayerMap::random(rng, 1, 4, 3, 5);
  // duplicate the single row
  TwoLayerMap map2 = map1;
  map2.K = 2;
  map2.w2.push_back(map1.w2[0]);
  map2.b2.push_back(map1.b2[0]);

  a::Tape tape;
  a::Tensor u = tape.leaf(rand_mat(rng, 1, 3));
  double p1 = exact_frobenius_penalty([&](const a::Tensor& x) { return map1(x); }, u);
  double p2 = exact_frobenius_penalty([&](const a::Tensor& x) { return map2(x); }, u);
  CHECK(p1 == doctest::Approx(p2).epsilon(1e-12));
}

TEST_CASE("penalty is invariant under row permutation") {
  Rng rng(22);
  auto map = TwoLayerMap::random(rng, 3, 4, 5, 6);
  TwoLayerMap perm = map;
  std::swap(perm.w2[0], perm.w2[2]);
  std::swap(perm.b2[0], perm.b2[2]);

  a::Tape tape;
  a::Tensor u = tape.leaf(rand_mat(rng, 1, 5));
  double p1 = exact_frobenius_penalty([&](const a::Tensor& x) { return map(x); }, u);
  double p2 = exact_frobenius_penalty([&](const a::Tensor& x) { return perm(x); }, u);
  CHECK(p1 == doctest::Approx(p2).epsilon(1e-12));
}

TEST_CASE("all-ones probe on a row-stochastic table contributes nothing") {
  Rng rng(23);
  auto map = TwoLayerMap::random(rng, 2, 5, 4, 6);
  a::Tape tape;
  a::Tensor u = tape.leaf(rand_mat(rng, 1, 4));
  ProbTable table = map(u);
  std::vector<std::vector<double>> ones(2, std::vector<double>(5, 1.0));
  auto rep = hutchinson_penalty_with_probes(table, ones, ProbeMode::kPerRow);
  CHECK(std::fabs(rep.value.scalar_value()) < 1e-20);
}

TEST_CASE("identity linear map: estimator equals Frobenius norm") {
  // q(u) = u * I2; J = I, ||J||_F^2 = 2. For Rademacher probes J^T eps = eps,
  // so each draw is exactly 2.
  a::Tape tape;
  a::Tensor u = tape.leaf(a::Tensor::matrix(1, 2, {0.3, -0.7}));
  TableFn fn = [](const a::Tensor& x) {
    ProbTable t;
    t.K = 1;
    t.C = 2;
    t.input = x;
    t.rows.push_back(a::matmul(x, a::Tensor::matrix(2, 2, {1, 0, 0, 1})));
    return t;
  };
  Rng rng(9);
  double acc = 0.0;
  const int probes = 10000;
  std::size_t mark = tape.size();
  for (int p = 0; p < probes; ++p) {
    auto rep = hutchinson_penalty(fn, u, rng, ProbeMode::kPerRow);
    acc += rep.value.scalar_value();
    tape.truncate(mark);
  }
  double mean = acc / probes;
  CHECK(std::fabs(mean - 2.0) / 2.0 < 0.02);
}

TEST_CASE("fixed seed gives a bit-identical PenaltyReport") {
  Rng seeder(31);
  auto map = TwoLayerMap::random(seeder, 2, 4, 3, 5);
  auto run = [&]() {
    a::Tape tape;
    a::Tensor u = tape.leaf(a::Tensor::matrix(1, 3, {0.2, -0.1, 0.4}));
    Rng rng(555);
    auto rep = hutchinson_penalty([&](const a::Tensor& x) { return map(x); }, u, rng,
                                  ProbeMode::kPerRow);
    return std::make_tuple(rep.value.scalar_value(), rep.probes_used, rep.states_sampled);
  };
  auto r1 = run();
  auto r2 = run();
  double v1 = std::get<0>(r1), v2 = std::get<0>(r2);
  CHECK(std::memcmp(&v1, &v2, sizeof(double)) == 0);
  CHECK(std::get<1>(r1) == std::get<1>(r2));
  CHECK(std::get<2>(r1) == std::get<2>(r2));
}

TEST_CASE("estimator is unbiased for random maps, both probe modes") {
  Rng rng(77);
  const int instances = 8;
  const int probes = 10000;
  for (int inst = 0; inst < instances; ++inst) {
    int K = 1 + rng.uniform_int(4);
    int C = 2 + rng.uniform_int(7);
    int d = 2 + rng.uniform_int(11);
    auto map = TwoLayerMap::random(rng, K, C, d, 6);

    a::Tape tape;
    a::Tensor u = tape.leaf(rand_mat(rng, 1, d));
    double exact = exact_frobenius_penalty([&](const a::Tensor& x) { return map(x); }, u);
    REQUIRE(exact > 0.0);

    ProbTable table = map(u);
    Rng probe_rng = Rng::from_stream(1000, static_cast<std::uint64_t>(inst));
    for (ProbeMode mode : {ProbeMode::kPerRow, ProbeMode::kFullTable}) {
      double acc = 0.0;
      std::size_t mark = tape.size();
      for (int p = 0; p < probes; ++p) {
        std::vector<std::vector<double>> eps(static_cast<std::size_t>(K),
                                             std::vector<double>(static_cast<std::size_t>(C)));
        for (auto& row : eps)
          for (double& x : row) x = probe_rng.rademacher();
        acc += hutchinson_penalty_with_probes(table, eps, mode).value.scalar_value();
        tape.truncate(mark);
      }
      double mean = acc / probes;
      CHECK(std::fabs(mean - exact) / exact < 0.02);
    }
  }
}

TEST_CASE("per-row probes have no higher variance than full-table probes") {
  Rng rng(88);
  const int instances = 6;
  const int probes = 4000;
  for (int inst = 0; inst < instances; ++inst) {
    int K = 2 + rng.uniform_int(3);  // cross terms need K >= 2
    int C = 2 + rng.uniform_int(7);
    int d = 2 + rng.uniform_int(11);
    auto map = TwoLayerMap::random(rng, K, C, d, 6);
    a::Tape tape;
    a::Tensor u = tape.leaf(rand_mat(rng, 1, d));
    ProbTable table = map(u);

    Rng probe_rng = Rng::from_stream(2000, static_cast<std::uint64_t>(inst));
    double s1[2] = {0, 0}, s2[2] = {0, 0};
    std::size_t mark = tape.size();
    for (int p = 0; p < probes; ++p) {
      std::vector<std::vector<double>> eps(static_cast<std::size_t>(K),
                                           std::vector<double>(static_cast<std::size_t>(C)));
      for (auto& row : eps)
        for (double& x : row) x = probe_rng.rademacher();
      double vr = hutchinson_penalty_with_probes(table, eps, ProbeMode::kPerRow).value.scalar_value();
      tape.truncate(mark);
      double vf = hutchinson_penalty_with_probes(table, eps, ProbeMode::kFullTable).value.scalar_value();
      tape.truncate(mark);
      s1[0] += vr;
      s1[1] += vr * vr;
      s2[0] += vf;
      s2[1] += vf * vf;
    }
    double var_row = s1[1] / probes - (s1[0] / probes) * (s1[0] / probes);
    double var_full = s2[1] / probes - (s2[0] / probes) * (s2[0] / probes);
    CHECK(var_row <= var_full * 1.0001 + 1e-12);
  }
}

TEST_CASE("penalty value is trainable: parameter gradient matches exact penalty") {
  // Exhaustive sign enumeration makes the probe mean equal the exact penalty
  // as a function of the parameters, so its autodiff gradient must match
  // finite differences of exact_frobenius_penalty.
  Rng rng(99);
  const int K = 2, C = 3, d = 4, hidden = 5;
  auto w1v = rand_mat(rng, d, hidden).values();
  auto b1v = rand_mat(rng, 1, hidden).values();
  std::vector<std::vector<double>> w2v, b2v;
  for (int i = 0; i < K; ++i) {
    w2v.push_back(rand_mat(rng, hidden, C).values());
    b2v.push_back(rand_mat(rng, 1, C).values());
  }
  std::vector<double> uv = rand_mat(rng, 1, d).values();

  auto build_table = [&](a::Tape& tape, const std::vector<double>& w1_vals,
                         const a::Tensor& u, a::Tensor* w1_out) {
    a::Tensor w1 = tape.leaf(a::Tensor::matrix(d, hidden, w1_vals));
    if (w1_out) *w1_out = w1;
    a::Tensor h = a::tanh(a::add(a::matmul(u, w1), a::Tensor::matrix(1, hidden, b1v)));
    ProbTable t;
    t.K = K;
    t.C = C;
    t.input = u;
    for (int i = 0; i < K; ++i)
      t.rows.push_back(a::row_softmax(a::add(
          a::matmul(h, a::Tensor::matrix(hidden, C, w2v[static_cast<std::size_t>(i)])),
          a::Tensor::matrix(1, C, b2v[static_cast<std::size_t>(i)]))));
    return t;
  };

  // autodiff gradient of the exhaustive-probe mean
  a::Tape tape;
  a::Tensor u = tape.leaf(a::Tensor::matrix(1, d, uv));
  a::Tensor w1;
  ProbTable table = build_table(tape, w1v, u, &w1);
  a::Tensor mean = a::Tensor::scalar(0.0);
  const int patterns = 1 << C;
  for (int pat = 0; pat < patterns; ++pat) {
    std::vector<double> eps(static_cast<std::size_t>(C));
    for (int c = 0; c < C; ++c) eps[static_cast<std::size_t>(c)] = (pat >> c) & 1 ? 1.0 : -1.0;
    std::vector<std::vector<double>> probes(static_cast<std::size_t>(K), eps);
    mean = a::add(mean, hutchinson_penalty_with_probes(table, probes, ProbeMode::kPerRow).value);
  }
  mean = a::scale(mean, 1.0 / patterns);
  auto grad = tape.backward(mean, {&w1, 1}, false);
  REQUIRE(!grad.any_unreachable());

  // finite differences of the exact penalty w.r.t. every W1 entry
  const double eps_fd = 1e-5;
  for (std::size_t j = 0; j < w1v.size(); ++j) {
    auto eval_exact = [&](double delta) {
      std::vector<double> w = w1v;
      w[j] += delta;
      a::Tape t2;
      a::Tensor u2 = t2.leaf(a::Tensor::matrix(1, d, uv));
      return exact_frobenius_penalty(
          [&](const a::Tensor& x) { return build_table(t2, w, x, nullptr); }, u2);
    };
    double fd = (eval_exact(eps_fd) - eval_exact(-eps_fd)) / (2.0 * eps_fd);
    double ga = grad.grads[0].values()[j];
    CHECK(std::fabs(ga - fd) / std::max({std::fabs(ga), std::fabs(fd), 1e-8}) < 1e-4);
  }
}

TEST_CASE("sample_batch_indices") {
  Rng rng(4);
  CHECK(sample_batch_indices(16, 0.5, rng).size() == 8);
  auto all = sample_batch_indices(4, 1.0, rng);
  CHECK(all == std::vector<int>{0, 1, 2, 3});
  CHECK(sample_batch_indices(3, 0.1, rng).size() == 1);  // floor clamped to 1
  for (int rep = 0; rep < 50; ++rep) {
    auto s = sample_batch_indices(10, 0.37, rng);
    CHECK(s.size() == 3);
    for (std::size_t i = 0; i + 1 < s.size(); ++i) CHECK(s[i] < s[i + 1]);
    for (int v : s) CHECK((v >= 0 && v < 10));
  }
  CHECK_THROWS_AS(sample_batch_indices(8, 0.0, rng), DomainError);
  CHECK_THROWS_AS(sample_batch_indices(8, 1.5, rng), DomainError);
}

TEST_CASE("decay schedule") {
  CHECK(decay_lambda(0.5, 0, 1000, 0.001, true) == 0.5);
  CHECK(decay_lambda(0.5, 3000, 1000, 0.001, true) == doctest::Approx(0.25).epsilon(1e-15));
  CHECK(decay_lambda(0.5, 1000000000L, 1000, 0.001, true) == 0.001);
  CHECK(decay_lambda(0.5, 123456, 1000, 0.001, false) == 0.5);  // floor only under decay
  double prev = 1e300;
  for (long t : {0L, 10L, 100L, 1000L, 10000L, 100000L, 10000000L}) {
    double v = decay_lambda(0.5, t, 1000, 0.001, true);
    CHECK(v <= prev);
    CHECK(v >= 0.001);
    prev = v;
  }
  CHECK_THROWS_AS(decay_lambda(0.5, 10, 0.0, 0.001, true), DomainError);
  CHECK_THROWS_AS(decay_lambda(0.5, -1, 1000, 0.001, true), DomainError);
}

TEST_CASE("GpldConfig defaults and validation") {
  GpldConfig cfg;
  CHECK(cfg.lambda0_post == 0.5);
  CHECK(cfg.lambda0_prior == 0.0);
  CHECK(cfg.rho == 0.5);
  CHECK(cfg.decay_scale == 1000.0);
  CHECK(cfg.lambda_min == 0.001);
  CHECK(cfg.decay_enabled);
  CHECK(cfg.probe_mode == ProbeMode::kPerRow);
  cfg.validate();

  GpldConfig bad = cfg;
  bad.rho = 0.0;
  CHECK_THROWS_AS(bad.validate(), DomainError);
  bad = cfg;
  bad.lambda_min = 0.9;
  CHECK_THROWS_AS(bad.validate(), DomainError);
  bad = cfg;
  bad.lambda0_post = -0.1;
  CHECK_THROWS_AS(bad.validate(), DomainError);
}

TEST_CASE("ProbTable validation") {
  Rng rng(6);
  auto map = TwoLayerMap::random(rng, 2, 4, 3, 5);
  a::Tape tape;
  a::Tensor u = tape.leaf(rand_mat(rng, 1, 3));
  ProbTable t = map(u);
  t.validate();  // softmax rows are stochastic

  ProbTable bad = t;
  bad.rows[0] = a::Tensor::matrix(1, 4, {0.5, 0.5, 0.5, 0.5});
  CHECK_THROWS_AS(bad.validate(), DomainError);
}
