#include <cmath>
#include <cstdio>
#include <vector>

#include "doctest.h"
#include "gpldlab/envs.hpp"

using namespace gpldlab;
using namespace gpldlab::envs;

TEST_CASE("pendulum dynamics") {
  SUBCASE("hanging state is a fixed point") {
    PendulumState s{M_PI, 0.0};
    pendulum_step(s, 0.0);
    CHECK(std::fabs(std::fabs(s.theta) - M_PI) < 1e-10);
    CHECK(std::fabs(s.omega) < 1e-10);
  }
  SUBCASE("reward is 1 at the upright rest point") {
    PendulumState s{0.0, 0.0};
    auto r = pendulum_step(s, 0.0);
    CHECK(r.reward == 1.0);
  }
  SUBCASE("frictionless swings conserve energy within 2% per step") {
    PendulumParams p;
    p.friction = 0.0;
    PendulumState s{2.0, 1.0};
    // Energy oracle matched to the integrator: symplectic Euler preserves the
    // first-order modified Hamiltonian, so that is the conserved quantity to
    // test per step. The plain mechanical energy oscillates in a bounded band
    // (checked below) but never drifts.
    auto shadow = [&](const PendulumState& st) {
      return 0.5 * st.omega * st.omega + (p.g / p.l) * (1.0 - std::cos(st.theta)) -
             0.5 * p.dt * st.omega * (p.g / p.l) * std::sin(st.theta);
    };
    auto plain = [&](const PendulumState& st) {
      return 0.5 * st.omega * st.omega + (p.g / p.l) * (1.0 - std::cos(st.theta));
    };
    const double e0 = plain(s);
    double e_shadow = shadow(s);
    double lo = e0, hi = e0;
    for (int t = 0; t < 400; ++t) {
      pendulum_step(s, 0.0, p);
      double e2 = shadow(s);
      CHECK(std::fabs(e2 - e_shadow) / e_shadow < 0.02);
      e_shadow = e2;
      lo = std::min(lo, plain(s));
      hi = std::max(hi, plain(s));
    }
    CHECK(hi - lo < 0.2 * e0);  // bounded oscillation, no secular drift
  }
  SUBCASE("theta stays wrapped") {
    Rng rng(3);
    PendulumState s{3.0, 2.5};
    for (int t = 0; t < 500; ++t) {
      pendulum_step(s, rng.uniform(-1.0, 1.0));
      CHECK(s.theta > -M_PI);
      CHECK(s.theta <= M_PI);
    }
  }
}

TEST_CASE("bouncing ball dynamics") {
  SUBCASE("free fall matches the semi-implicit update exactly") {
    BallParams p;
    BallState s{1.0, 0.0, 1.0};
    bouncing_ball_step(s, 0.0, p);
    // v1 = -g dt, y1 = 1 - g dt^2
    CHECK(s.v == doctest::Approx(-p.g * p.dt).epsilon(1e-15));
    CHECK(s.y == doctest::Approx(1.0 - p.g * p.dt * p.dt).epsilon(1e-15));
  }
  SUBCASE("impact reflects velocity with restitution 0.8") {
    BallParams p;
    BallState s{0.01, -1.0, 1.0};
    bouncing_ball_step(s, 0.0, p);
    double v_pre = -1.0 - p.g * p.dt;          // velocity after gravity
    CHECK(s.v == doctest::Approx(-p.restitution * v_pre).epsilon(1e-12));
    CHECK(s.y >= 0.0);
  }
  SUBCASE("y stays non-negative under random control") {
    Rng rng(5);
    BallState s{1.5, 0.0, 1.0};
    for (int t = 0; t < 1000; ++t) {
      bouncing_ball_step(s, rng.uniform(-1.0, 1.0));
      CHECK(s.y >= 0.0);
    }
  }
}

TEST_CASE("smoothness probes") {
  SUBCASE("pendulum one-step map has a continuous Jacobian") {
    Rng rng(11);
    double worst_large = 0.0, worst_small = 0.0;
    for (int rep = 0; rep < 100; ++rep) {
      std::vector<double> x{rng.uniform(-2.5, 2.5), rng.uniform(-2.0, 2.0)};
      double a = rng.uniform(-0.8, 0.8);
      auto jac_at = [&](double off, double delta) {
        std::vector<double> xs = x;
        xs[0] += off;
        return numerical_step_jacobian(EnvKind::kPendulum, xs, a, delta);
      };
      for (double d : {1e-2, 1e-4}) {
        auto j0 = jac_at(0.0, 1e-6);
        auto j1 = jac_at(d, 1e-6);
        double diff = 0.0;
        for (std::size_t i = 0; i < j0.size(); ++i) diff = std::max(diff, std::fabs(j1[i] - j0[i]));
        (d == 1e-2 ? worst_large : worst_small) = std::max(d == 1e-2 ? worst_large : worst_small, diff);
      }
    }
    CHECK(worst_small < worst_large);
    CHECK(worst_small < 1e-3);
  }
  SUBCASE("ball Jacobian is smooth away from impacts, discontinuous at them") {
    // high above ground: smooth
    std::vector<double> x{1.5, -0.5, 1.0};
    auto j0 = numerical_step_jacobian(EnvKind::kBouncingBall, x, 0.0, 1e-6);
    std::vector<double> x2 = x;
    x2[0] += 1e-4;
    auto j1 = numerical_step_jacobian(EnvKind::kBouncingBall, x2, 0.0, 1e-6);
    double diff = 0.0;
    for (std::size_t i = 0; i < j0.size(); ++i) diff = std::max(diff, std::fabs(j1[i] - j0[i]));
    CHECK(diff < 1e-6);

    // straddling the floor crossing: the velocity row flips sign
    std::vector<double> xi{0.03, -1.0, 1.0};  // this step crosses y=0
    auto ji = numerical_step_jacobian(EnvKind::kBouncingBall, xi, 0.0, 1e-6);
    std::vector<double> xa{0.30, -1.0, 1.0};  // this one does not
    auto ja = numerical_step_jacobian(EnvKind::kBouncingBall, xa, 0.0, 1e-6);
    double jump = 0.0;
    for (std::size_t i = 0; i < ji.size(); ++i) jump = std::max(jump, std::fabs(ji[i] - ja[i]));
    CHECK(jump > 0.5);  // genuinely non-smooth at impacts
  }
}

TEST_CASE("collect_episodes") {
  SUBCASE("counting and terminal flags") {
    Rng rng(21);
    CollectOptions opt;
    opt.n_episodes = 2;
    opt.episode_len = 10;
    Dataset ds = collect_episodes(EnvKind::kPendulum, opt, rng);
    CHECK(ds.n_transitions() == 20);
    int terminals = 0;
    for (const Episode& e : ds.episodes)
      for (const Transition& t : e.steps) terminals += t.continuation == 0 ? 1 : 0;
    CHECK(terminals == 2);
    CHECK(ds.obs_dim == 3);
    CHECK(ds.act_dim == 1);
  }
  SUBCASE("noiseless collection is deterministic in the seed") {
    CollectOptions opt;
    opt.n_episodes = 3;
    opt.episode_len = 17;
    Rng r1(99), r2(99);
    Dataset a = collect_episodes(EnvKind::kBouncingBall, opt, r1);
    Dataset b = collect_episodes(EnvKind::kBouncingBall, opt, r2);
    REQUIRE(a.n_transitions() == b.n_transitions());
    for (std::size_t e = 0; e < a.episodes.size(); ++e)
      for (std::size_t t = 0; t < a.episodes[e].steps.size(); ++t) {
        CHECK(a.episodes[e].steps[t].obs == b.episodes[e].steps[t].obs);
        CHECK(a.episodes[e].steps[t].reward == b.episodes[e].steps[t].reward);
      }
  }
  SUBCASE("scripted sinusoid settles toward the upright basin") {
    // Worst-case start near hanging; the swing must pass |theta| < pi/2
    // within 200 steps.
    for (std::uint64_t seed : {1ull, 2ull, 3ull, 4ull, 5ull}) {
      Rng rng(seed);
      PendulumState s{M_PI - 0.05, 0.0};
      CollectOptions opt;
      bool reached = false;
      for (int t = 0; t < 200 && !reached; ++t) {
        double a = opt.sinusoid_amp * std::sin(2.0 * M_PI * t / opt.sinusoid_period);
        pendulum_step(s, a);
        reached = std::fabs(s.theta) < M_PI / 2.0;
      }
      CHECK(reached);
    }
  }
}

TEST_CASE("dataset round trip") {
  Rng rng(77);
  CollectOptions opt;
  opt.n_episodes = 2;
  opt.episode_len = 12;
  opt.obs_noise = 0.05;
  Dataset ds = collect_episodes(EnvKind::kPendulum, opt, rng);
  const char* path = "test_dataset_roundtrip.txt";
  ds.save(path);
  Dataset back = Dataset::load(path);
  CHECK(back.env == ds.env);
  CHECK(back.n_transitions() == ds.n_transitions());
  for (std::size_t e = 0; e < ds.episodes.size(); ++e)
    for (std::size_t t = 0; t < ds.episodes[e].steps.size(); ++t) {
      const Transition& x = ds.episodes[e].steps[t];
      const Transition& y = back.episodes[e].steps[t];
      CHECK(x.obs == y.obs);  // %.17g round-trips doubles exactly
      CHECK(x.action == y.action);
      CHECK(x.reward == y.reward);
      CHECK(x.continuation == y.continuation);
    }
  std::remove(path);
}
