#include "gpldlab/envs.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "gpldlab/error.hpp"

namespace gpldlab::envs {

namespace {

double wrap_angle(double theta) {
  // wrap to (-pi, pi]
  theta = std::fmod(theta + M_PI, 2.0 * M_PI);
  if (theta <= 0.0) theta += 2.0 * M_PI;
  return theta - M_PI;
}

double clamp_action(double a) { return a < -1.0 ? -1.0 : (a > 1.0 ? 1.0 : a); }

}  // namespace

StepResult pendulum_step(PendulumState& s, double torque, const PendulumParams& p) {
  torque = clamp_action(torque);
  double accel = -(p.g / p.l) * std::sin(s.theta) + torque * p.tau_max - p.friction * s.omega;
  s.omega += p.dt * accel;
  s.theta = wrap_angle(s.theta + p.dt * s.omega);
  return {std::cos(s.theta)};
}

StepResult bouncing_ball_step(BallState& s, double thrust, const BallParams& p) {
  thrust = clamp_action(thrust);
  s.v += p.dt * (-p.g + thrust * p.thrust_max);
  s.y += p.dt * s.v;
  if (s.y < 0.0) {
    s.y = -s.y;  // mirror back above the floor
    s.v = -p.restitution * s.v;
  }
  return {-std::fabs(s.y - s.x_target)};
}

EnvKind env_from_name(const std::string& name) {
  if (name == "pendulum") return EnvKind::kPendulum;
  if (name == "bouncing_ball") return EnvKind::kBouncingBall;
  throw DomainError("unknown environment: " + name);
}

const char* env_name(EnvKind kind) {
  return kind == EnvKind::kPendulum ? "pendulum" : "bouncing_ball";
}

int obs_dim(EnvKind) { return 3; }

PolicyKind policy_from_name(const std::string& name) {
  if (name == "uniform-random") return PolicyKind::kUniformRandom;
  if (name == "scripted-sinusoid") return PolicyKind::kScriptedSinusoid;
  throw DomainError("unknown policy: " + name);
}

int Dataset::n_transitions() const {
  int n = 0;
  for (const Episode& e : episodes) n += static_cast<int>(e.steps.size());
  return n;
}

Dataset collect_episodes(EnvKind env, const CollectOptions& opt, Rng& rng) {
  if (opt.n_episodes < 1) throw DomainError("collect_episodes: n_episodes must be >= 1");
  if (opt.episode_len < 1) throw DomainError("collect_episodes: episode_len must be >= 1");

  Dataset ds;
  ds.env = env_name(env);
  ds.obs_dim = obs_dim(env);
  ds.act_dim = kActDim;
  ds.episode_len = opt.episode_len;

  for (int e = 0; e < opt.n_episodes; ++e) {
    Episode ep;
    PendulumState ps{rng.uniform(-M_PI, M_PI), rng.uniform(-1.0, 1.0)};
    BallState bs{rng.uniform(0.5, 2.0), rng.uniform(-1.0, 1.0), rng.uniform(0.5, 1.5)};
    for (int t = 0; t < opt.episode_len; ++t) {
      Transition tr;
      if (env == EnvKind::kPendulum)
        tr.obs = {std::cos(ps.theta), std::sin(ps.theta), ps.omega};
      else
        tr.obs = {bs.y, bs.v, bs.x_target};
      if (opt.obs_noise > 0.0)
        for (double& o : tr.obs) o += opt.obs_noise * rng.normal();

      double action = 0.0;
      switch (opt.policy) {
        case PolicyKind::kUniformRandom:
          action = rng.uniform(-1.0, 1.0);
          break;
        case PolicyKind::kScriptedSinusoid:
          action = opt.sinusoid_amp * std::sin(2.0 * M_PI * t / opt.sinusoid_period);
          break;
      }
      action = clamp_action(action);
      tr.action = {action};

      StepResult res = env == EnvKind::kPendulum ? pendulum_step(ps, action)
                                                 : bouncing_ball_step(bs, action);
      tr.reward = res.reward;
      tr.continuation = (t == opt.episode_len - 1) ? 0 : 1;
      ep.steps.push_back(std::move(tr));
    }
    ds.episodes.push_back(std::move(ep));
  }
  return ds;
}

void Dataset::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open dataset file for writing: " + path);
  char buf[64];
  out << "gpldlab_dataset 1\n";
  out << "env " << env << "\n";
  out << "obs_dim " << obs_dim << " act_dim " << act_dim << "\n";
  out << "episodes " << episodes.size() << " episode_len " << episode_len << "\n";
  for (std::size_t e = 0; e < episodes.size(); ++e) {
    out << "E " << e << "\n";
    for (const Transition& tr : episodes[e].steps) {
      std::string line;
      auto emit = [&](double v) {
        std::snprintf(buf, sizeof buf, "%.17g", v);
        line += buf;
        line += ' ';
      };
      for (double o : tr.obs) emit(o);
      for (double a : tr.action) emit(a);
      emit(tr.reward);
      line += tr.continuation ? '1' : '0';
      out << line << "\n";
    }
  }
  if (!out) throw IoError("failed writing dataset: " + path);
}

Dataset Dataset::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open dataset file: " + path);
  std::string tag;
  int version = 0;
  in >> tag >> version;
  if (tag != "gpldlab_dataset" || version != 1)
    throw IoError("bad dataset header in " + path);
  Dataset ds;
  std::string key;
  std::size_t n_eps = 0;
  in >> key >> ds.env;
  in >> key >> ds.obs_dim >> key >> ds.act_dim;
  in >> key >> n_eps >> key >> ds.episode_len;
  for (std::size_t e = 0; e < n_eps; ++e) {
    std::size_t idx = 0;
    in >> key >> idx;
    if (key != "E" || idx != e) throw IoError("bad episode marker in " + path);
    Episode ep;
    for (int t = 0; t < ds.episode_len; ++t) {
      Transition tr;
      tr.obs.resize(static_cast<std::size_t>(ds.obs_dim));
      tr.action.resize(static_cast<std::size_t>(ds.act_dim));
      for (double& o : tr.obs) in >> o;
      for (double& a : tr.action) in >> a;
      in >> tr.reward >> tr.continuation;
      if (!in) throw IoError("truncated dataset: " + path);
      ep.steps.push_back(std::move(tr));
    }
    ds.episodes.push_back(std::move(ep));
  }
  return ds;
}

std::vector<double> numerical_step_jacobian(EnvKind env, const std::vector<double>& state,
                                            double action, double delta) {
  // inputs: state dims then action; outputs: next state dims
  const int sd = env == EnvKind::kPendulum ? 2 : 3;
  const int nd = sd + 1;
  std::vector<double> jac(static_cast<std::size_t>(sd) * nd);
  auto step = [&](std::vector<double> x, double a) {
    if (env == EnvKind::kPendulum) {
      PendulumState s{x[0], x[1]};
      pendulum_step(s, a);
      return std::vector<double>{s.theta, s.omega};
    }
    BallState s{x[0], x[1], x[2]};
    bouncing_ball_step(s, a);
    return std::vector<double>{s.y, s.v, s.x_target};
  };
  for (int j = 0; j < nd; ++j) {
    std::vector<double> xp = state, xm = state;
    double ap = action, am = action;
    if (j < sd) {
      xp[static_cast<std::size_t>(j)] += delta;
      xm[static_cast<std::size_t>(j)] -= delta;
    } else {
      ap += delta;
      am -= delta;
    }
    auto fp = step(xp, ap);
    auto fm = step(xm, am);
    for (int i = 0; i < sd; ++i)
      jac[static_cast<std::size_t>(i) * nd + j] =
          (fp[static_cast<std::size_t>(i)] - fm[static_cast<std::size_t>(i)]) / (2.0 * delta);
  }
  return jac;
}

}  // namespace gpldlab::envs
