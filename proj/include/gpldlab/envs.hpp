#pragma once

#include <string>
#include <vector>

#include "gpldlab/rng.hpp"

namespace gpldlab::envs {

// Smooth testbed: damped pendulum with torque control, integrated with
// semi-implicit Euler. theta = 0 is the upright, reward-1 rest point of the
// flipped convention; theta is kept wrapped to (-pi, pi].
struct PendulumParams {
  double g = 9.81;
  double l = 1.0;
  double tau_max = 2.0;
  double friction = 0.05;
  double dt = 0.05;
};

struct PendulumState {
  double theta = 0.0;
  double omega = 0.0;
};

struct StepResult {
  double reward = 0.0;
};

StepResult pendulum_step(PendulumState& s, double torque, const PendulumParams& p = {});

// Discontinuous negative control: ball under gravity with vertical thrust;
// crossing the floor reflects the velocity with restitution 0.8.
struct BallParams {
  double g = 9.81;
  double thrust_max = 5.0;
  double restitution = 0.8;
  double dt = 0.05;
};

struct BallState {
  double y = 1.0;
  double v = 0.0;
  double x_target = 1.0;
};

StepResult bouncing_ball_step(BallState& s, double thrust, const BallParams& p = {});

enum class EnvKind { kPendulum, kBouncingBall };
EnvKind env_from_name(const std::string& name);
const char* env_name(EnvKind kind);
int obs_dim(EnvKind kind);
inline constexpr int kActDim = 1;

// Observation vectors: pendulum -> (cos theta, sin theta, omega); ball ->
// (y, v, x_target). The pendulum observation uses the circle embedding of
// the angle so the observed dynamics stay smooth across the wrap.

struct Transition {
  std::vector<double> obs;
  std::vector<double> action;  // clamped to [-1, 1]
  double reward = 0.0;
  int continuation = 1;  // 0 only at episode ends
};

struct Episode {
  std::vector<Transition> steps;
};

struct Dataset {
  std::string env;
  int obs_dim = 0;
  int act_dim = 0;
  int episode_len = 0;
  std::vector<Episode> episodes;

  int n_transitions() const;
  void save(const std::string& path) const;
  static Dataset load(const std::string& path);
};

enum class PolicyKind { kUniformRandom, kScriptedSinusoid };
PolicyKind policy_from_name(const std::string& name);

struct CollectOptions {
  PolicyKind policy = PolicyKind::kUniformRandom;
  int n_episodes = 1;
  int episode_len = 100;
  double obs_noise = 0.0;      // additive Gaussian sigma on observations
  double sinusoid_amp = 1.0;   // scripted-sinusoid gains
  double sinusoid_period = 40.0;
};

Dataset collect_episodes(EnvKind env, const CollectOptions& opt, Rng& rng);

// Central-difference Jacobian of the one-step state map (state and action
// stacked as inputs), used by the smoothness probes.
std::vector<double> numerical_step_jacobian(EnvKind env, const std::vector<double>& state,
                                            double action, double delta);

}  // namespace gpldlab::envs
