#pragma once

#include <functional>
#include <vector>

#include "gpldlab/rng.hpp"
#include "gpldlab/tape.hpp"

namespace gpldlab::mdp {

// Finite MDP whose states carry metric embeddings. Transition rows are
// indexed by (state, action) and are row-stochastic over next states.
struct EmbeddedMdp {
  int n_states = 0;
  int n_actions = 0;
  int embed_dim = 0;
  std::vector<std::vector<double>> embeddings;        // per state, length embed_dim
  std::vector<std::vector<double>> true_transitions;  // per (s*A + a), length n_states
  double epsilon = 0.0;                               // neighborhood radius

  const std::vector<double>& row(int s, int a) const {
    return true_transitions[static_cast<std::size_t>(s) * n_actions + a];
  }
  void validate() const;
};

struct TransitionCounts {
  int n_states = 0;
  int n_actions = 0;
  std::vector<long> counts;  // (s*A + a)*S + s'

  TransitionCounts() = default;
  TransitionCounts(int S, int A)
      : n_states(S), n_actions(A),
        counts(static_cast<std::size_t>(S) * A * S, 0) {}
  long& at(int s, int a, int s2) {
    return counts[(static_cast<std::size_t>(s) * n_actions + a) * n_states + s2];
  }
  long at(int s, int a, int s2) const {
    return counts[(static_cast<std::size_t>(s) * n_actions + a) * n_states + s2];
  }
  long row_total(int s, int a) const;
};

// Softmax-parameterized transition estimate. `probs` is authoritative;
// `logits` is the parameterization used by the fitter (clipped log-probs
// when constructed from an explicit distribution).
struct TransitionEstimate {
  int n_states = 0;
  int n_actions = 0;
  std::vector<double> logits;
  std::vector<double> probs;

  const double* row(int s, int a) const {
    return probs.data() + (static_cast<std::size_t>(s) * n_actions + a) * n_states;
  }
};

struct Neighbor {
  int state;
  double distance;
};
using Adjacency = std::vector<std::vector<Neighbor>>;  // per state

// k is a neighbor of s iff 0 < ||e(k)-e(s)|| <= epsilon; self excluded.
Adjacency build_neighborhoods(const EmbeddedMdp& mdp);

// probs(s'|s,a) = (N(s,a,s') + alpha) / (total + alpha*S); an unvisited row
// with alpha = 0 falls back to uniform.
TransitionEstimate mle_estimate(const TransitionCounts& counts, double alpha);

// Eq-style finite-difference regularizer: sum over actions, states, and
// neighbors (ordered pairs, both directions) of the squared normalized row
// difference.
double fd_regularizer(const TransitionEstimate& est, const Adjacency& adj);

struct FitOptions {
  double step_size = 0.1;
  int iterations = 1500;
  int record_every = 10;
};

struct FitResult {
  TransitionEstimate estimate;          // best iterate by objective
  std::vector<double> objective_curve;  // recorded every record_every iters
  double best_objective = 0.0;
  int best_iteration = 0;
};

// Gradient descent on row logits minimizing NLL(counts) + lambda * FD.
// The step is halved whenever a step would increase the objective, which
// keeps the recorded curve non-increasing.
FitResult fit_regularized(const TransitionCounts& counts, const EmbeddedMdp& mdp,
                          double lambda, const FitOptions& opt);

// Mean over (s,a) of the total-variation distance between estimate rows and
// the true transition rows.
double tv_error(const TransitionEstimate& est, const EmbeddedMdp& truth);
double tv_error_rows(const std::vector<double>& a, const std::vector<double>& b,
                     int rows, int cols);

// Differentiable map R^d -> R^m for the limit checks; apply() must build the
// output (1 x m) from the input (1 x d) with tape operations.
struct DiffMap {
  int in_dim = 0;
  int out_dim = 0;
  std::function<ad::Tensor(const ad::Tensor&)> apply;
};

// For each step h, | ||(f(x+hu)-f(x))/h||^2 - ||J u||^2 | with J from
// reverse mode. h_list must be strictly decreasing and positive.
std::vector<double> directional_limit_check(const DiffMap& f, const std::vector<double>& x,
                                            const std::vector<double>& u,
                                            const std::vector<double>& h_list);

// |mean_n ||J u||^2 - ||J||_F^2 / d| / (||J||_F^2 / d) with u uniform on the
// sphere; returns 0 for the zero matrix.
double isotropic_average_check(const std::vector<double>& jac, int m, int d,
                               int n_samples, Rng& rng);

// Least-squares slope of log(err) against log(h); used by the limit tests.
double log_log_slope(const std::vector<double>& h_list, const std::vector<double>& errs);

// --- synthetic MDP generators -------------------------------------------

struct RingOptions {
  int n_states = 8;
  int n_actions = 2;
  int embed_dim = 2;
  double sigma = 1.5;        // width of the transition profile (ring units)
  double drift_amp = 0.35;   // smooth modulation of the per-action drift
  double epsilon = 1.2;      // adjacent states sit at chord distance 1
};

// Smooth testbed: transition mass is a wrapped Gaussian bump centered at a
// drift target that varies smoothly around the ring.
EmbeddedMdp make_ring_mdp(const RingOptions& opt);

// Discontinuous control: states in the second half of the ring teleport
// half-way across, so neighboring rows across the cut differ sharply.
EmbeddedMdp make_teleport_ring_mdp(const RingOptions& opt);

// per_sa observed transitions drawn from each true row.
TransitionCounts sample_counts(const EmbeddedMdp& mdp, int per_sa, Rng& rng);

}  // namespace gpldlab::mdp
