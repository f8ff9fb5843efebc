#pragma once

#include <functional>
#include <vector>

#include "gpldlab/rng.hpp"
#include "gpldlab/tape.hpp"

namespace gpldlab::gpld {

// Categorical latent distribution: K rows of C class probabilities, each row
// produced by a row-softmax. Rows are kept as separate 1 x C tensors so that
// per-row probes can address them directly.
struct ProbTable {
  int K = 0;
  int C = 0;
  std::vector<ad::Tensor> rows;  // K tensors, each 1 x C
  ad::Tensor input;              // the tensor u the table was computed from

  // Row-major K*C copy of the probabilities.
  std::vector<double> values() const;
  // Checks row-stochasticity (sum 1 within tol, entries in [0,1]).
  void validate(double tol = 1e-9) const;
};

enum class ProbeMode { kPerRow, kFullTable };

struct GpldConfig {
  double lambda0_post = 0.5;
  double lambda0_prior = 0.0;
  double rho = 0.5;
  double decay_scale = 1000.0;
  double lambda_min = 0.001;
  bool decay_enabled = true;
  ProbeMode probe_mode = ProbeMode::kPerRow;

  void validate() const;
  bool penalty_active() const { return lambda0_post > 0.0 || lambda0_prior > 0.0; }
};

struct PenaltyReport {
  ad::Tensor value;  // scalar; differentiable (built with create_graph)
  int probes_used = 0;
  int states_sampled = 0;
};

using TableFn = std::function<ProbTable(const ad::Tensor&)>;

// Mean over rows of the squared Frobenius norm of each row's Jacobian with
// respect to u, computed exactly with one backward pass per table entry.
// u must be a tape leaf (or tape node); the value is returned as a plain
// double, with the tape rolled back to its size at entry.
double exact_frobenius_penalty(const TableFn& table_fn, const ad::Tensor& u);

// Single-state Hutchinson estimate. Per-row mode draws one Rademacher probe
// per row and accumulates ||grad_u <eps_i, q_i(u)>||^2; full-table mode uses
// one probe across all K*C entries and one backward pass. Both are unbiased
// for the exact penalty. The returned value stays on the tape and can be
// differentiated further.
PenaltyReport hutchinson_penalty(const TableFn& table_fn, const ad::Tensor& u,
                                 Rng& rng, ProbeMode mode);

// Probe-injected variant (probes[i] has C entries for row i); used by the
// estimator bench and by tests that enumerate probes exhaustively.
PenaltyReport hutchinson_penalty_with_probes(const ProbTable& table,
                                             const std::vector<std::vector<double>>& probes,
                                             ProbeMode mode);

// Uniform subset of floor(rho*B) indices (clamped to at least 1), without
// replacement, ascending.
std::vector<int> sample_batch_indices(int batch_size, double rho, Rng& rng);

// Square-root decay with a floor: max(lambda0 / sqrt(1 + T/c), lambda_min)
// when enabled, lambda0 otherwise. The floor applies only under decay.
double decay_lambda(double lambda0, long t_updates, double c, double lambda_min,
                    bool decay_enabled);

}  // namespace gpldlab::gpld
