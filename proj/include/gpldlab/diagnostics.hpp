#pragma once

#include <vector>

#include "gpldlab/rssm.hpp"

namespace gpldlab::diag {

enum class SensitivityTarget { kPosterior, kPrior };

struct SensitivityOptions {
  // Perturbation sizes as fractions of the average input norm (0.1%..10%).
  std::vector<double> magnitudes = {0.001, 0.003, 0.01, 0.03, 0.1};
  int n_probes = 16;
  int max_states = 256;  // cap on (h,e) states drawn from the dataset
};

struct SensitivityReport {
  SensitivityTarget target = SensitivityTarget::kPosterior;
  std::vector<double> magnitudes;
  std::vector<double> mean_kl_per_norm;  // one entry per magnitude
  double aggregate = 0.0;                // mean over magnitudes
  int states_used = 0;
};

// KL(r(.|u) || r(.|u + delta)) / ||delta||, averaged over dataset states,
// probe directions, and magnitudes. The posterior target perturbs the
// encoder output e_t, the prior target perturbs the deterministic state h_t;
// perturbation directions are Gaussian rescaled to each magnitude times the
// average input norm.
SensitivityReport local_sensitivity(const rssm::RssmModel& model, const envs::Dataset& ds,
                                    SensitivityTarget target, const SensitivityOptions& opt,
                                    Rng& rng);

struct TimingOptions {
  int n_steps = 60;  // timed steps per arm (>= 50)
  int warmup = 10;
  int batch_size = 16;
  int seq_len = 32;
};

struct TimingReport {
  double baseline_step_time = 0.0;  // median seconds per step
  double gpld_step_time = 0.0;
  double ratio = 0.0;      // median of per-step ratios against the baseline median
  double ratio_mad = 0.0;  // median absolute deviation of those ratios
  double rho = 0.0;
  double lambda_post = 0.0;
  double lambda_prior = 0.0;
};

// Wall-clock cost of the penalty: trains one arm with the penalty skipped
// (lambda = 0 path) and one with `gcfg`, both freshly initialized, and
// reports median step times. Must run without concurrent siblings.
TimingReport timing_overhead(const rssm::RssmConfig& cfg, const gpld::GpldConfig& gcfg,
                             const envs::Dataset& ds, const TimingOptions& opt, Rng& rng);

}  // namespace gpldlab::diag
