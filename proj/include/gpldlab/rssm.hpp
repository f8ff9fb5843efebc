#pragma once

#include <optional>
#include <string>
#include <vector>

#include "gpldlab/envs.hpp"
#include "gpldlab/gpld.hpp"
#include "gpldlab/rng.hpp"
#include "gpldlab/tape.hpp"

namespace gpldlab::rssm {

struct RssmConfig {
  int obs_dim = 3;
  int act_dim = 1;
  int h_dim = 64;
  int k_vars = 8;     // categorical variables K
  int c_classes = 8;  // classes per variable C
  int e_dim = 16;
  int enc_hidden = 32;
  int dec_hidden = 32;
  double unimix = 0.01;  // uniform mix floor on categorical heads

  int feat_dim() const { return h_dim + k_vars * c_classes; }
  void validate() const;
};

struct Param {
  std::string name;
  ad::Shape shape;
  std::vector<double> values;
};

// Parameter tensors bound onto a tape as leaves (training) or as constants
// (evaluation). Order in `all` matches RssmModel::params().
struct BoundParams {
  ad::Tensor enc_w1, enc_b1, enc_w2, enc_b2;
  ad::Tensor gate_w, gate_b, cand_w, cand_b;
  std::vector<ad::Tensor> post_w, post_b;    // K per-row head slices
  std::vector<ad::Tensor> prior_w, prior_b;
  ad::Tensor dec_w1, dec_b1, dec_w2, dec_b2;
  ad::Tensor rew_w, rew_b, cont_w, cont_b;
  std::vector<ad::Tensor> all;
};

class RssmModel {
 public:
  RssmModel(RssmConfig cfg, Rng& init_rng);

  const RssmConfig& config() const { return cfg_; }
  std::vector<Param>& params() { return params_; }
  const std::vector<Param>& params() const { return params_; }
  std::size_t param_count() const;

  BoundParams bind(ad::Tape& tape) const;  // leaves (differentiable)
  BoundParams bind_const() const;          // constants (evaluation only)

  // Self-describing binary checkpoint; save/load round-trips bit-exactly.
  void save_checkpoint(const std::string& path) const;
  static RssmModel load_checkpoint(const std::string& path);

 private:
  RssmModel() = default;
  RssmConfig cfg_;
  std::vector<Param> params_;
};

// K rows of (B x C) probabilities for a whole batch slice; `input` is the
// tensor the table was computed from ([h,e] for the posterior, h for the
// prior).
struct BatchedTable {
  int K = 0;
  int C = 0;
  std::vector<ad::Tensor> rows;
  ad::Tensor input;
};

// Posterior / prior heads (row softmax plus the 1% uniform mix). The
// single-state overloads return the gpld::ProbTable contract type.
BatchedTable posterior(const RssmConfig& cfg, const BoundParams& p, const ad::Tensor& h,
                       const ad::Tensor& e);
BatchedTable prior(const RssmConfig& cfg, const BoundParams& p, const ad::Tensor& h);
gpld::ProbTable posterior_table(const RssmConfig& cfg, const BoundParams& p,
                                const ad::Tensor& h, const ad::Tensor& e);
gpld::ProbTable prior_table(const RssmConfig& cfg, const BoundParams& p, const ad::Tensor& h);

// Encoder (2-layer tanh) and recurrent core (gated update from [h, z, a]).
ad::Tensor encode(const RssmConfig& cfg, const BoundParams& p, const ad::Tensor& obs);
ad::Tensor core_step(const RssmConfig& cfg, const BoundParams& p, const ad::Tensor& h,
                     const ad::Tensor& z_flat, const ad::Tensor& a);

// Straight-through categorical sample: forward value is one-hot, gradient
// flows as if z equaled the probabilities. Returns K tensors of (B x C)
// plus their concatenation (B x K*C).
struct LatentSample {
  std::vector<ad::Tensor> rows;
  ad::Tensor flat;
};
LatentSample sample_latent(const BatchedTable& table, Rng& rng);

enum class SgSide { kPosterior, kPrior };

// Sum of categorical KLs over the K rows, clamped below at 1 (free bits),
// with stop-gradient on the named side. Single-state contract form.
ad::Tensor kl_free_bits(const gpld::ProbTable& q, const gpld::ProbTable& p, SgSide sg);
// Batched column form: per-sample clamped KL as a (B x 1) tensor.
ad::Tensor kl_free_bits_cols(const BatchedTable& q, const BatchedTable& p, SgSide sg);

struct Batch {
  int B = 0;
  int T = 0;
  int obs_dim = 0;
  int act_dim = 0;
  std::vector<double> obs;      // [b][t][dim]
  std::vector<double> actions;  // [b][t][dim]
  std::vector<double> rewards;  // [b][t]
  std::vector<double> conts;    // [b][t], 0 only at episode ends

  ad::Tensor obs_slice(int t) const;
  ad::Tensor act_slice(int t) const;
  ad::Tensor reward_col(int t) const;
  std::vector<int> cont_col(int t) const;
};

Batch sample_batch(const envs::Dataset& ds, int B, int T, Rng& rng);

struct Betas {
  double pred = 1.0;
  double dyn = 1.0;
  double rep = 0.1;
};

struct LossBreakdown {
  double pred = 0.0;
  double dyn = 0.0;
  double rep = 0.0;
  double gpld_post = 0.0;
  double gpld_prior = 0.0;
  double total = 0.0;
  double lambda_post_effective = 0.0;
  double lambda_prior_effective = 0.0;
  int penalty_states = 0;
  ad::Tensor total_t;  // scalar tape node (set when built on a tape)
};

// kSample draws straight-through one-hot latents; kMeanProbs feeds the
// probability tables through directly (no rng draw), which makes the whole
// objective smooth — the finite-difference oracles use that mode.
enum class LatentMode { kSample, kMeanProbs };

// Teacher-forced world-model objective over a batch. When `gpld_cfg` is
// null the penalty machinery is absent entirely (stub build used by the
// equivalence tests); a config with both lambdas zero must produce the
// identical trajectory. T_updates selects the decayed coefficients.
LossBreakdown world_model_loss(const RssmConfig& cfg, const BoundParams& p, const Batch& batch,
                               const gpld::GpldConfig* gpld_cfg, const Betas& betas,
                               long t_updates, Rng& rng,
                               LatentMode latent_mode = LatentMode::kSample);

struct AdamState {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long t = 0;
  std::vector<std::vector<double>> m, v;
};

// One optimizer update from backward(total). Deterministic given the rng
// stream; aborts on non-finite gradients.
LossBreakdown train_step(RssmModel& model, const Batch& batch,
                         const gpld::GpldConfig* gpld_cfg, const Betas& betas,
                         AdamState& opt, Rng& rng);

// Open-loop rollout error: filter the trajectory with the posterior, then
// predict `horizon` steps ahead with prior samples from each start index;
// returns the mean squared observation error (per dimension). horizon 0
// degenerates to the filtering reconstruction error.
double multi_step_prediction_error(const RssmModel& model, const envs::Episode& episode,
                                   int horizon, Rng& rng);

}  // namespace gpldlab::rssm
