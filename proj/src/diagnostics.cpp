#include "gpldlab/diagnostics.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

namespace gpldlab::diag {

namespace a = gpldlab::ad;
using rssm::BatchedTable;
using rssm::BoundParams;

namespace {

double row_kl(const std::vector<double>& q, const std::vector<double>& p) {
  double kl = 0.0;
  for (std::size_t i = 0; i < q.size(); ++i) kl += q[i] * std::log(q[i] / p[i]);
  return kl;
}

double table_kl(const gpld::ProbTable& q, const gpld::ProbTable& p) {
  double kl = 0.0;
  for (int i = 0; i < q.K; ++i)
    kl += row_kl(q.rows[static_cast<std::size_t>(i)].values(),
                 p.rows[static_cast<std::size_t>(i)].values());
  return kl;
}

}  // namespace

SensitivityReport local_sensitivity(const rssm::RssmModel& model, const envs::Dataset& ds,
                                    SensitivityTarget target, const SensitivityOptions& opt,
                                    Rng& rng) {
  for (double m : opt.magnitudes)
    if (!(m > 0.0 && m <= 0.5))
      throw DomainError("local_sensitivity: magnitudes must lie in (0, 0.5]");
  const rssm::RssmConfig& cfg = model.config();
  BoundParams p = model.bind_const();

  // Filter the dataset to collect (h_t, e_t) pairs.
  struct State {
    std::vector<double> h, e;
  };
  std::vector<State> states;
  Rng filter_rng = Rng::from_stream(rng.next_u64(), 0xf117e2);
  for (const envs::Episode& ep : ds.episodes) {
    a::Tensor h = a::Tensor::zeros(a::Shape::mat(1, cfg.h_dim));
    for (const envs::Transition& tr : ep.steps) {
      a::Tensor e = rssm::encode(cfg, p, a::Tensor(a::Shape::mat(1, cfg.obs_dim), tr.obs));
      states.push_back({h.values(), e.values()});
      BatchedTable q = rssm::posterior(cfg, p, h, e);
      rssm::LatentSample z = rssm::sample_latent(q, filter_rng);
      h = rssm::core_step(cfg, p, h, z.flat, a::Tensor(a::Shape::mat(1, cfg.act_dim), tr.action));
    }
  }
  if (states.empty()) throw DomainError("local_sensitivity: empty dataset");
  if (static_cast<int>(states.size()) > opt.max_states) {
    // deterministic even thinning
    std::vector<State> kept;
    double stride = static_cast<double>(states.size()) / opt.max_states;
    for (int i = 0; i < opt.max_states; ++i)
      kept.push_back(states[static_cast<std::size_t>(i * stride)]);
    states = std::move(kept);
  }

  const int in_dim = target == SensitivityTarget::kPosterior ? cfg.e_dim : cfg.h_dim;
  double avg_norm = 0.0;
  for (const State& s : states) {
    const std::vector<double>& u = target == SensitivityTarget::kPosterior ? s.e : s.h;
    double n2 = 0.0;
    for (double v : u) n2 += v * v;
    avg_norm += std::sqrt(n2);
  }
  avg_norm /= static_cast<double>(states.size());
  if (avg_norm == 0.0) avg_norm = 1.0;  // untrained zero states: absolute perturbations

  auto table_at = [&](const State& s, const std::vector<double>* delta) {
    if (target == SensitivityTarget::kPosterior) {
      std::vector<double> e = s.e;
      if (delta)
        for (std::size_t i = 0; i < e.size(); ++i) e[i] += (*delta)[i];
      return rssm::posterior_table(cfg, p, a::Tensor(a::Shape::mat(1, cfg.h_dim), s.h),
                                   a::Tensor(a::Shape::mat(1, cfg.e_dim), std::move(e)));
    }
    std::vector<double> h = s.h;
    if (delta)
      for (std::size_t i = 0; i < h.size(); ++i) h[i] += (*delta)[i];
    return rssm::prior_table(cfg, p, a::Tensor(a::Shape::mat(1, cfg.h_dim), std::move(h)));
  };

  SensitivityReport rep;
  rep.target = target;
  rep.magnitudes = opt.magnitudes;
  rep.states_used = static_cast<int>(states.size());
  for (double mag : opt.magnitudes) {
    const double target_norm = mag * avg_norm;
    double acc = 0.0;
    long count = 0;
    for (const State& s : states) {
      gpld::ProbTable base = table_at(s, nullptr);
      for (int probe = 0; probe < opt.n_probes; ++probe) {
        std::vector<double> delta(static_cast<std::size_t>(in_dim));
        double n2 = 0.0;
        for (double& d : delta) {
          d = rng.normal();
          n2 += d * d;
        }
        const double scale = target_norm / std::sqrt(n2);
        for (double& d : delta) d *= scale;
        gpld::ProbTable pert = table_at(s, &delta);
        acc += table_kl(base, pert) / target_norm;
        ++count;
      }
    }
    rep.mean_kl_per_norm.push_back(acc / static_cast<double>(count));
  }
  for (double v : rep.mean_kl_per_norm) rep.aggregate += v;
  rep.aggregate /= static_cast<double>(rep.mean_kl_per_norm.size());
  return rep;
}

TimingReport timing_overhead(const rssm::RssmConfig& cfg, const gpld::GpldConfig& gcfg,
                             const envs::Dataset& ds, const TimingOptions& opt, Rng& rng) {
  if (opt.n_steps < 50) throw DomainError("timing_overhead: need at least 50 timed steps");
  using Clock = std::chrono::steady_clock;

  const std::uint64_t arm_seed = rng.next_u64();
  auto run_arm = [&](const gpld::GpldConfig* g) {
    Rng init = Rng::from_stream(arm_seed, 1);
    rssm::RssmModel model(cfg, init);
    rssm::AdamState adam;
    Rng train = Rng::from_stream(arm_seed, 2);
    std::vector<double> times;
    times.reserve(static_cast<std::size_t>(opt.n_steps));
    for (int s = 0; s < opt.warmup + opt.n_steps; ++s) {
      rssm::Batch b = rssm::sample_batch(ds, opt.batch_size, opt.seq_len, train);
      auto t0 = Clock::now();
      rssm::train_step(model, b, g, rssm::Betas{}, adam, train);
      auto t1 = Clock::now();
      if (s >= opt.warmup) times.push_back(std::chrono::duration<double>(t1 - t0).count());
    }
    return times;
  };

  std::vector<double> base_times = run_arm(nullptr);
  std::vector<double> gpld_times = run_arm(&gcfg);

  auto median = [](std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return v[v.size() / 2];
  };
  TimingReport rep;
  rep.baseline_step_time = median(base_times);
  rep.gpld_step_time = median(gpld_times);
  rep.rho = gcfg.rho;
  rep.lambda_post = gcfg.lambda0_post;
  rep.lambda_prior = gcfg.lambda0_prior;

  std::vector<double> ratios;
  ratios.reserve(gpld_times.size());
  for (double t : gpld_times) ratios.push_back(t / rep.baseline_step_time);
  rep.ratio = median(ratios);
  std::vector<double> dev;
  dev.reserve(ratios.size());
  for (double r : ratios) dev.push_back(std::fabs(r - rep.ratio));
  rep.ratio_mad = median(dev);
  return rep;
}

}  // namespace gpldlab::diag
