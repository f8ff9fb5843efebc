#include "gpldlab/mdp.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace gpldlab::mdp {

void EmbeddedMdp::validate() const {
  if (static_cast<int>(embeddings.size()) != n_states)
    throw ShapeError("EmbeddedMdp: embeddings size mismatch");
  if (static_cast<int>(true_transitions.size()) != n_states * n_actions)
    throw ShapeError("EmbeddedMdp: transition table size mismatch");
  for (const auto& row : true_transitions) {
    double s = 0.0;
    for (double p : row) {
      if (p < 0.0) throw DomainError("EmbeddedMdp: negative transition probability");
      s += p;
    }
    if (std::fabs(s - 1.0) > 1e-12)
      throw DomainError("EmbeddedMdp: transition row sums to " + std::to_string(s));
  }
  for (int i = 0; i < n_states; ++i)
    for (int j = i + 1; j < n_states; ++j) {
      double d2 = 0.0;
      for (int k = 0; k < embed_dim; ++k) {
        double d = embeddings[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)] -
                   embeddings[static_cast<std::size_t>(j)][static_cast<std::size_t>(k)];
        d2 += d * d;
      }
      if (d2 == 0.0) throw DomainError("EmbeddedMdp: embeddings not pairwise distinct");
    }
}

long TransitionCounts::row_total(int s, int a) const {
  long t = 0;
  for (int s2 = 0; s2 < n_states; ++s2) t += at(s, a, s2);
  return t;
}

Adjacency build_neighborhoods(const EmbeddedMdp& mdp) {
  if (!(mdp.epsilon > 0.0)) throw DomainError("build_neighborhoods: epsilon must be positive");
  Adjacency adj(static_cast<std::size_t>(mdp.n_states));
  for (int s = 0; s < mdp.n_states; ++s) {
    for (int k = 0; k < mdp.n_states; ++k) {
      if (k == s) continue;  // self excluded: the zero-distance term is vacuous
      double d2 = 0.0;
      for (int j = 0; j < mdp.embed_dim; ++j) {
        double d = mdp.embeddings[static_cast<std::size_t>(s)][static_cast<std::size_t>(j)] -
                   mdp.embeddings[static_cast<std::size_t>(k)][static_cast<std::size_t>(j)];
        d2 += d * d;
      }
      double dist = std::sqrt(d2);
      if (dist <= mdp.epsilon)
        adj[static_cast<std::size_t>(s)].push_back({k, dist});
    }
  }
  return adj;
}

namespace {

std::vector<double> clipped_log(const std::vector<double>& p) {
  std::vector<double> out(p.size());
  for (std::size_t i = 0; i < p.size(); ++i)
    out[i] = std::log(std::max(p[i], 1e-12));
  return out;
}

}  // namespace

TransitionEstimate mle_estimate(const TransitionCounts& counts, double alpha) {
  if (alpha < 0.0) throw DomainError("mle_estimate: alpha must be >= 0");
  const int S = counts.n_states, A = counts.n_actions;
  TransitionEstimate est;
  est.n_states = S;
  est.n_actions = A;
  est.probs.resize(static_cast<std::size_t>(S) * A * S);
  for (int s = 0; s < S; ++s) {
    for (int a = 0; a < A; ++a) {
      double tot = static_cast<double>(counts.row_total(s, a));
      double* row = est.probs.data() + (static_cast<std::size_t>(s) * A + a) * S;
      if (tot + alpha * S == 0.0) {
        // undefined MLE: fall back to the max-entropy row
        for (int s2 = 0; s2 < S; ++s2) row[s2] = 1.0 / S;
      } else {
        for (int s2 = 0; s2 < S; ++s2)
          row[s2] = (static_cast<double>(counts.at(s, a, s2)) + alpha) / (tot + alpha * S);
      }
    }
  }
  est.logits = clipped_log(est.probs);
  return est;
}

double fd_regularizer(const TransitionEstimate& est, const Adjacency& adj) {
  const int S = est.n_states, A = est.n_actions;
  double acc = 0.0;
  for (int a = 0; a < A; ++a) {
    for (int s = 0; s < S; ++s) {
      const double* ps = est.row(s, a);
      for (const Neighbor& nb : adj[static_cast<std::size_t>(s)]) {
        const double* pk = est.row(nb.state, a);
        const double inv2 = 1.0 / (nb.distance * nb.distance);
        for (int s2 = 0; s2 < S; ++s2) {
          double d = pk[s2] - ps[s2];
          acc += d * d * inv2;
        }
      }
    }
  }
  return acc;
}

FitResult fit_regularized(const TransitionCounts& counts, const EmbeddedMdp& mdp,
                          double lambda, const FitOptions& opt) {
  if (lambda < 0.0) throw DomainError("fit_regularized: lambda must be >= 0");
  const int S = counts.n_states, A = counts.n_actions;
  Adjacency adj = build_neighborhoods(mdp);

  // Warm start from the smoothed MLE so logits begin interior.
  std::vector<double> params = mle_estimate(counts, 0.5).logits;

  struct Eval {
    double objective;
    std::vector<double> grad;
    std::vector<double> probs;
  };

  auto evaluate = [&](const std::vector<double>& logits, bool want_grad) {
    ad::Tape tape;
    std::vector<ad::Tensor> rows;   // leaves, one per (s,a)
    std::vector<ad::Tensor> probs;  // row_softmax outputs
    rows.reserve(static_cast<std::size_t>(S) * A);
    probs.reserve(rows.size());
    for (int s = 0; s < S; ++s)
      for (int a = 0; a < A; ++a) {
        std::vector<double> v(logits.begin() + (static_cast<std::size_t>(s) * A + a) * S,
                              logits.begin() + (static_cast<std::size_t>(s) * A + a + 1) * S);
        rows.push_back(tape.leaf(ad::Tensor::matrix(1, S, std::move(v))));
        probs.push_back(ad::row_softmax(rows.back()));
      }

    // negative log-likelihood
    ad::Tensor obj = ad::Tensor::scalar(0.0);
    for (int s = 0; s < S; ++s)
      for (int a = 0; a < A; ++a) {
        std::vector<double> cts(static_cast<std::size_t>(S));
        bool any = false;
        for (int s2 = 0; s2 < S; ++s2) {
          cts[static_cast<std::size_t>(s2)] = static_cast<double>(counts.at(s, a, s2));
          any = any || counts.at(s, a, s2) != 0;
        }
        if (!any) continue;
        const std::size_t idx = static_cast<std::size_t>(s) * A + a;
        obj = ad::add(obj, ad::scale(ad::dot(ad::Tensor::matrix(1, S, cts),
                                             ad::log(probs[idx])),
                                     -1.0));
      }

    // finite-difference regularizer over ordered neighbor pairs
    if (lambda > 0.0) {
      ad::Tensor fd = ad::Tensor::scalar(0.0);
      for (int a = 0; a < A; ++a)
        for (int s = 0; s < S; ++s)
          for (const Neighbor& nb : adj[static_cast<std::size_t>(s)]) {
            const std::size_t is = static_cast<std::size_t>(s) * A + a;
            const std::size_t ik = static_cast<std::size_t>(nb.state) * A + a;
            ad::Tensor diff = ad::sub(probs[ik], probs[is]);
            fd = ad::add(fd, ad::scale(ad::sum(ad::square(diff)),
                                       1.0 / (nb.distance * nb.distance)));
          }
      obj = ad::add(obj, ad::scale(fd, lambda));
    }

    Eval ev;
    ev.objective = obj.scalar_value();
    if (!std::isfinite(ev.objective))
      throw NumericError("fit_regularized: non-finite objective");
    ev.probs.resize(static_cast<std::size_t>(S) * A * S);
    for (std::size_t r = 0; r < probs.size(); ++r)
      std::copy(probs[r].values().begin(), probs[r].values().end(),
                ev.probs.begin() + r * static_cast<std::size_t>(S));
    if (want_grad) {
      auto res = tape.backward(obj, rows, false);
      ev.grad.resize(static_cast<std::size_t>(S) * A * S);
      for (std::size_t r = 0; r < res.grads.size(); ++r)
        std::copy(res.grads[r].values().begin(), res.grads[r].values().end(),
                  ev.grad.begin() + r * static_cast<std::size_t>(S));
    }
    return ev;
  };

  FitResult out;
  double step = opt.step_size;
  Eval cur = evaluate(params, true);
  double best = cur.objective;
  std::vector<double> best_probs = cur.probs;
  std::vector<double> best_logits = params;
  int best_iter = 0;
  out.objective_curve.push_back(cur.objective);

  for (int it = 1; it <= opt.iterations; ++it) {
    std::vector<double> cand(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) cand[i] = params[i] - step * cur.grad[i];
    bool rejected = false;
    Eval next;
    try {
      next = evaluate(cand, true);
    } catch (const std::runtime_error&) {
      rejected = true;  // saturated softmax or non-finite trial point
    }
    if (rejected || next.objective > cur.objective + 1e-12) {
      // overshoot: halve the step and retry from the same point
      step *= 0.5;
      if (step < 1e-12) break;
      continue;
    }
    params = std::move(cand);
    cur = std::move(next);
    if (cur.objective < best) {
      best = cur.objective;
      best_probs = cur.probs;
      best_logits = params;
      best_iter = it;
    }
    if (it % opt.record_every == 0) out.objective_curve.push_back(cur.objective);
  }

  out.estimate.n_states = S;
  out.estimate.n_actions = A;
  out.estimate.probs = std::move(best_probs);
  out.estimate.logits = std::move(best_logits);
  out.best_objective = best;
  out.best_iteration = best_iter;
  return out;
}

double tv_error_rows(const std::vector<double>& a, const std::vector<double>& b,
                     int rows, int cols) {
  double acc = 0.0;
  for (int r = 0; r < rows; ++r) {
    double tv = 0.0;
    for (int c = 0; c < cols; ++c)
      tv += std::fabs(a[static_cast<std::size_t>(r) * cols + c] -
                      b[static_cast<std::size_t>(r) * cols + c]);
    acc += 0.5 * tv;
  }
  return acc / rows;
}

double tv_error(const TransitionEstimate& est, const EmbeddedMdp& truth) {
  if (est.n_states != truth.n_states || est.n_actions != truth.n_actions)
    throw ShapeError("tv_error: estimate and truth shapes differ");
  std::vector<double> t;
  t.reserve(est.probs.size());
  for (int s = 0; s < truth.n_states; ++s)
    for (int a = 0; a < truth.n_actions; ++a)
      t.insert(t.end(), truth.row(s, a).begin(), truth.row(s, a).end());
  return tv_error_rows(est.probs, t, est.n_states * est.n_actions, est.n_states);
}

std::vector<double> directional_limit_check(const DiffMap& f, const std::vector<double>& x,
                                            const std::vector<double>& u,
                                            const std::vector<double>& h_list) {
  for (std::size_t i = 0; i + 1 < h_list.size(); ++i)
    if (!(h_list[i] > h_list[i + 1]) || !(h_list[i + 1] > 0.0))
      throw DomainError("directional_limit_check: h_list must be strictly decreasing positive");

  // ||J u||^2 from reverse mode, one backward per output component.
  ad::Tape tape;
  ad::Tensor xl = tape.leaf(ad::Tensor::matrix(1, f.in_dim, x));
  ad::Tensor y = f.apply(xl);
  if (y.numel() != f.out_dim) throw ShapeError("directional_limit_check: bad output dim");
  double ju_sq = 0.0;
  for (int c = 0; c < f.out_dim; ++c) {
    std::vector<double> sel(static_cast<std::size_t>(f.out_dim), 0.0);
    sel[static_cast<std::size_t>(c)] = 1.0;
    std::size_t mark = tape.size();
    ad::Tensor entry = ad::dot(y, ad::Tensor(y.shape(), sel));
    auto g = tape.backward(entry, {&xl, 1}, false);
    double dir = 0.0;
    for (int j = 0; j < f.in_dim; ++j)
      dir += g.grads[0].values()[static_cast<std::size_t>(j)] * u[static_cast<std::size_t>(j)];
    ju_sq += dir * dir;
    tape.truncate(mark);
  }

  auto eval = [&](const std::vector<double>& pt) {
    ad::Tensor out = f.apply(ad::Tensor::matrix(1, f.in_dim, pt));
    return out.values();
  };
  std::vector<double> f0 = eval(x);

  std::vector<double> errs;
  errs.reserve(h_list.size());
  for (double h : h_list) {
    std::vector<double> xp = x;
    for (int j = 0; j < f.in_dim; ++j) xp[static_cast<std::size_t>(j)] += h * u[static_cast<std::size_t>(j)];
    std::vector<double> fp = eval(xp);
    double norm = 0.0;
    for (std::size_t j = 0; j < fp.size(); ++j) {
      double d = (fp[j] - f0[j]) / h;
      norm += d * d;
    }
    errs.push_back(std::fabs(norm - ju_sq));
  }
  return errs;
}

double isotropic_average_check(const std::vector<double>& jac, int m, int d,
                               int n_samples, Rng& rng) {
  if (n_samples < 1) throw DomainError("isotropic_average_check: n_samples must be >= 1");
  if (static_cast<int>(jac.size()) != m * d)
    throw ShapeError("isotropic_average_check: J size mismatch");

  double fro2 = 0.0;
  for (double v : jac) fro2 += v * v;
  if (fro2 == 0.0) return 0.0;  // zero matrix: exact by convention

  const double target = fro2 / d;
  double acc = 0.0;
  std::vector<double> u(static_cast<std::size_t>(d));
  for (int s = 0; s < n_samples; ++s) {
    double norm2 = 0.0;
    for (double& v : u) {
      v = rng.normal();
      norm2 += v * v;
    }
    double inv = 1.0 / std::sqrt(norm2);
    double ju2 = 0.0;
    for (int r = 0; r < m; ++r) {
      double acc_r = 0.0;
      for (int c = 0; c < d; ++c)
        acc_r += jac[static_cast<std::size_t>(r) * d + c] * u[static_cast<std::size_t>(c)] * inv;
      ju2 += acc_r * acc_r;
    }
    acc += ju2;
  }
  return std::fabs(acc / n_samples - target) / target;
}

double log_log_slope(const std::vector<double>& h_list, const std::vector<double>& errs) {
  const std::size_t n = h_list.size();
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    double lx = std::log(h_list[i]);
    double ly = std::log(std::max(errs[i], 1e-300));
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
  }
  double denom = n * sxx - sx * sx;
  return (n * sxy - sx * sy) / denom;
}

namespace {

EmbeddedMdp make_ring_base(const RingOptions& opt) {
  if (opt.n_states < 3) throw DomainError("ring mdp: need at least 3 states");
  if (opt.embed_dim < 2) throw DomainError("ring mdp: embed_dim must be >= 2");
  EmbeddedMdp mdp;
  mdp.n_states = opt.n_states;
  mdp.n_actions = opt.n_actions;
  mdp.embed_dim = opt.embed_dim;
  mdp.epsilon = opt.epsilon;
  // Circle radius chosen so adjacent states sit at chord distance 1.
  const double radius = 0.5 / std::sin(M_PI / opt.n_states);
  for (int s = 0; s < opt.n_states; ++s) {
    std::vector<double> e(static_cast<std::size_t>(opt.embed_dim), 0.0);
    double th = 2.0 * M_PI * s / opt.n_states;
    e[0] = radius * std::cos(th);
    e[1] = radius * std::sin(th);
    mdp.embeddings.push_back(std::move(e));
  }
  return mdp;
}

std::vector<double> wrapped_gaussian_row(int S, double center, double sigma) {
  std::vector<double> row(static_cast<std::size_t>(S));
  double z = 0.0;
  for (int s2 = 0; s2 < S; ++s2) {
    double delta = std::fabs(static_cast<double>(s2) - center);
    delta = std::fmod(delta, static_cast<double>(S));
    double dist = std::min(delta, S - delta);
    row[static_cast<std::size_t>(s2)] = std::exp(-0.5 * dist * dist / (sigma * sigma));
    z += row[static_cast<std::size_t>(s2)];
  }
  for (double& p : row) p /= z;
  // exact renormalization so rows sum to 1 within 1e-12
  double z2 = 0.0;
  for (double p : row) z2 += p;
  row[0] += 1.0 - z2;
  return row;
}

}  // namespace

EmbeddedMdp make_ring_mdp(const RingOptions& opt) {
  EmbeddedMdp mdp = make_ring_base(opt);
  const int S = opt.n_states;
  for (int s = 0; s < S; ++s)
    for (int a = 0; a < opt.n_actions; ++a) {
      double dir = (a % 2 == 0) ? 1.0 : -1.0;
      double phase = 2.0 * M_PI * s / S + 0.7 * a;
      double center = s + dir + opt.drift_amp * std::sin(phase);
      mdp.true_transitions.push_back(wrapped_gaussian_row(S, center, opt.sigma));
    }
  mdp.validate();
  return mdp;
}

EmbeddedMdp make_teleport_ring_mdp(const RingOptions& opt) {
  EmbeddedMdp mdp = make_ring_base(opt);
  const int S = opt.n_states;
  for (int s = 0; s < S; ++s)
    for (int a = 0; a < opt.n_actions; ++a) {
      double dir = (a % 2 == 0) ? 1.0 : -1.0;
      double center = s + dir;
      if (s >= S / 2) center = s + S / 2.0 + dir;  // teleport across the ring
      mdp.true_transitions.push_back(wrapped_gaussian_row(S, center, opt.sigma * 0.6));
    }
  mdp.validate();
  return mdp;
}

TransitionCounts sample_counts(const EmbeddedMdp& mdp, int per_sa, Rng& rng) {
  TransitionCounts counts(mdp.n_states, mdp.n_actions);
  for (int s = 0; s < mdp.n_states; ++s)
    for (int a = 0; a < mdp.n_actions; ++a)
      for (int i = 0; i < per_sa; ++i) {
        int s2 = rng.categorical(mdp.row(s, a).data(), mdp.n_states);
        ++counts.at(s, a, s2);
      }
  return counts;
}

}  // namespace gpldlab::mdp
