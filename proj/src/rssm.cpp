#include "gpldlab/rssm.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

namespace gpldlab::rssm {

namespace a = gpldlab::ad;

void RssmConfig::validate() const {
  if (obs_dim < 1 || act_dim < 1 || h_dim < 1 || k_vars < 1 || c_classes < 2 ||
      e_dim < 1 || enc_hidden < 1 || dec_hidden < 1)
    throw DomainError("RssmConfig: dimensions must be positive (classes >= 2)");
  if (unimix < 0.0 || unimix >= 1.0)
    throw DomainError("RssmConfig: unimix must be in [0,1)");
}

namespace {

std::vector<double> init_weight(Rng& rng, int fan_in, int fan_out) {
  std::vector<double> v(static_cast<std::size_t>(fan_in) * fan_out);
  const double s = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (double& x : v) x = s * rng.normal();
  return v;
}

Param weight(Rng& rng, const std::string& name, int rows, int cols) {
  return {name, a::Shape::mat(rows, cols), init_weight(rng, rows, cols)};
}

Param bias(const std::string& name, int cols) {
  return {name, a::Shape::mat(1, cols), std::vector<double>(static_cast<std::size_t>(cols), 0.0)};
}

}  // namespace

RssmModel::RssmModel(RssmConfig cfg, Rng& init_rng) : cfg_(cfg) {
  cfg.validate();
  const int u_dim = cfg.h_dim + cfg.e_dim;
  const int core_in = cfg.h_dim + cfg.k_vars * cfg.c_classes + cfg.act_dim;
  params_.push_back(weight(init_rng, "enc_w1", cfg.obs_dim, cfg.enc_hidden));
  params_.push_back(bias("enc_b1", cfg.enc_hidden));
  params_.push_back(weight(init_rng, "enc_w2", cfg.enc_hidden, cfg.e_dim));
  params_.push_back(bias("enc_b2", cfg.e_dim));
  params_.push_back(weight(init_rng, "gate_w", core_in, cfg.h_dim));
  params_.push_back(bias("gate_b", cfg.h_dim));
  params_.push_back(weight(init_rng, "cand_w", core_in, cfg.h_dim));
  params_.push_back(bias("cand_b", cfg.h_dim));
  for (int i = 0; i < cfg.k_vars; ++i) {
    params_.push_back(weight(init_rng, "post_w" + std::to_string(i), u_dim, cfg.c_classes));
    params_.push_back(bias("post_b" + std::to_string(i), cfg.c_classes));
  }
  for (int i = 0; i < cfg.k_vars; ++i) {
    params_.push_back(weight(init_rng, "prior_w" + std::to_string(i), cfg.h_dim, cfg.c_classes));
    params_.push_back(bias("prior_b" + std::to_string(i), cfg.c_classes));
  }
  params_.push_back(weight(init_rng, "dec_w1", cfg.feat_dim(), cfg.dec_hidden));
  params_.push_back(bias("dec_b1", cfg.dec_hidden));
  params_.push_back(weight(init_rng, "dec_w2", cfg.dec_hidden, cfg.obs_dim));
  params_.push_back(bias("dec_b2", cfg.obs_dim));
  params_.push_back(weight(init_rng, "rew_w", cfg.feat_dim(), 1));
  params_.push_back(bias("rew_b", 1));
  params_.push_back(weight(init_rng, "cont_w", cfg.feat_dim(), 2));
  params_.push_back(bias("cont_b", 2));
}

std::size_t RssmModel::param_count() const {
  std::size_t n = 0;
  for (const Param& p : params_) n += p.values.size();
  return n;
}

namespace {

BoundParams wire(const RssmConfig& cfg, std::vector<a::Tensor> ts) {
  BoundParams b;
  std::size_t i = 0;
  auto next = [&]() { return ts[i++]; };
  b.enc_w1 = next();
  b.enc_b1 = next();
  b.enc_w2 = next();
  b.enc_b2 = next();
  b.gate_w = next();
  b.gate_b = next();
  b.cand_w = next();
  b.cand_b = next();
  for (int k = 0; k < cfg.k_vars; ++k) {
    b.post_w.push_back(next());
    b.post_b.push_back(next());
  }
  for (int k = 0; k < cfg.k_vars; ++k) {
    b.prior_w.push_back(next());
    b.prior_b.push_back(next());
  }
  b.dec_w1 = next();
  b.dec_b1 = next();
  b.dec_w2 = next();
  b.dec_b2 = next();
  b.rew_w = next();
  b.rew_b = next();
  b.cont_w = next();
  b.cont_b = next();
  b.all = std::move(ts);
  return b;
}

}  // namespace

BoundParams RssmModel::bind(a::Tape& tape) const {
  std::vector<a::Tensor> ts;
  ts.reserve(params_.size());
  for (const Param& p : params_) ts.push_back(tape.leaf(p.shape, p.values));
  return wire(cfg_, std::move(ts));
}

BoundParams RssmModel::bind_const() const {
  std::vector<a::Tensor> ts;
  ts.reserve(params_.size());
  for (const Param& p : params_) ts.push_back(a::Tensor(p.shape, p.values));
  return wire(cfg_, std::move(ts));
}

void RssmModel::save_checkpoint(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open checkpoint for writing: " + path);
  out << "GPLDLAB_CKPT 1\n";
  out << cfg_.obs_dim << " " << cfg_.act_dim << " " << cfg_.h_dim << " " << cfg_.k_vars << " "
      << cfg_.c_classes << " " << cfg_.e_dim << " " << cfg_.enc_hidden << " " << cfg_.dec_hidden
      << " ";
  char mix[32];
  std::snprintf(mix, sizeof mix, "%.17g", cfg_.unimix);
  out << mix << "\n" << params_.size() << "\n";
  for (const Param& p : params_) {
    out << p.name << " " << p.shape.rank << " " << p.shape.d0 << " " << p.shape.d1 << " "
        << p.values.size() << "\n";
    out.write(reinterpret_cast<const char*>(p.values.data()),
              static_cast<std::streamsize>(p.values.size() * sizeof(double)));
    out << "\n";
  }
  if (!out) throw IoError("failed writing checkpoint: " + path);
}

RssmModel RssmModel::load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path);
  std::string tag;
  int version = 0;
  in >> tag >> version;
  if (tag != "GPLDLAB_CKPT" || version != 1) throw IoError("bad checkpoint header: " + path);
  RssmModel m;
  in >> m.cfg_.obs_dim >> m.cfg_.act_dim >> m.cfg_.h_dim >> m.cfg_.k_vars >> m.cfg_.c_classes >>
      m.cfg_.e_dim >> m.cfg_.enc_hidden >> m.cfg_.dec_hidden >> m.cfg_.unimix;
  std::size_t n_params = 0;
  in >> n_params;
  for (std::size_t i = 0; i < n_params; ++i) {
    Param p;
    std::size_t n_values = 0;
    in >> p.name >> p.shape.rank >> p.shape.d0 >> p.shape.d1 >> n_values;
    in.get();  // newline before the raw block
    p.values.resize(n_values);
    in.read(reinterpret_cast<char*>(p.values.data()),
            static_cast<std::streamsize>(n_values * sizeof(double)));
    if (!in) throw IoError("truncated checkpoint: " + path);
    m.params_.push_back(std::move(p));
  }
  return m;
}

// ---------------------------------------------------------------------------
// network pieces

namespace {

a::Tensor broadcast_bias(const a::Tensor& bias, int rows) {
  return a::matmul(a::Tensor::full(a::Shape::mat(rows, 1), 1.0), bias);
}

a::Tensor affine(const a::Tensor& x, const a::Tensor& w, const a::Tensor& b) {
  return a::add(a::matmul(x, w), broadcast_bias(b, x.shape().rows()));
}

a::Tensor sigmoid(const a::Tensor& x) {
  a::Tensor ones = a::Tensor::full(x.shape(), 1.0);
  return a::scale(a::add(a::tanh(a::scale(x, 0.5)), ones), 0.5);
}

a::Tensor mix_uniform(const a::Tensor& probs, double unimix, int classes) {
  if (unimix == 0.0) return probs;
  return a::add(a::scale(probs, 1.0 - unimix),
                a::Tensor::full(probs.shape(), unimix / classes));
}

BatchedTable head_table(const RssmConfig& cfg, const std::vector<a::Tensor>& ws,
                        const std::vector<a::Tensor>& bs, const a::Tensor& input) {
  BatchedTable t;
  t.K = cfg.k_vars;
  t.C = cfg.c_classes;
  t.input = input;
  for (int i = 0; i < cfg.k_vars; ++i) {
    a::Tensor logits = affine(input, ws[static_cast<std::size_t>(i)], bs[static_cast<std::size_t>(i)]);
    t.rows.push_back(mix_uniform(a::row_softmax(logits), cfg.unimix, cfg.c_classes));
  }
  return t;
}

gpld::ProbTable to_prob_table(BatchedTable&& t) {
  gpld::ProbTable out;
  out.K = t.K;
  out.C = t.C;
  out.rows = std::move(t.rows);
  out.input = t.input;
  return out;
}

}  // namespace

BatchedTable posterior(const RssmConfig& cfg, const BoundParams& p, const a::Tensor& h,
                       const a::Tensor& e) {
  std::vector<a::Tensor> parts{h, e};
  a::Tensor u = a::concat_last(parts);
  return head_table(cfg, p.post_w, p.post_b, u);
}

BatchedTable prior(const RssmConfig& cfg, const BoundParams& p, const a::Tensor& h) {
  return head_table(cfg, p.prior_w, p.prior_b, h);
}

gpld::ProbTable posterior_table(const RssmConfig& cfg, const BoundParams& p,
                                const a::Tensor& h, const a::Tensor& e) {
  return to_prob_table(posterior(cfg, p, h, e));
}

gpld::ProbTable prior_table(const RssmConfig& cfg, const BoundParams& p, const a::Tensor& h) {
  return to_prob_table(prior(cfg, p, h));
}

a::Tensor encode(const RssmConfig& cfg, const BoundParams& p, const a::Tensor& obs) {
  (void)cfg;
  a::Tensor h1 = a::tanh(affine(obs, p.enc_w1, p.enc_b1));
  return a::tanh(affine(h1, p.enc_w2, p.enc_b2));
}

a::Tensor core_step(const RssmConfig& cfg, const BoundParams& p, const a::Tensor& h,
                    const a::Tensor& z_flat, const a::Tensor& act) {
  (void)cfg;
  std::vector<a::Tensor> parts{h, z_flat, act};
  a::Tensor x = a::concat_last(parts);
  a::Tensor gate = sigmoid(affine(x, p.gate_w, p.gate_b));
  a::Tensor cand = a::tanh(affine(x, p.cand_w, p.cand_b));
  a::Tensor keep = a::sub(a::Tensor::full(gate.shape(), 1.0), gate);
  return a::add(a::multiply(keep, h), a::multiply(gate, cand));
}

LatentSample sample_latent(const BatchedTable& table, Rng& rng) {
  LatentSample out;
  const int B = table.rows[0].shape().rows();
  const int C = table.C;
  for (int i = 0; i < table.K; ++i) {
    const a::Tensor& probs = table.rows[static_cast<std::size_t>(i)];
    std::vector<double> onehot(static_cast<std::size_t>(B) * C, 0.0);
    for (int b = 0; b < B; ++b) {
      int cls = rng.categorical(probs.values().data() + static_cast<std::size_t>(b) * C, C);
      onehot[static_cast<std::size_t>(b) * C + cls] = 1.0;
    }
    a::Tensor oh(a::Shape::mat(B, C), std::move(onehot));
    // Straight-through: value is the one-hot, gradient follows the probs.
    out.rows.push_back(a::add(a::stop_gradient(a::sub(oh, probs)), probs));
  }
  out.flat = a::concat_last(out.rows);
  return out;
}

namespace {

// Per-sample KL summed over rows, before the free-bits clamp: (B x 1).
a::Tensor kl_cols_raw(const std::vector<a::Tensor>& q_rows, const std::vector<a::Tensor>& p_rows,
                      SgSide sg, int C) {
  a::Tensor acc;
  a::Tensor col_ones = a::Tensor::full(a::Shape::mat(C, 1), 1.0);
  for (std::size_t i = 0; i < q_rows.size(); ++i) {
    a::Tensor q = q_rows[i];
    a::Tensor p = p_rows[i];
    if (sg == SgSide::kPosterior) q = a::stop_gradient(q);
    else p = a::stop_gradient(p);
    a::Tensor term = a::multiply(q, a::sub(a::log(q), a::log(p)));
    a::Tensor col = a::matmul(term, col_ones);
    acc = (i == 0) ? col : a::add(acc, col);
  }
  return acc;
}

// max(1, kl) per entry; the branch is picked from forward values, which is
// the eager-mode subgradient of the clamp.
a::Tensor free_bits_clamp(const a::Tensor& kl_col) {
  const auto& v = kl_col.values();
  std::vector<double> mask(v.size()), comp(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    mask[i] = v[i] >= 1.0 ? 1.0 : 0.0;
    comp[i] = v[i] >= 1.0 ? 0.0 : 1.0;
  }
  return a::add(a::multiply(a::Tensor(kl_col.shape(), mask), kl_col),
                a::Tensor(kl_col.shape(), comp));
}

}  // namespace

a::Tensor kl_free_bits_cols(const BatchedTable& q, const BatchedTable& p, SgSide sg) {
  if (q.K != p.K || q.C != p.C) throw ShapeError("kl_free_bits: table shapes differ");
  return free_bits_clamp(kl_cols_raw(q.rows, p.rows, sg, q.C));
}

a::Tensor kl_free_bits(const gpld::ProbTable& q, const gpld::ProbTable& p, SgSide sg) {
  if (q.K != p.K || q.C != p.C) throw ShapeError("kl_free_bits: table shapes differ");
  return free_bits_clamp(kl_cols_raw(q.rows, p.rows, sg, q.C));
}

// ---------------------------------------------------------------------------
// batches

a::Tensor Batch::obs_slice(int t) const {
  std::vector<double> v(static_cast<std::size_t>(B) * obs_dim);
  for (int b = 0; b < B; ++b)
    for (int d = 0; d < obs_dim; ++d)
      v[static_cast<std::size_t>(b) * obs_dim + d] =
          obs[(static_cast<std::size_t>(b) * T + t) * obs_dim + d];
  return a::Tensor(a::Shape::mat(B, obs_dim), std::move(v));
}

a::Tensor Batch::act_slice(int t) const {
  std::vector<double> v(static_cast<std::size_t>(B) * act_dim);
  for (int b = 0; b < B; ++b)
    for (int d = 0; d < act_dim; ++d)
      v[static_cast<std::size_t>(b) * act_dim + d] =
          actions[(static_cast<std::size_t>(b) * T + t) * act_dim + d];
  return a::Tensor(a::Shape::mat(B, act_dim), std::move(v));
}

a::Tensor Batch::reward_col(int t) const {
  std::vector<double> v(static_cast<std::size_t>(B));
  for (int b = 0; b < B; ++b) v[static_cast<std::size_t>(b)] = rewards[static_cast<std::size_t>(b) * T + t];
  return a::Tensor(a::Shape::mat(B, 1), std::move(v));
}

std::vector<int> Batch::cont_col(int t) const {
  std::vector<int> v(static_cast<std::size_t>(B));
  for (int b = 0; b < B; ++b)
    v[static_cast<std::size_t>(b)] = conts[static_cast<std::size_t>(b) * T + t] != 0.0 ? 1 : 0;
  return v;
}

Batch sample_batch(const envs::Dataset& ds, int B, int T, Rng& rng) {
  if (ds.episodes.empty()) throw DomainError("sample_batch: empty dataset");
  if (ds.episode_len < T) throw DomainError("sample_batch: episodes shorter than sequence length");
  Batch batch;
  batch.B = B;
  batch.T = T;
  batch.obs_dim = ds.obs_dim;
  batch.act_dim = ds.act_dim;
  batch.obs.resize(static_cast<std::size_t>(B) * T * ds.obs_dim);
  batch.actions.resize(static_cast<std::size_t>(B) * T * ds.act_dim);
  batch.rewards.resize(static_cast<std::size_t>(B) * T);
  batch.conts.resize(static_cast<std::size_t>(B) * T);
  for (int b = 0; b < B; ++b) {
    int e = rng.uniform_int(static_cast<int>(ds.episodes.size()));
    int off = rng.uniform_int(ds.episode_len - T + 1);
    for (int t = 0; t < T; ++t) {
      const envs::Transition& tr = ds.episodes[static_cast<std::size_t>(e)].steps[static_cast<std::size_t>(off + t)];
      for (int d = 0; d < ds.obs_dim; ++d)
        batch.obs[(static_cast<std::size_t>(b) * T + t) * ds.obs_dim + d] = tr.obs[static_cast<std::size_t>(d)];
      for (int d = 0; d < ds.act_dim; ++d)
        batch.actions[(static_cast<std::size_t>(b) * T + t) * ds.act_dim + d] = tr.action[static_cast<std::size_t>(d)];
      batch.rewards[static_cast<std::size_t>(b) * T + t] = tr.reward;
      batch.conts[static_cast<std::size_t>(b) * T + t] = tr.continuation;
    }
  }
  return batch;
}

// ---------------------------------------------------------------------------
// objective

LossBreakdown world_model_loss(const RssmConfig& cfg, const BoundParams& p, const Batch& batch,
                               const gpld::GpldConfig* gpld_cfg, const Betas& betas,
                               long t_updates, Rng& rng, LatentMode latent_mode) {
  if (batch.obs_dim != cfg.obs_dim || batch.act_dim != cfg.act_dim)
    throw ShapeError("world_model_loss: batch dims do not match model config");
  const int B = batch.B, T = batch.T;
  a::Tape* tape = p.enc_w1.tape();

  LossBreakdown out;
  bool post_pen = false, prior_pen = false;
  std::vector<std::vector<int>> sampled_at(static_cast<std::size_t>(T));
  int n_sampled = 0;
  if (gpld_cfg) {
    gpld_cfg->validate();
    // lambda0 == 0 means the term is off outright; the decay floor applies
    // only to coefficients that start positive.
    out.lambda_post_effective =
        gpld_cfg->lambda0_post == 0.0
            ? 0.0
            : gpld::decay_lambda(gpld_cfg->lambda0_post, t_updates, gpld_cfg->decay_scale,
                                 gpld_cfg->lambda_min, gpld_cfg->decay_enabled);
    out.lambda_prior_effective =
        gpld_cfg->lambda0_prior == 0.0
            ? 0.0
            : gpld::decay_lambda(gpld_cfg->lambda0_prior, t_updates, gpld_cfg->decay_scale,
                                 gpld_cfg->lambda_min, gpld_cfg->decay_enabled);
    post_pen = out.lambda_post_effective > 0.0;
    prior_pen = out.lambda_prior_effective > 0.0;
    if (post_pen || prior_pen) {
      if (!tape) throw DomainError("world_model_loss: penalty requires tape-bound parameters");
      // states are flattened time-major: index = t*B + b
      std::vector<int> idx = gpld::sample_batch_indices(B * T, gpld_cfg->rho, rng);
      n_sampled = static_cast<int>(idx.size());
      for (int j : idx) sampled_at[static_cast<std::size_t>(j / B)].push_back(j % B);
    }
  }
  out.penalty_states = n_sampled;

  a::Tensor h = tape ? tape->leaf(a::Tensor::zeros(a::Shape::mat(B, cfg.h_dim)))
                     : a::Tensor::zeros(a::Shape::mat(B, cfg.h_dim));

  a::Tensor rec_acc = a::Tensor::scalar(0.0);
  a::Tensor rew_acc = a::Tensor::scalar(0.0);
  a::Tensor cont_acc = a::Tensor::scalar(0.0);
  a::Tensor dyn_acc = a::Tensor::scalar(0.0);
  a::Tensor rep_acc = a::Tensor::scalar(0.0);
  a::Tensor pen_post_acc = a::Tensor::scalar(0.0);
  a::Tensor pen_prior_acc = a::Tensor::scalar(0.0);

  auto row_probe = [&](const std::vector<int>& rows_sampled) {
    // Rademacher entries on sampled batch rows, zeros elsewhere; a zero row
    // removes that state from the probe sum.
    std::vector<double> probe(static_cast<std::size_t>(B) * cfg.c_classes, 0.0);
    for (int b : rows_sampled)
      for (int c = 0; c < cfg.c_classes; ++c)
        probe[static_cast<std::size_t>(b) * cfg.c_classes + c] = rng.rademacher();
    return a::Tensor(a::Shape::mat(B, cfg.c_classes), std::move(probe));
  };

  auto table_penalty = [&](const BatchedTable& table, const std::vector<int>& rows_sampled,
                           a::Tensor& acc) {
    for (int i = 0; i < table.K; ++i) {
      a::Tensor s = a::dot(table.rows[static_cast<std::size_t>(i)], row_probe(rows_sampled));
      auto g = tape->backward(s, {&table.input, 1}, /*create_graph=*/true);
      acc = a::add(acc, a::dot(g.grads[0], g.grads[0]));
    }
  };

  for (int t = 0; t < T; ++t) {
    a::Tensor obs_t = batch.obs_slice(t);
    a::Tensor e = encode(cfg, p, obs_t);
    BatchedTable q = posterior(cfg, p, h, e);
    if (post_pen && !sampled_at[static_cast<std::size_t>(t)].empty())
      table_penalty(q, sampled_at[static_cast<std::size_t>(t)], pen_post_acc);
    BatchedTable pr = prior(cfg, p, h);
    if (prior_pen && !sampled_at[static_cast<std::size_t>(t)].empty())
      table_penalty(pr, sampled_at[static_cast<std::size_t>(t)], pen_prior_acc);

    LatentSample z;
    if (latent_mode == LatentMode::kSample) {
      z = sample_latent(q, rng);
    } else {
      z.rows = q.rows;
      z.flat = a::concat_last(q.rows);
    }
    dyn_acc = a::add(dyn_acc, a::sum(kl_free_bits_cols(q, pr, SgSide::kPosterior)));
    rep_acc = a::add(rep_acc, a::sum(kl_free_bits_cols(q, pr, SgSide::kPrior)));

    std::vector<a::Tensor> feat_parts{h, z.flat};
    a::Tensor feat = a::concat_last(feat_parts);
    a::Tensor recon = affine(a::tanh(affine(feat, p.dec_w1, p.dec_b1)), p.dec_w2, p.dec_b2);
    rec_acc = a::add(rec_acc, a::sum(a::square(a::sub(recon, obs_t))));
    a::Tensor rew = affine(feat, p.rew_w, p.rew_b);
    rew_acc = a::add(rew_acc, a::sum(a::square(a::sub(rew, batch.reward_col(t)))));

    a::Tensor cont_p = mix_uniform(a::row_softmax(affine(feat, p.cont_w, p.cont_b)), cfg.unimix, 2);
    std::vector<int> cont = batch.cont_col(t);
    std::vector<double> onehot(static_cast<std::size_t>(B) * 2, 0.0);
    for (int b = 0; b < B; ++b) onehot[static_cast<std::size_t>(b) * 2 + cont[static_cast<std::size_t>(b)]] = 1.0;
    cont_acc = a::add(cont_acc, a::scale(a::dot(a::Tensor(a::Shape::mat(B, 2), std::move(onehot)),
                                                a::log(cont_p)),
                                         -1.0));

    h = core_step(cfg, p, h, z.flat, batch.act_slice(t));
  }

  const double inv_bt = 1.0 / (static_cast<double>(B) * T);
  a::Tensor pred_t = a::scale(a::add(a::add(rec_acc, rew_acc), cont_acc), inv_bt);
  a::Tensor dyn_t = a::scale(dyn_acc, inv_bt);
  a::Tensor rep_t = a::scale(rep_acc, inv_bt);

  a::Tensor total = a::add(a::add(a::scale(pred_t, betas.pred), a::scale(dyn_t, betas.dyn)),
                           a::scale(rep_t, betas.rep));
  a::Tensor gpld_post_t = a::Tensor::scalar(0.0);
  a::Tensor gpld_prior_t = a::Tensor::scalar(0.0);
  if (post_pen) {
    gpld_post_t = a::scale(pen_post_acc, 1.0 / (static_cast<double>(cfg.k_vars) * n_sampled));
    total = a::add(total, a::scale(gpld_post_t, out.lambda_post_effective));
  }
  if (prior_pen) {
    gpld_prior_t = a::scale(pen_prior_acc, 1.0 / (static_cast<double>(cfg.k_vars) * n_sampled));
    total = a::add(total, a::scale(gpld_prior_t, out.lambda_prior_effective));
  }

  out.pred = pred_t.scalar_value();
  out.dyn = dyn_t.scalar_value();
  out.rep = rep_t.scalar_value();
  out.gpld_post = gpld_post_t.scalar_value();
  out.gpld_prior = gpld_prior_t.scalar_value();
  out.total = total.scalar_value();
  out.total_t = total;

  auto check = [](double v, const char* name) {
    if (!std::isfinite(v)) throw NumericError(std::string("world_model_loss: non-finite ") + name);
  };
  check(out.pred, "pred");
  check(out.dyn, "dyn");
  check(out.rep, "rep");
  check(out.gpld_post, "gpld_post");
  check(out.gpld_prior, "gpld_prior");
  check(out.total, "total");
  return out;
}

// ---------------------------------------------------------------------------
// optimization

LossBreakdown train_step(RssmModel& model, const Batch& batch,
                         const gpld::GpldConfig* gpld_cfg, const Betas& betas,
                         AdamState& opt, Rng& rng) {
  a::Tape tape;
  BoundParams bound = model.bind(tape);
  LossBreakdown loss =
      world_model_loss(model.config(), bound, batch, gpld_cfg, betas, opt.t, rng);

  auto grads = tape.backward(loss.total_t, bound.all, /*create_graph=*/false);
  auto& params = model.params();
  if (opt.m.empty()) {
    opt.m.resize(params.size());
    opt.v.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      opt.m[i].assign(params[i].values.size(), 0.0);
      opt.v[i].assign(params[i].values.size(), 0.0);
    }
  }
  opt.t += 1;
  const double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(opt.t));
  const double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(opt.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& g = grads.grads[i].values();
    auto& w = params[i].values;
    auto& m = opt.m[i];
    auto& v = opt.v[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      if (!std::isfinite(g[j]))
        throw NumericError("train_step: non-finite gradient in " + params[i].name);
      m[j] = opt.beta1 * m[j] + (1.0 - opt.beta1) * g[j];
      v[j] = opt.beta2 * v[j] + (1.0 - opt.beta2) * g[j] * g[j];
      w[j] -= opt.lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + opt.eps);
    }
  }
  loss.total_t = a::Tensor::scalar(loss.total);  // detach from the dead tape
  return loss;
}

double multi_step_prediction_error(const RssmModel& model, const envs::Episode& episode,
                                   int horizon, Rng& rng) {
  const RssmConfig& cfg = model.config();
  const int len = static_cast<int>(episode.steps.size());
  if (len <= horizon) throw DomainError("multi_step_prediction_error: trajectory too short");
  BoundParams p = model.bind_const();

  auto obs_at = [&](int t) {
    return a::Tensor(a::Shape::mat(1, cfg.obs_dim), episode.steps[static_cast<std::size_t>(t)].obs);
  };
  auto act_at = [&](int t) {
    return a::Tensor(a::Shape::mat(1, cfg.act_dim), episode.steps[static_cast<std::size_t>(t)].action);
  };
  auto decode = [&](const a::Tensor& h, const a::Tensor& z_flat) {
    std::vector<a::Tensor> parts{h, z_flat};
    a::Tensor feat = a::concat_last(parts);
    return affine(a::tanh(affine(feat, p.dec_w1, p.dec_b1)), p.dec_w2, p.dec_b2);
  };
  auto sq_err = [&](const a::Tensor& pred, int t) {
    const auto& truth = episode.steps[static_cast<std::size_t>(t)].obs;
    double e = 0.0;
    for (int d = 0; d < cfg.obs_dim; ++d) {
      double diff = pred.values()[static_cast<std::size_t>(d)] - truth[static_cast<std::size_t>(d)];
      e += diff * diff;
    }
    return e / cfg.obs_dim;
  };

  // Filtering pass: posterior state at every step.
  std::vector<a::Tensor> hs, zs;
  a::Tensor h = a::Tensor::zeros(a::Shape::mat(1, cfg.h_dim));
  for (int t = 0; t < len; ++t) {
    a::Tensor e = encode(cfg, p, obs_at(t));
    BatchedTable q = posterior(cfg, p, h, e);
    LatentSample z = sample_latent(q, rng);
    hs.push_back(h);
    zs.push_back(z.flat);
    h = core_step(cfg, p, h, z.flat, act_at(t));
  }

  double acc = 0.0;
  long count = 0;
  if (horizon == 0) {
    for (int s = 0; s < len; ++s) {
      acc += sq_err(decode(hs[static_cast<std::size_t>(s)], zs[static_cast<std::size_t>(s)]), s);
      ++count;
    }
  } else {
    for (int s = 0; s + horizon < len; ++s) {
      a::Tensor hr = hs[static_cast<std::size_t>(s)];
      a::Tensor zr = zs[static_cast<std::size_t>(s)];
      for (int j = 1; j <= horizon; ++j) {
        hr = core_step(cfg, p, hr, zr, act_at(s + j - 1));
        BatchedTable pt = prior(cfg, p, hr);
        zr = sample_latent(pt, rng).flat;
        acc += sq_err(decode(hr, zr), s + j);
        ++count;
      }
    }
  }
  return acc / static_cast<double>(count);
}

}  // namespace gpldlab::rssm
