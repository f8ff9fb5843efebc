#include "gpldlab/config.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

namespace gpldlab::runner {

namespace {

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ',') {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!trim(cur).empty() || !out.empty()) out.push_back(trim(cur));
  return out;
}

std::string fmt_num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

KvConfig KvConfig::parse_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path, "cannot open config file");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_string(ss.str(), path);
}

KvConfig KvConfig::parse_string(const std::string& text, const std::string& origin) {
  KvConfig cfg;
  cfg.origin_ = origin;
  std::istringstream in(text);
  std::string line;
  std::string section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    if (t.front() == '[') {
      if (t.back() != ']')
        throw ConfigError(origin + ":" + std::to_string(lineno), "malformed section header");
      section = trim(t.substr(1, t.size() - 2));
      if (section.empty())
        throw ConfigError(origin + ":" + std::to_string(lineno), "empty section name");
      cfg.sections_[section];  // section may legitimately stay empty
      continue;
    }
    std::size_t eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError(origin + ":" + std::to_string(lineno), "expected key = value");
    if (section.empty())
      throw ConfigError(origin + ":" + std::to_string(lineno), "key outside any section");
    std::string key = trim(t.substr(0, eq));
    std::string value = trim(t.substr(eq + 1));
    if (key.empty()) throw ConfigError(origin + ":" + std::to_string(lineno), "empty key");
    if (cfg.sections_[section].count(key))
      throw ConfigError("[" + section + "] " + key, "duplicate key");
    cfg.sections_[section][key] = value;
  }
  return cfg;
}

bool KvConfig::has(const std::string& section, const std::string& key) const {
  auto s = sections_.find(section);
  return s != sections_.end() && s->second.count(key) > 0;
}

std::string KvConfig::get_str(const std::string& section, const std::string& key,
                              const std::string& fallback) const {
  auto s = sections_.find(section);
  if (s == sections_.end()) return fallback;
  auto k = s->second.find(key);
  return k == s->second.end() ? fallback : k->second;
}

std::string KvConfig::require_str(const std::string& section, const std::string& key) const {
  if (!has(section, key)) throw ConfigError("[" + section + "] " + key, "required key missing");
  return sections_.at(section).at(key);
}

double KvConfig::get_num(const std::string& section, const std::string& key,
                         double fallback) const {
  if (!has(section, key)) return fallback;
  const std::string& v = sections_.at(section).at(key);
  try {
    std::size_t pos = 0;
    double x = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError("[" + section + "] " + key, "not a number: " + v);
  }
}

long KvConfig::get_int(const std::string& section, const std::string& key, long fallback) const {
  if (!has(section, key)) return fallback;
  const std::string& v = sections_.at(section).at(key);
  try {
    std::size_t pos = 0;
    long x = std::stol(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError("[" + section + "] " + key, "not an integer: " + v);
  }
}

bool KvConfig::get_bool(const std::string& section, const std::string& key, bool fallback) const {
  if (!has(section, key)) return fallback;
  std::string v = sections_.at(section).at(key);
  if (v == "true" || v == "on" || v == "1") return true;
  if (v == "false" || v == "off" || v == "0") return false;
  throw ConfigError("[" + section + "] " + key, "not a boolean: " + v);
}

std::vector<double> KvConfig::get_num_list(const std::string& section, const std::string& key,
                                           const std::vector<double>& fallback) const {
  if (!has(section, key)) return fallback;
  std::vector<double> out;
  for (const std::string& item : split_csv(sections_.at(section).at(key))) {
    try {
      out.push_back(std::stod(item));
    } catch (const std::exception&) {
      throw ConfigError("[" + section + "] " + key, "not a number: " + item);
    }
  }
  if (out.empty()) throw ConfigError("[" + section + "] " + key, "empty list");
  return out;
}

std::vector<std::string> KvConfig::get_str_list(const std::string& section, const std::string& key,
                                                const std::vector<std::string>& fallback) const {
  if (!has(section, key)) return fallback;
  auto out = split_csv(sections_.at(section).at(key));
  if (out.empty()) throw ConfigError("[" + section + "] " + key, "empty list");
  return out;
}

void KvConfig::check_schema(const std::map<std::string, std::set<std::string>>& allowed) const {
  for (const auto& [section, kvs] : sections_) {
    auto it = allowed.find(section);
    if (it == allowed.end()) throw ConfigError("[" + section + "]", "unknown section");
    for (const auto& [key, value] : kvs) {
      (void)value;
      if (!it->second.count(key)) throw ConfigError("[" + section + "] " + key, "unknown key");
    }
  }
}

const char* kind_name(ExperimentKind k) {
  switch (k) {
    case ExperimentKind::kMdpFit: return "mdp_fit";
    case ExperimentKind::kLimitChecks: return "limit_checks";
    case ExperimentKind::kEstimatorBench: return "estimator_bench";
    case ExperimentKind::kWorldModelTrain: return "world_model_train";
    case ExperimentKind::kSensitivity: return "sensitivity";
    case ExperimentKind::kTiming: return "timing";
    case ExperimentKind::kAblationGrid: return "ablation_grid";
  }
  return "?";
}

ExperimentKind kind_from_name(const std::string& name) {
  for (ExperimentKind k :
       {ExperimentKind::kMdpFit, ExperimentKind::kLimitChecks, ExperimentKind::kEstimatorBench,
        ExperimentKind::kWorldModelTrain, ExperimentKind::kSensitivity, ExperimentKind::kTiming,
        ExperimentKind::kAblationGrid})
    if (name == kind_name(k)) return k;
  throw ConfigError("[experiment] kind", "unknown kind: " + name);
}

namespace {

std::map<std::string, std::set<std::string>> schema_for(ExperimentKind kind) {
  std::map<std::string, std::set<std::string>> s;
  s["experiment"] = {"kind", "name", "seeds", "out_dir"};
  auto env = std::set<std::string>{"name",         "episodes",     "episode_len", "obs_noise",
                                   "policy",       "sinusoid_amp", "sinusoid_period"};
  auto model = std::set<std::string>{"h_dim",      "k_vars",     "c_classes", "e_dim",
                                     "enc_hidden", "dec_hidden", "unimix"};
  auto optim = std::set<std::string>{"lr", "steps", "batch_size", "seq_len", "log_every"};
  auto gpld = std::set<std::string>{"lambda0_post", "lambda0_prior", "rho",       "decay_scale",
                                    "lambda_min",   "decay_enabled", "probe_mode"};
  switch (kind) {
    case ExperimentKind::kMdpFit:
      s["mdp"] = {"n_states",  "n_actions",     "embed_dim", "sigma",   "drift_amp",
                  "epsilon",   "generator",     "samples_per_sa", "alpha",
                  "lambda_grid", "gd_step", "gd_iters"};
      break;
    case ExperimentKind::kLimitChecks:
      s["limits"] = {"h_list", "n_matrices", "sphere_samples", "sphere_samples_small"};
      break;
    case ExperimentKind::kEstimatorBench:
      s["bench"] = {"instances", "probes"};
      break;
    case ExperimentKind::kWorldModelTrain:
      s["env"] = env;
      s["model"] = model;
      s["optim"] = optim;
      s["gpld"] = gpld;
      break;
    case ExperimentKind::kSensitivity:
      s["env"] = env;
      s["model"] = model;
      s["optim"] = optim;
      s["gpld"] = gpld;
      s["sensitivity"] = {"train_steps", "magnitudes", "n_probes", "horizon"};
      break;
    case ExperimentKind::kTiming:
      s["env"] = env;
      s["model"] = model;
      s["optim"] = optim;
      s["gpld"] = gpld;
      s["timing"] = {"n_steps", "warmup", "rho_grid"};
      break;
    case ExperimentKind::kAblationGrid:
      s["env"] = env;
      s["model"] = model;
      s["optim"] = optim;
      s["gpld"] = gpld;
      s["grid"] = {"rho", "lambda0_post", "lambda0_prior", "decay"};
      break;
  }
  return s;
}

}  // namespace

ExperimentConfig ExperimentConfig::from_kv(const KvConfig& kv) {
  ExperimentConfig c;
  c.kind = kind_from_name(kv.require_str("experiment", "kind"));
  kv.check_schema(schema_for(c.kind));

  c.name = kv.get_str("experiment", "name", kind_name(c.kind));
  c.seeds.clear();
  for (const std::string& s : kv.get_str_list("experiment", "seeds", {"0"})) {
    try {
      c.seeds.push_back(static_cast<std::uint64_t>(std::stoull(s)));
    } catch (const std::exception&) {
      throw ConfigError("[experiment] seeds", "not an unsigned integer: " + s);
    }
  }
  const char* env_root = std::getenv("GPLD_LAB_OUT");
  c.out_dir = kv.get_str("experiment", "out_dir", env_root ? env_root : "runs");

  c.env = envs::env_from_name(kv.get_str("env", "name", "pendulum"));
  c.collect.n_episodes = static_cast<int>(kv.get_int("env", "episodes", 20));
  c.collect.episode_len = static_cast<int>(kv.get_int("env", "episode_len", 100));
  c.collect.obs_noise = kv.get_num("env", "obs_noise", 0.01);
  c.collect.policy = envs::policy_from_name(kv.get_str("env", "policy", "uniform-random"));
  c.collect.sinusoid_amp = kv.get_num("env", "sinusoid_amp", 1.0);
  c.collect.sinusoid_period = kv.get_num("env", "sinusoid_period", 40.0);

  c.model.obs_dim = envs::obs_dim(c.env);
  c.model.act_dim = envs::kActDim;
  c.model.h_dim = static_cast<int>(kv.get_int("model", "h_dim", 64));
  c.model.k_vars = static_cast<int>(kv.get_int("model", "k_vars", 8));
  c.model.c_classes = static_cast<int>(kv.get_int("model", "c_classes", 8));
  c.model.e_dim = static_cast<int>(kv.get_int("model", "e_dim", 16));
  c.model.enc_hidden = static_cast<int>(kv.get_int("model", "enc_hidden", 32));
  c.model.dec_hidden = static_cast<int>(kv.get_int("model", "dec_hidden", 32));
  c.model.unimix = kv.get_num("model", "unimix", 0.01);

  c.optim.lr = kv.get_num("optim", "lr", 3e-4);
  c.optim.steps = kv.get_int("optim", "steps", 2000);
  c.optim.batch_size = static_cast<int>(kv.get_int("optim", "batch_size", 16));
  c.optim.seq_len = static_cast<int>(kv.get_int("optim", "seq_len", 32));
  c.optim.log_every = kv.get_int("optim", "log_every", 20);

  c.gpld.lambda0_post = kv.get_num("gpld", "lambda0_post", 0.5);
  c.gpld.lambda0_prior = kv.get_num("gpld", "lambda0_prior", 0.0);
  c.gpld.rho = kv.get_num("gpld", "rho", 0.5);
  c.gpld.decay_scale = kv.get_num("gpld", "decay_scale", 1000.0);
  c.gpld.lambda_min = kv.get_num("gpld", "lambda_min", 0.001);
  c.gpld.decay_enabled = kv.get_bool("gpld", "decay_enabled", true);
  std::string mode = kv.get_str("gpld", "probe_mode", "per-row");
  if (mode == "per-row") c.gpld.probe_mode = gpld::ProbeMode::kPerRow;
  else if (mode == "full-table") c.gpld.probe_mode = gpld::ProbeMode::kFullTable;
  else throw ConfigError("[gpld] probe_mode", "expected per-row or full-table: " + mode);
  c.gpld.validate();

  c.mdp.ring.n_states = static_cast<int>(kv.get_int("mdp", "n_states", 8));
  c.mdp.ring.n_actions = static_cast<int>(kv.get_int("mdp", "n_actions", 2));
  c.mdp.ring.embed_dim = static_cast<int>(kv.get_int("mdp", "embed_dim", 2));
  c.mdp.ring.sigma = kv.get_num("mdp", "sigma", 1.5);
  c.mdp.ring.drift_amp = kv.get_num("mdp", "drift_amp", 0.35);
  c.mdp.ring.epsilon = kv.get_num("mdp", "epsilon", 1.2);
  c.mdp.generator = kv.get_str("mdp", "generator", "ring");
  if (c.mdp.generator != "ring" && c.mdp.generator != "teleport")
    throw ConfigError("[mdp] generator", "expected ring or teleport: " + c.mdp.generator);
  c.mdp.samples_per_sa = static_cast<int>(kv.get_int("mdp", "samples_per_sa", 5));
  c.mdp.alpha = kv.get_num("mdp", "alpha", 0.0);
  c.mdp.lambda_grid = kv.get_num_list("mdp", "lambda_grid", {0.0, 0.1, 1.0});
  c.mdp.fit.step_size = kv.get_num("mdp", "gd_step", 0.1);
  c.mdp.fit.iterations = static_cast<int>(kv.get_int("mdp", "gd_iters", 1500));

  c.limits.h_list = kv.get_num_list("limits", "h_list", {1e-1, 1e-2, 1e-3, 1e-4});
  c.limits.n_matrices = static_cast<int>(kv.get_int("limits", "n_matrices", 10));
  c.limits.sphere_samples = kv.get_int("limits", "sphere_samples", 100000);
  c.limits.sphere_samples_small = kv.get_int("limits", "sphere_samples_small", 1000);

  c.bench.instances = static_cast<int>(kv.get_int("bench", "instances", 50));
  c.bench.probes = kv.get_int("bench", "probes", 10000);

  c.sensitivity.train_steps = kv.get_int("sensitivity", "train_steps", 2000);
  c.sensitivity.magnitudes =
      kv.get_num_list("sensitivity", "magnitudes", {0.001, 0.003, 0.01, 0.03, 0.1});
  c.sensitivity.n_probes = static_cast<int>(kv.get_int("sensitivity", "n_probes", 16));
  c.sensitivity.horizon = static_cast<int>(kv.get_int("sensitivity", "horizon", 10));

  c.timing.n_steps = static_cast<int>(kv.get_int("timing", "n_steps", 60));
  c.timing.warmup = static_cast<int>(kv.get_int("timing", "warmup", 10));
  c.timing.rho_grid = kv.get_num_list("timing", "rho_grid", {0.25, 0.5, 0.75, 1.0});

  c.grid.rho = kv.get_num_list("grid", "rho", {0.25, 0.5, 0.75, 1.0});
  c.grid.lambda0_post = kv.get_num_list("grid", "lambda0_post", {0.5});
  c.grid.lambda0_prior = kv.get_num_list("grid", "lambda0_prior", {0.0});
  c.grid.decay = kv.get_str_list("grid", "decay", {"on"});
  for (const std::string& d : c.grid.decay)
    if (d != "on" && d != "off") throw ConfigError("[grid] decay", "expected on or off: " + d);

  if (c.seeds.empty()) throw ConfigError("[experiment] seeds", "need at least one seed");
  c.model.validate();
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::string& path) {
  return from_kv(KvConfig::parse_file(path));
}

std::string ExperimentConfig::resolved_text() const {
  std::ostringstream out;
  out << "[experiment]\n";
  out << "kind = " << kind_name(kind) << "\n";
  out << "name = " << name << "\n";
  out << "seeds = ";
  for (std::size_t i = 0; i < seeds.size(); ++i) out << (i ? "," : "") << seeds[i];
  out << "\n";
  out << "out_dir = " << out_dir << "\n";

  auto num_list = [](const std::vector<double>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + fmt_num(v[i]);
    return s;
  };

  const bool wm = kind == ExperimentKind::kWorldModelTrain || kind == ExperimentKind::kSensitivity ||
                  kind == ExperimentKind::kTiming || kind == ExperimentKind::kAblationGrid;
  if (wm) {
    out << "\n[env]\n";
    out << "name = " << envs::env_name(env) << "\n";
    out << "episodes = " << collect.n_episodes << "\n";
    out << "episode_len = " << collect.episode_len << "\n";
    out << "obs_noise = " << fmt_num(collect.obs_noise) << "\n";
    out << "policy = "
        << (collect.policy == envs::PolicyKind::kUniformRandom ? "uniform-random"
                                                               : "scripted-sinusoid")
        << "\n";
    out << "sinusoid_amp = " << fmt_num(collect.sinusoid_amp) << "\n";
    out << "sinusoid_period = " << fmt_num(collect.sinusoid_period) << "\n";
    out << "\n[model]\n";
    out << "h_dim = " << model.h_dim << "\n";
    out << "k_vars = " << model.k_vars << "\n";
    out << "c_classes = " << model.c_classes << "\n";
    out << "e_dim = " << model.e_dim << "\n";
    out << "enc_hidden = " << model.enc_hidden << "\n";
    out << "dec_hidden = " << model.dec_hidden << "\n";
    out << "unimix = " << fmt_num(model.unimix) << "\n";
    out << "\n[optim]\n";
    out << "lr = " << fmt_num(optim.lr) << "\n";
    out << "steps = " << optim.steps << "\n";
    out << "batch_size = " << optim.batch_size << "\n";
    out << "seq_len = " << optim.seq_len << "\n";
    out << "log_every = " << optim.log_every << "\n";
    out << "\n[gpld]\n";
    out << "lambda0_post = " << fmt_num(gpld.lambda0_post) << "\n";
    out << "lambda0_prior = " << fmt_num(gpld.lambda0_prior) << "\n";
    out << "rho = " << fmt_num(gpld.rho) << "\n";
    out << "decay_scale = " << fmt_num(gpld.decay_scale) << "\n";
    out << "lambda_min = " << fmt_num(gpld.lambda_min) << "\n";
    out << "decay_enabled = " << (gpld.decay_enabled ? "true" : "false") << "\n";
    out << "probe_mode = "
        << (gpld.probe_mode == gpld::ProbeMode::kPerRow ? "per-row" : "full-table") << "\n";
  }
  switch (kind) {
    case ExperimentKind::kMdpFit:
      out << "\n[mdp]\n";
      out << "n_states = " << mdp.ring.n_states << "\n";
      out << "n_actions = " << mdp.ring.n_actions << "\n";
      out << "embed_dim = " << mdp.ring.embed_dim << "\n";
      out << "sigma = " << fmt_num(mdp.ring.sigma) << "\n";
      out << "drift_amp = " << fmt_num(mdp.ring.drift_amp) << "\n";
      out << "epsilon = " << fmt_num(mdp.ring.epsilon) << "\n";
      out << "generator = " << mdp.generator << "\n";
      out << "samples_per_sa = " << mdp.samples_per_sa << "\n";
      out << "alpha = " << fmt_num(mdp.alpha) << "\n";
      out << "lambda_grid = " << num_list(mdp.lambda_grid) << "\n";
      out << "gd_step = " << fmt_num(mdp.fit.step_size) << "\n";
      out << "gd_iters = " << mdp.fit.iterations << "\n";
      break;
    case ExperimentKind::kLimitChecks:
      out << "\n[limits]\n";
      out << "h_list = " << num_list(limits.h_list) << "\n";
      out << "n_matrices = " << limits.n_matrices << "\n";
      out << "sphere_samples = " << limits.sphere_samples << "\n";
      out << "sphere_samples_small = " << limits.sphere_samples_small << "\n";
      break;
    case ExperimentKind::kEstimatorBench:
      out << "\n[bench]\n";
      out << "instances = " << bench.instances << "\n";
      out << "probes = " << bench.probes << "\n";
      break;
    case ExperimentKind::kSensitivity:
      out << "\n[sensitivity]\n";
      out << "train_steps = " << sensitivity.train_steps << "\n";
      out << "magnitudes = " << num_list(sensitivity.magnitudes) << "\n";
      out << "n_probes = " << sensitivity.n_probes << "\n";
      out << "horizon = " << sensitivity.horizon << "\n";
      break;
    case ExperimentKind::kTiming:
      out << "\n[timing]\n";
      out << "n_steps = " << timing.n_steps << "\n";
      out << "warmup = " << timing.warmup << "\n";
      out << "rho_grid = " << num_list(timing.rho_grid) << "\n";
      break;
    case ExperimentKind::kAblationGrid: {
      out << "\n[grid]\n";
      out << "rho = " << num_list(grid.rho) << "\n";
      out << "lambda0_post = " << num_list(grid.lambda0_post) << "\n";
      out << "lambda0_prior = " << num_list(grid.lambda0_prior) << "\n";
      out << "decay = ";
      for (std::size_t i = 0; i < grid.decay.size(); ++i) out << (i ? "," : "") << grid.decay[i];
      out << "\n";
      break;
    }
    case ExperimentKind::kWorldModelTrain:
      break;
  }
  return out.str();
}

std::uint64_t text_hash(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

}  // namespace gpldlab::runner
