#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "gpldlab/envs.hpp"
#include "gpldlab/gpld.hpp"
#include "gpldlab/mdp.hpp"
#include "gpldlab/rssm.hpp"

namespace gpldlab::runner {

// Plain-text sectioned key-value file: `[section]` headers, `key = value`
// lines, `#` comments. Parsing is strict; validation rejects unknown
// sections and keys with their path.
class KvConfig {
 public:
  static KvConfig parse_file(const std::string& path);
  static KvConfig parse_string(const std::string& text, const std::string& origin = "<string>");

  bool has(const std::string& section, const std::string& key) const;
  std::string get_str(const std::string& section, const std::string& key,
                      const std::string& fallback) const;
  std::string require_str(const std::string& section, const std::string& key) const;
  double get_num(const std::string& section, const std::string& key, double fallback) const;
  long get_int(const std::string& section, const std::string& key, long fallback) const;
  bool get_bool(const std::string& section, const std::string& key, bool fallback) const;
  std::vector<double> get_num_list(const std::string& section, const std::string& key,
                                   const std::vector<double>& fallback) const;
  std::vector<std::string> get_str_list(const std::string& section, const std::string& key,
                                        const std::vector<std::string>& fallback) const;

  // Throws ConfigError naming "[section] key" for anything not in `allowed`.
  void check_schema(const std::map<std::string, std::set<std::string>>& allowed) const;

  const std::map<std::string, std::map<std::string, std::string>>& sections() const {
    return sections_;
  }

 private:
  std::map<std::string, std::map<std::string, std::string>> sections_;
  std::string origin_;
};

enum class ExperimentKind {
  kMdpFit,
  kLimitChecks,
  kEstimatorBench,
  kWorldModelTrain,
  kSensitivity,
  kTiming,
  kAblationGrid,
};

const char* kind_name(ExperimentKind k);
ExperimentKind kind_from_name(const std::string& name);

struct OptimConfig {
  double lr = 3e-4;
  long steps = 2000;
  int batch_size = 16;
  int seq_len = 32;
  long log_every = 20;
};

struct MdpConfig {
  mdp::RingOptions ring;
  std::string generator = "ring";  // or "teleport"
  int samples_per_sa = 5;
  double alpha = 0.0;
  std::vector<double> lambda_grid = {0.0, 0.1, 1.0};
  mdp::FitOptions fit;
};

struct LimitsConfig {
  std::vector<double> h_list = {1e-1, 1e-2, 1e-3, 1e-4};
  int n_matrices = 10;
  long sphere_samples = 100000;
  long sphere_samples_small = 1000;
};

struct BenchConfig {
  int instances = 50;
  long probes = 10000;
};

struct SensitivityConfig {
  long train_steps = 2000;
  std::vector<double> magnitudes = {0.001, 0.003, 0.01, 0.03, 0.1};
  int n_probes = 16;
  int horizon = 10;
};

struct TimingConfig {
  int n_steps = 60;
  int warmup = 10;
  std::vector<double> rho_grid = {0.25, 0.5, 0.75, 1.0};
};

struct GridConfig {
  std::vector<double> rho = {0.25, 0.5, 0.75, 1.0};
  std::vector<double> lambda0_post = {0.5};
  std::vector<double> lambda0_prior = {0.0};
  std::vector<std::string> decay = {"on"};
};

// Fully resolved experiment description. `resolved_text()` emits a canonical
// config that reproduces this experiment exactly when re-run.
struct ExperimentConfig {
  ExperimentKind kind = ExperimentKind::kWorldModelTrain;
  std::string name;
  std::vector<std::uint64_t> seeds = {0};
  std::string out_dir;

  envs::EnvKind env = envs::EnvKind::kPendulum;
  envs::CollectOptions collect;
  rssm::RssmConfig model;
  OptimConfig optim;
  gpld::GpldConfig gpld;
  MdpConfig mdp;
  LimitsConfig limits;
  BenchConfig bench;
  SensitivityConfig sensitivity;
  TimingConfig timing;
  GridConfig grid;

  static ExperimentConfig from_kv(const KvConfig& kv);
  static ExperimentConfig load(const std::string& path);
  std::string resolved_text() const;
};

std::uint64_t text_hash(const std::string& text);

}  // namespace gpldlab::runner
