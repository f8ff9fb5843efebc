#include "gpldlab/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "gpldlab/error.hpp"

namespace gpldlab::runner {

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::vector<std::string> split_line(const std::string& line, char sep = ',') {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

std::pair<std::string, std::string> split_run_id(const std::string& run_id) {
  std::size_t slash = run_id.find('/');
  if (slash == std::string::npos) return {run_id, run_id};
  return {run_id.substr(0, slash), run_id.substr(slash + 1)};
}

}  // namespace

void write_metrics_csv(const std::string& path, const std::vector<MetricRecord>& records) {
  std::set<std::string> seen;
  for (const MetricRecord& r : records) {
    std::string key = r.run_id + "\x1f" + std::to_string(r.seed) + "\x1f" +
                      std::to_string(r.step) + "\x1f" + r.metric;
    if (!seen.insert(key).second)
      throw DomainError("metrics: duplicate record " + r.run_id + " seed " +
                        std::to_string(r.seed) + " step " + std::to_string(r.step) + " " +
                        r.metric);
  }
  std::ofstream out(path);
  if (!out) throw IoError("cannot open metrics file for writing: " + path);
  out << "run_id,seed,step,metric,value\n";
  for (const MetricRecord& r : records)
    out << r.run_id << "," << r.seed << "," << r.step << "," << r.metric << "," << fmt(r.value)
        << "\n";
  if (!out) throw IoError("failed writing metrics: " + path);
}

std::vector<MetricRecord> read_metrics_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open metrics file: " + path);
  std::string line;
  if (!std::getline(in, line) || split_line(line) != std::vector<std::string>{"run_id", "seed",
                                                                              "step", "metric",
                                                                              "value"})
    throw IoError("bad metrics header in " + path);
  std::vector<MetricRecord> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto f = split_line(line);
    if (f.size() != 5) throw IoError("bad metrics row in " + path + ": " + line);
    out.push_back({f[0], std::stoull(f[1]), std::stol(f[2]), f[3], std::stod(f[4])});
  }
  return out;
}

namespace {

struct Curve {
  std::vector<long> steps;
  std::vector<double> mean;
  std::vector<double> stddev;
  std::vector<long> n;
};

// mean +- std across seeds per step for one (run_id, metric)
Curve seed_curve(const std::map<long, std::vector<double>>& by_step) {
  Curve c;
  for (const auto& [step, vals] : by_step) {
    double m = 0.0;
    for (double v : vals) m += v;
    m /= static_cast<double>(vals.size());
    double var = 0.0;
    for (double v : vals) var += (v - m) * (v - m);
    double sd = vals.size() > 1 ? std::sqrt(var / static_cast<double>(vals.size() - 1)) : 0.0;
    c.steps.push_back(step);
    c.mean.push_back(m);
    c.stddev.push_back(sd);
    c.n.push_back(static_cast<long>(vals.size()));
  }
  return c;
}

std::vector<double> smooth(const std::vector<double>& v, int window) {
  if (window <= 1) return v;
  std::vector<double> out(v.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    acc += v[i];
    if (i >= static_cast<std::size_t>(window)) acc -= v[i - static_cast<std::size_t>(window)];
    out[i] = acc / static_cast<double>(std::min<std::size_t>(i + 1, static_cast<std::size_t>(window)));
  }
  return out;
}

}  // namespace

std::vector<AggregateRow> aggregate(const std::vector<MetricRecord>& records,
                                    const AggregateOptions& opt) {
  if (records.empty()) throw DomainError("aggregate: no records");
  // (run_id, metric) -> step -> seed values
  std::map<std::pair<std::string, std::string>, std::map<long, std::vector<double>>> grouped;
  for (const MetricRecord& r : records)
    grouped[{r.run_id, r.metric}][r.step].push_back(r.value);

  std::vector<AggregateRow> rows;
  if (opt.mode == AggregateMode::kRaw) {
    for (const auto& [key, by_step] : grouped) {
      Curve c = seed_curve(by_step);
      for (std::size_t i = 0; i < c.steps.size(); ++i)
        rows.push_back({key.first, key.second, c.steps[i], c.mean[i], c.stddev[i], c.n[i]});
    }
    return rows;
  }

  // normalized: smooth per-(task, variant, metric) mean curves, divide by the
  // final smoothed value of the task's baseline variant.
  struct Normed {
    std::vector<long> steps;
    std::vector<double> values;
  };
  // task -> metric -> variant -> curve
  std::map<std::string, std::map<std::string, std::map<std::string, Normed>>> normed;
  for (const auto& [key, by_step] : grouped) {
    auto [task, variant] = split_run_id(key.first);
    Curve c = seed_curve(by_step);
    Normed nm;
    nm.steps = c.steps;
    nm.values = smooth(c.mean, opt.smooth_window);
    normed[task][key.second][variant] = std::move(nm);
  }
  for (auto& [task, metrics] : normed)
    for (auto& [metric, variants] : metrics) {
      auto base = variants.find(opt.baseline_variant);
      if (base == variants.end())
        throw ConfigError("aggregate", "no baseline run '" + opt.baseline_variant +
                                           "' for task " + task + " metric " + metric);
      double divisor = base->second.values.back();
      if (divisor == 0.0)
        throw NumericError("aggregate: baseline final value is zero for task " + task);
      for (auto& [variant, curve] : variants)
        for (double& v : curve.values) v /= divisor;
    }

  // per-task normalized rows
  for (const auto& [task, metrics] : normed)
    for (const auto& [metric, variants] : metrics)
      for (const auto& [variant, curve] : variants)
        for (std::size_t i = 0; i < curve.steps.size(); ++i)
          rows.push_back({task + "/" + variant, metric, curve.steps[i], curve.values[i], 0.0, 1});

  // cross-task aggregate rows: mean +- std across tasks at shared steps
  std::map<std::pair<std::string, std::string>, std::map<long, std::vector<double>>> pool;
  for (const auto& [task, metrics] : normed)
    for (const auto& [metric, variants] : metrics)
      for (const auto& [variant, curve] : variants)
        for (std::size_t i = 0; i < curve.steps.size(); ++i)
          pool[{variant, metric}][curve.steps[i]].push_back(curve.values[i]);
  const long n_tasks = static_cast<long>(normed.size());
  for (const auto& [key, by_step] : pool)
    for (const auto& [step, vals] : by_step) {
      if (static_cast<long>(vals.size()) != n_tasks) continue;  // only shared steps
      double m = 0.0;
      for (double v : vals) m += v;
      m /= static_cast<double>(vals.size());
      double var = 0.0;
      for (double v : vals) var += (v - m) * (v - m);
      double sd = vals.size() > 1 ? std::sqrt(var / static_cast<double>(vals.size() - 1)) : 0.0;
      rows.push_back({"aggregate/" + key.first, key.second, step, m, sd,
                      static_cast<long>(vals.size())});
    }
  return rows;
}

void write_aggregate_csv(const std::string& path, const std::vector<AggregateRow>& rows) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open aggregate file for writing: " + path);
  out << "run_id,metric,step,mean,std,n\n";
  for (const AggregateRow& r : rows)
    out << r.run_id << "," << r.metric << "," << r.step << "," << fmt(r.mean) << ","
        << fmt(r.stddev) << "," << r.n << "\n";
  if (!out) throw IoError("failed writing aggregate: " + path);
}

std::vector<AggregateRow> read_aggregate_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open aggregate file: " + path);
  std::string line;
  if (!std::getline(in, line) ||
      split_line(line) != std::vector<std::string>{"run_id", "metric", "step", "mean", "std", "n"})
    throw IoError("bad aggregate header in " + path);
  std::vector<AggregateRow> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto f = split_line(line);
    if (f.size() != 6) throw IoError("bad aggregate row in " + path + ": " + line);
    out.push_back({f[0], f[1], std::stol(f[2]), std::stod(f[3]), std::stod(f[4]), std::stol(f[5])});
  }
  return out;
}

bool is_aggregate_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open csv: " + path);
  std::string line;
  std::getline(in, line);
  return split_line(line) ==
         std::vector<std::string>{"run_id", "metric", "step", "mean", "std", "n"};
}

}  // namespace gpldlab::runner
