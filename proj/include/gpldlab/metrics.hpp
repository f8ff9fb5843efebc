#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace gpldlab::runner {

// One scalar sample. run_id is "<task>/<variant>"; the slash split is what
// aggregation groups by.
struct MetricRecord {
  std::string run_id;
  std::uint64_t seed = 0;
  long step = 0;
  std::string metric;
  double value = 0.0;
};

// Header is exactly "run_id,seed,step,metric,value".
void write_metrics_csv(const std::string& path, const std::vector<MetricRecord>& records);
std::vector<MetricRecord> read_metrics_csv(const std::string& path);

// Aggregated curve sample: mean +- std across seeds (raw mode) or across
// tasks (normalized aggregate rows, run_id "aggregate/<variant>").
struct AggregateRow {
  std::string run_id;
  std::string metric;
  long step = 0;
  double mean = 0.0;
  double stddev = 0.0;
  long n = 0;
};

enum class AggregateMode { kRaw, kNormalized };

struct AggregateOptions {
  AggregateMode mode = AggregateMode::kRaw;
  // Variant name of the designated baseline run per task (normalized mode).
  std::string baseline_variant = "baseline";
  // Trailing moving-average window applied before normalization.
  int smooth_window = 1;
};

// Raw mode: mean +- std across seeds per (run_id, metric, step).
// Normalized mode: each task's smoothed per-variant curve is divided by the
// final smoothed value of that task's baseline variant, then averaged across
// tasks into "aggregate/<variant>" rows (per-task normalized rows are kept).
std::vector<AggregateRow> aggregate(const std::vector<MetricRecord>& records,
                                    const AggregateOptions& opt);

void write_aggregate_csv(const std::string& path, const std::vector<AggregateRow>& rows);
std::vector<AggregateRow> read_aggregate_csv(const std::string& path);

// True when the file's header is the aggregate schema rather than metrics.
bool is_aggregate_csv(const std::string& path);

}  // namespace gpldlab::runner
