#include "gpldlab/gpld.hpp"

#include <cmath>
#include <string>

namespace gpldlab::gpld {

std::vector<double> ProbTable::values() const {
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(K) * C);
  for (const ad::Tensor& r : rows)
    out.insert(out.end(), r.values().begin(), r.values().end());
  return out;
}

void ProbTable::validate(double tol) const {
  if (static_cast<int>(rows.size()) != K)
    throw ShapeError("ProbTable: expected " + std::to_string(K) + " rows, have " +
                     std::to_string(rows.size()));
  for (int i = 0; i < K; ++i) {
    const ad::Tensor& r = rows[static_cast<std::size_t>(i)];
    if (r.numel() != C)
      throw ShapeError("ProbTable: row " + std::to_string(i) + " has " +
                       std::to_string(r.numel()) + " entries, want " + std::to_string(C));
    double s = 0.0;
    for (double v : r.values()) {
      if (v < 0.0 || v > 1.0)
        throw DomainError("ProbTable: entry " + std::to_string(v) + " outside [0,1] in row " +
                          std::to_string(i));
      s += v;
    }
    if (std::fabs(s - 1.0) > tol)
      throw DomainError("ProbTable: row " + std::to_string(i) + " sums to " + std::to_string(s));
  }
}

void GpldConfig::validate() const {
  if (lambda0_post < 0.0 || lambda0_prior < 0.0)
    throw DomainError("GpldConfig: lambda0 must be >= 0");
  if (!(rho > 0.0 && rho <= 1.0)) throw DomainError("GpldConfig: rho must be in (0,1]");
  if (!(decay_scale > 0.0)) throw DomainError("GpldConfig: decay_scale must be positive");
  if (lambda_min < 0.0) throw DomainError("GpldConfig: lambda_min must be >= 0");
  if (decay_enabled && lambda0_post > 0.0 && lambda_min > lambda0_post)
    throw DomainError("GpldConfig: lambda_min exceeds lambda0_post");
}

double exact_frobenius_penalty(const TableFn& table_fn, const ad::Tensor& u) {
  if (!u.on_tape()) throw DomainError("exact_frobenius_penalty: u must be on a tape");
  ad::Tape& tape = *u.tape();
  const std::size_t entry_mark = tape.size();
  ProbTable table = table_fn(u);
  if (table.K <= 0 || table.C <= 0)
    throw DomainError("exact_frobenius_penalty: empty table");

  double acc = 0.0;
  for (int i = 0; i < table.K; ++i) {
    for (int c = 0; c < table.C; ++c) {
      const std::size_t mark = tape.size();
      std::vector<double> sel(static_cast<std::size_t>(table.C), 0.0);
      sel[static_cast<std::size_t>(c)] = 1.0;
      ad::Tensor entry = ad::dot(table.rows[static_cast<std::size_t>(i)],
                                 ad::Tensor(table.rows[static_cast<std::size_t>(i)].shape(), sel));
      if (!entry.on_tape()) continue;  // row constant in u: zero Jacobian row
      auto grad = tape.backward(entry, {&u, 1}, /*create_graph=*/false);
      for (double g : grad.grads[0].values()) {
        if (!std::isfinite(g))
          throw NumericError("exact_frobenius_penalty: non-finite Jacobian entry at row " +
                             std::to_string(i) + ", class " + std::to_string(c));
        acc += g * g;
      }
      tape.truncate(mark);
    }
  }
  tape.truncate(entry_mark);
  return acc / table.K;
}

namespace {

PenaltyReport penalty_from_probes(const ProbTable& table,
                                  const std::vector<std::vector<double>>& probes,
                                  ProbeMode mode) {
  const ad::Tensor& u = table.input;
  if (!u.on_tape()) throw DomainError("hutchinson_penalty: table input must be on a tape");
  ad::Tape& tape = *u.tape();

  PenaltyReport report;
  report.states_sampled = 1;

  if (mode == ProbeMode::kPerRow) {
    ad::Tensor acc = ad::Tensor::scalar(0.0);
    for (int i = 0; i < table.K; ++i) {
      const ad::Tensor& row = table.rows[static_cast<std::size_t>(i)];
      ad::Tensor probe(row.shape(), probes[static_cast<std::size_t>(i)]);
      ad::Tensor s = ad::dot(row, probe);
      if (!s.on_tape()) continue;  // row constant in u: zero contribution
      auto grad = tape.backward(s, {&u, 1}, /*create_graph=*/true);
      acc = ad::add(acc, ad::dot(grad.grads[0], grad.grads[0]));
    }
    report.value = ad::scale(acc, 1.0 / table.K);
    report.probes_used = table.K;
  } else {
    ad::Tensor s = ad::Tensor::scalar(0.0);
    bool on_tape = false;
    for (int i = 0; i < table.K; ++i) {
      const ad::Tensor& row = table.rows[static_cast<std::size_t>(i)];
      ad::Tensor probe(row.shape(), probes[static_cast<std::size_t>(i)]);
      ad::Tensor d = ad::dot(row, probe);
      on_tape = on_tape || d.on_tape();
      s = ad::add(s, d);
    }
    if (!on_tape) {
      report.value = ad::Tensor::scalar(0.0);
    } else {
      auto grad = tape.backward(s, {&u, 1}, /*create_graph=*/true);
      report.value = ad::scale(ad::dot(grad.grads[0], grad.grads[0]), 1.0 / table.K);
    }
    report.probes_used = 1;
  }
  return report;
}

}  // namespace

PenaltyReport hutchinson_penalty_with_probes(const ProbTable& table,
                                             const std::vector<std::vector<double>>& probes,
                                             ProbeMode mode) {
  if (static_cast<int>(probes.size()) != table.K)
    throw ShapeError("hutchinson_penalty_with_probes: need one probe row per table row");
  return penalty_from_probes(table, probes, mode);
}

PenaltyReport hutchinson_penalty(const TableFn& table_fn, const ad::Tensor& u,
                                 Rng& rng, ProbeMode mode) {
  ProbTable table = table_fn(u);
  std::vector<std::vector<double>> probes(static_cast<std::size_t>(table.K));
  for (int i = 0; i < table.K; ++i) {
    probes[static_cast<std::size_t>(i)].resize(static_cast<std::size_t>(table.C));
    for (int c = 0; c < table.C; ++c)
      probes[static_cast<std::size_t>(i)][static_cast<std::size_t>(c)] = rng.rademacher();
  }
  return penalty_from_probes(table, probes, mode);
}

std::vector<int> sample_batch_indices(int batch_size, double rho, Rng& rng) {
  if (batch_size < 1) throw DomainError("sample_batch_indices: batch_size must be >= 1");
  if (!(rho > 0.0 && rho <= 1.0)) throw DomainError("sample_batch_indices: rho must be in (0,1]");
  int n = static_cast<int>(std::floor(rho * batch_size));
  if (n < 1) n = 1;  // floor clamped so the penalty never vanishes silently
  return rng.sample_without_replacement(batch_size, n);
}

double decay_lambda(double lambda0, long t_updates, double c, double lambda_min,
                    bool decay_enabled) {
  if (!(c > 0.0)) throw DomainError("decay_lambda: c must be positive");
  if (t_updates < 0) throw DomainError("decay_lambda: T_updates must be >= 0");
  if (!decay_enabled) return lambda0;
  double s = 1.0 + static_cast<double>(t_updates) / c;
  return std::max(lambda0 / std::sqrt(s), lambda_min);
}

}  // namespace gpldlab::gpld
