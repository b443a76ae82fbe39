#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "align/config.hpp"
#include "align/policy.hpp"

namespace align::experiment {

using config::ExperimentConfig;

struct RoundMetrics {
  std::size_t round = 0;
  double loss = 0.0;
  /// Trajectory-level divergences between d^pi and the expert's d^exp.
  double fkl = 0.0;
  double rkl = 0.0;
  double js = 0.0;
  std::vector<double> mode_mass;
  double expected_reward = 0.0;
  /// Adversarial kinds only: sup-norm gap of the discriminator to D*.
  double disc_gap = 0.0;
};

struct MetricsReport {
  std::string objective;
  std::string config_hash;
  std::uint64_t seed = 0;
  std::vector<std::string> modes;  // trajectory keys
  std::vector<RoundMetrics> rounds;
  RoundMetrics final;
  bool converged = false;
  std::size_t iterations = 0;
  double wall_clock_s = 0.0;
};

/// Pretty-printed JSON with keys in fixed order; "wall_clock_s" sits on a
/// line of its own.
void write_json(std::ostream& out, const MetricsReport& report);
std::string to_json(const MetricsReport& report);

struct ExperimentResult {
  MetricsReport report;
  policy::TabularPolicy policy;
};

/// Divergences are measured against the expert's exact distribution even when
/// training uses N sampled demonstrations.
ExperimentResult run_experiment_full(const ExperimentConfig& cfg);
MetricsReport run_experiment(const ExperimentConfig& cfg);

struct SweepRow {
  std::vector<std::pair<std::string, std::string>> axes;
  MetricsReport report;
};

/// Cartesian product over axes, rows in axis order (the last axis varies
/// fastest). "run.seed" may itself be an axis.
std::vector<SweepRow> sweep(const ExperimentConfig& base,
                            const std::vector<std::pair<std::string, std::vector<std::string>>>& axes);

/// Header: axis keys, objective, seed, config_hash, fkl, rkl, js,
/// expected_reward, mode_mass_<i>..., disc_gap, converged.
void write_sweep_csv(std::ostream& out, const std::vector<SweepRow>& rows);

}  // namespace align::experiment
