#pragma once

// Forward-KL-family training objectives on tabular softmax logits, with
// closed-form gradients and a central finite-difference checker.

#include <cstddef>
#include <functional>
#include <iosfwd>
#include <vector>

#include "align/occupancy.hpp"
#include "align/param_table.hpp"
#include "align/policy.hpp"
#include "align/prefix_tree.hpp"

namespace align::objectives {

/// One (state, action) step of a demonstration. k is the step index, K the
/// terminal index of its trajectory (K = |response| - 1).
struct DemoRecord {
  mdp::State state;
  mdp::TokenId action = 0;
  std::size_t k = 0;
  std::size_t K = 0;
  std::size_t trajectory = 0;
};

/// Demonstrations reorganized into per-step records. Each trajectory carries
/// a nonnegative weight (1 for sampled data; p(x) d(y|x) when the dataset is
/// an exact distribution), and losses are weighted means.
struct DemoDataset {
  std::vector<mdp::Trajectory> pairs;
  std::vector<double> weights;
  std::vector<DemoRecord> records;
  std::size_t capacity = 1;

  /// Validates every trajectory against vocab/capacity. Empty `weights` means all ones.
  static DemoDataset from_trajectories(const mdp::Vocab& vocab, std::vector<mdp::Trajectory> pairs,
                                       std::size_t capacity, std::vector<double> weights = {});
  /// Every trajectory of `dist` weighted by p(x) d(y|x).
  static DemoDataset from_distribution(const mdp::Vocab& vocab, const occupancy::TrajDist& dist,
                                       std::size_t capacity);

  double total_weight() const;
  /// Sum over trajectories of weight * (K + 1).
  double total_step_weight() const;
};

struct LossReport {
  double value = 0.0;
  ParamTable gradient;
  /// Number of parameters clamped into their admissible range while evaluating.
  std::size_t clamp_count = 0;
};

/// JSON object {"value", "gradient": [{"key", "index", "g"}...], "clamp_count"}
/// listing only nonzero gradient entries.
void write_json(std::ostream& out, const LossReport& report);

/// -(1/N_steps) sum log pi(a|s) over all records.
LossReport sft_loss(const policy::TabularPolicy& policy, const DemoDataset& data);

/// Position weight (K-k)/K; a single-token response (K = 0) gets weight 1.
double position_weight(std::size_t k, std::size_t K);

/// -(1/N_steps) sum ((K-k)/K) log pi(a_k|s_k).
LossReport weighted_fkl_loss(const policy::TabularPolicy& policy, const DemoDataset& data);

/// -(1/N_traj) sum_traj sum_t log pi(a_t|s_t).
LossReport traj_fkl_loss(const policy::TabularPolicy& policy, const DemoDataset& data);

/// KL(rho_exp || rho_pi) between normalized occupancies, evaluated exactly on
/// the tree. rho_exp keys must be edges of `tree`.
LossReport exact_fkl_occupancy_loss(const mdp::PrefixTree& tree, const policy::TabularPolicy& policy,
                                    const occupancy::OccupancyTable& rho_exp);

/// Central differences on every coordinate of `params`. h must lie in [1e-8, 1e-3].
ParamTable finite_diff_gradient(const std::function<double(const ParamTable&)>& loss, const ParamTable& params,
                                double h);

/// Policy overload: perturbs logits of a copy of `policy`.
ParamTable finite_diff_gradient(const std::function<double(const policy::TabularPolicy&)>& loss,
                                const policy::TabularPolicy& policy, double h);

}  // namespace align::objectives
