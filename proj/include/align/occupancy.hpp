#pragma once

// Exact and empirical state-action occupancy measures, trajectory
// distributions, and the divergence calculator used as ground truth for every
// training method.

#include <cstddef>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "align/param_table.hpp"
#include "align/policy.hpp"
#include "align/prefix_tree.hpp"

namespace align::adversarial {
struct FDivSpec;
}

namespace align::occupancy {

/// Keyed probability (or mass) table. Keys are canonical token-id strings.
using DistTable = std::map<std::string, double>;

/// rho(s, a) keyed by occupancy_key. Mass is accumulated up to and including
/// the first terminal step only.
struct OccupancyTable {
  DistTable entries;
  double gamma = 1.0;

  double total() const;
  /// Sum of entries whose state has `level` generated tokens.
  double level_mass(std::size_t level) const;
};

/// Conditional response distribution d(y|x) keyed by trajectory_key, with the
/// prompt weights p(x) it was computed under.
struct TrajDist {
  DistTable entries;
  DistTable prompt_weights;             // prompt_key -> p(x)
  std::vector<mdp::Trajectory> support; // entries order

  /// p(x) d(y|x), keyed by trajectory_key.
  DistTable joint() const;
  /// d(y|x) for one trajectory (0 when absent).
  double prob(const mdp::Trajectory& traj) const;
};

/// Per-node action probabilities and reach probabilities of a policy on a
/// prefix tree. This is the shared engine behind exact occupancies, exact
/// expectations and their gradients.
class TreeEvaluation {
 public:
  TreeEvaluation(const mdp::PrefixTree& tree, const policy::TabularPolicy& policy, double gamma = 1.0);

  const mdp::PrefixTree& tree() const { return *tree_; }
  /// pi(a | node) for a non-terminal node, slot order.
  const double* probs(std::size_t node) const { return &probs_[node * tree_->num_actions()]; }
  const std::string& context(std::size_t node) const { return contexts_[node]; }
  /// Undiscounted probability of reaching the node (includes p(x)).
  double reach(std::size_t node) const { return reach_[node]; }
  /// Discounted occupancy mass of an edge: p(x) gamma^k prod_{t<=k} pi.
  double edge_mass(std::size_t edge) const { return edge_mass_[edge]; }
  const std::vector<double>& edge_masses() const { return edge_mass_; }
  /// Sum of all edge masses (expected length when gamma = 1).
  double total_mass() const { return total_mass_; }

  /// Gradient w.r.t. policy logits of sum_e w_e log rho_e with w held fixed.
  /// This is the single primitive every exact policy gradient reduces to:
  /// d(sum_e c_e rho_e) uses w_e = c_e rho_e; d(sum_e w_e log rho_e) uses w.
  ParamTable score_gradient(const std::vector<double>& edge_weights) const;

 private:
  const mdp::PrefixTree* tree_;
  const policy::TabularPolicy* policy_;
  std::vector<std::string> contexts_;
  std::vector<double> probs_;
  std::vector<double> reach_;
  std::vector<double> edge_mass_;
  double total_mass_ = 0.0;
};

OccupancyTable exact_occupancy(const mdp::PrefixTree& tree, const policy::TabularPolicy& policy,
                               double gamma = 1.0);
OccupancyTable exact_occupancy(const policy::TabularPolicy& policy, const mdp::PromptDist& prompts,
                               double gamma = 1.0);

TrajDist trajectory_distribution(const mdp::PrefixTree& tree, const policy::TabularPolicy& policy);
TrajDist trajectory_distribution(const policy::TabularPolicy& policy, const mdp::PromptDist& prompts);

/// Relative frequencies per prompt. Throws DomainError on an empty dataset.
TrajDist empirical_traj_dist(const std::vector<mdp::Trajectory>& dataset);

/// (prefix, next-token) counts, each weighted gamma^k / |D|.
OccupancyTable empirical_occupancy(const std::vector<mdp::Trajectory>& dataset, double gamma = 1.0);

/// Table rescaled to sum to one.
DistTable normalized(const DistTable& table);
DistTable normalized(const OccupancyTable& table);

enum class DivKind { FKL, RKL, JS, TV };

struct DivergenceOptions {
  /// Additive smoothing on the union support followed by renormalization.
  bool smoothing = false;
  double epsilon = 1e-12;
};

/// FKL(p,q) = sum p log(p/q); RKL(p,q) = FKL(q,p);
/// JS = (KL(p||m) + KL(q||m)) / 2 with m = (p+q)/2; TV = sum |p-q| / 2.
/// 0 log 0 := 0. log(x/0) for x > 0 throws DomainError unless smoothing is on.
double divergence(const DistTable& p, const DistTable& q, DivKind kind, const DivergenceOptions& opts = {});
/// Unsmoothed when the supports allow it, smoothed otherwise. Used for
/// reporting, where a policy may put exactly zero mass on an expert trajectory.
double divergence_for_report(const DistTable& p, const DistTable& q, DivKind kind);
/// D_f(p||q) = sum q f(p/q), with the limits f(0) and lim f(u)/u at the
/// support boundaries; an infinite limit on a mismatched support throws.
double f_divergence(const DistTable& p, const DistTable& q, const adversarial::FDivSpec& spec,
                    const DivergenceOptions& opts = {});

/// CSV with columns key,mass sorted by key, 17 significant digits.
void write_csv(std::ostream& out, const DistTable& table);

}  // namespace align::occupancy
