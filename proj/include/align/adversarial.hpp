#pragma once

// Tabular discriminators and critics, the adversarial policy objectives built
// on them, and alternating minimax training. All expectations under the
// policy are exact sums over the prefix tree.
//
// Both players see *normalized* tables: at state-action granularity the
// occupancy rho(s,a) divided by its total mass, at trajectory granularity the
// joint p(x) d(y|x).

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "align/fdiv.hpp"
#include "align/objectives.hpp"
#include "align/occupancy.hpp"
#include "align/policy.hpp"
#include "align/prefix_tree.hpp"

namespace align::adversarial {

using occupancy::DistTable;
using objectives::LossReport;

enum class Granularity { StateAction, Trajectory };

std::string to_string(Granularity g);
Granularity parse_granularity(const std::string& text);

inline constexpr double kLogitClamp = 30.0;

struct Discriminator {
  Granularity granularity = Granularity::StateAction;
  DistTable logits;

  /// sigmoid(clamped logit); throws KeyError for unknown keys.
  double output(const std::string& key) const;
};

struct Critic {
  Granularity granularity = Granularity::StateAction;
  DistTable values;
};

double sigmoid(double x);
/// log(1 + e^x) without overflow.
double softplus(double x);

/// Normalized table of `policy` on `tree` at the requested granularity;
/// covers every reachable key.
DistTable policy_table(const mdp::PrefixTree& tree, const policy::TabularPolicy& policy, Granularity g);

/// Zero-logit discriminator / zero critic on every reachable key of the tree.
Discriminator uniform_discriminator(const mdp::PrefixTree& tree, Granularity g);
Critic constant_critic(const mdp::PrefixTree& tree, Granularity g, double value);

/// D* = p_exp / (p_exp + p_pi) on the key union, stored as a logit clamped to
/// +-30. Keys with both masses zero are omitted.
Discriminator optimal_discriminator(const DistTable& p_exp, const DistTable& p_pi, Granularity g);
Discriminator optimal_discriminator(const occupancy::OccupancyTable& rho_exp,
                                    const occupancy::OccupancyTable& rho_pi);

/// -(E_exp[log D] + E_pi[log(1 - D)]). Every key carrying mass must have a
/// logit (DomainError otherwise). Gradient rows have width 1.
LossReport discriminator_loss(const Discriminator& disc, const DistTable& p_exp, const DistTable& p_pi);

/// E_pi[log(1 - D) - log D] = -E_pi[logit], with its exact policy gradient at
/// fixed D. Equals KL(pi || exp) when D = D*.
LossReport policy_rkl_loss(const mdp::PrefixTree& tree, const policy::TabularPolicy& policy,
                           const Discriminator& disc);

/// E_pi[log(1 - D)]: the policy's half of the JS saddle objective.
LossReport policy_js_loss(const mdp::PrefixTree& tree, const policy::TabularPolicy& policy,
                          const Discriminator& disc);

/// E_exp[log D] + E_pi[log(1 - D)]. Maximized over D this is 2 JS - ln 4.
double js_minimax_value(const Discriminator& disc, const DistTable& p_exp, const DistTable& p_pi);
double js_minimax_value(const mdp::PrefixTree& tree, const policy::TabularPolicy& policy,
                        const Discriminator& disc, const DistTable& p_exp);

/// -(E_exp[T] - E_pi[f*(T)]). Values outside dom(f*) are clamped into it and
/// counted; the gradient is taken at the clamped value.
LossReport fgan_critic_loss(const Critic& critic, const DistTable& p_exp, const DistTable& p_pi,
                            const FDivSpec& spec);

/// Maximizes E_exp[T] - E_pi[f*(T)] key by key (Brent's method on the
/// conjugate domain, bracket limited to |T| <= 1e6). Requires p_pi > 0 wherever
/// p_exp > 0; DomainError otherwise.
Critic maximize_critic(const DistTable& p_exp, const DistTable& p_pi, const FDivSpec& spec, Granularity g);

/// -E_{tau~pi} sum_t f*(T(s_t, a_t)) (raw occupancy mass), or with
/// `normalized` the same expectation under the normalized table. Trajectory
/// granularity scores each complete response once.
LossReport fgan_policy_loss(const mdp::PrefixTree& tree, const policy::TabularPolicy& policy, const Critic& critic,
                            const FDivSpec& spec, bool normalized = false);

/// Monte Carlo counterpart of a fixed-D policy loss for scale studies: draws
/// trajectories, scores each visited key with `cost`, and returns the
/// REINFORCE estimate of value and gradient (mean-reward baseline).
LossReport sampled_policy_loss(const policy::TabularPolicy& policy, const mdp::PromptDist& prompts,
                               Granularity g, const std::function<double(const std::string&)>& cost,
                               std::size_t n_samples, std::uint64_t seed);

enum class AdvObjective { RKL, JS, FGAN };

std::string to_string(AdvObjective objective);

struct Schedule {
  std::size_t disc_steps = 50;
  /// 0 freezes the policy (discriminator-only training).
  std::size_t policy_steps = 1;
  std::size_t rounds = 100;
  double disc_step_size = 1.0;
  double policy_step_size = 0.1;

  bool operator==(const Schedule&) const = default;
};

struct AdversarialSetup {
  AdvObjective objective = AdvObjective::RKL;
  Granularity granularity = Granularity::StateAction;
  FDivSpec fdiv = make_fdiv(FDivFamily::FAIRL);
};

/// What the policy is trained to match: normalized state-action and joint
/// trajectory tables.
struct Target {
  DistTable state_action;
  DistTable trajectory;

  static Target from_policy(const mdp::PrefixTree& tree, const policy::TabularPolicy& expert);
  static Target from_dataset(const std::vector<mdp::Trajectory>& dataset);

  const DistTable& at(Granularity g) const { return g == Granularity::StateAction ? state_action : trajectory; }
};

struct HistoryRow {
  std::size_t round = 0;
  double policy_loss = 0.0;
  double disc_loss = 0.0;
  /// Trajectory-level divergences between the policy and the target.
  double fkl = 0.0;
  double rkl = 0.0;
  double js = 0.0;
  /// sup_k |D(k) - D*(k)| (0 for critics).
  double disc_gap = 0.0;
};

struct AdversarialState {
  Discriminator disc;
  Critic critic;
};

using RoundObserver = std::function<void(const HistoryRow&, const policy::TabularPolicy&)>;

/// Alternates `disc_steps` gradient steps on the discriminator (critic for
/// FGAN) with `policy_steps` gradient steps on the policy, for `rounds`
/// rounds. The FGAN policy step uses the normalized loss. Throws NumericAbort
/// with the round index if any recorded value is non-finite.
std::vector<HistoryRow> alternating_train(const mdp::PrefixTree& tree, policy::TabularPolicy& policy,
                                          AdversarialState& state, const Target& target,
                                          const AdversarialSetup& setup, const Schedule& schedule,
                                          const RoundObserver& observer = {});

/// Initial discriminator/critic for a setup: zero logits, critic at the
/// conjugate-domain point f'(1).
AdversarialState initial_state(const mdp::PrefixTree& tree, const AdversarialSetup& setup);

void write_history_csv(std::ostream& out, const std::vector<HistoryRow>& history);

/// "granularity <g>" header then "key<TAB>logit" rows, 17 significant digits.
void save_discriminator(std::ostream& out, const Discriminator& disc);
Discriminator load_discriminator(std::istream& in);

}  // namespace align::adversarial
