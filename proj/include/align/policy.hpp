#pragma once

// Tabular autoregressive softmax policies. A policy conditions on a context
// key derived from the state: the exact prefix (FULL) or the trailing n tokens
// of prompt||generated (order n). Logit rows exclude the mask token.

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "align/param_table.hpp"
#include "align/prefix_tree.hpp"
#include "align/token_mdp.hpp"

namespace align::policy {

class ContextOrder {
 public:
  static ContextOrder full() { return ContextOrder(); }
  static ContextOrder markov(std::size_t n) { return ContextOrder(n); }

  bool is_full() const { return !n_.has_value(); }
  std::size_t n() const { return n_.value(); }
  std::string to_string() const { return is_full() ? "full" : std::to_string(*n_); }
  /// Accepts "full" or a nonnegative integer.
  static ContextOrder parse(const std::string& text);

  bool operator==(const ContextOrder&) const = default;

 private:
  ContextOrder() = default;
  explicit ContextOrder(std::size_t n) : n_(n) {}
  std::optional<std::size_t> n_;
};

/// Context key for `state`. When the window covers the whole prefix
/// (FULL, or n >= |prompt| + |generated|) this is the state key, which starts
/// with '^' and keeps the prompt/response boundary. Otherwise it is '~'
/// followed by the last n tokens of prompt||generated.
std::string project_context(ContextOrder order, const mdp::State& state);

class TabularPolicy {
 public:
  TabularPolicy(mdp::Vocab vocab, ContextOrder order, std::size_t capacity);

  /// Zero logits (uniform) on every context reachable in `tree`.
  static TabularPolicy uniform(const mdp::PrefixTree& tree, ContextOrder order);

  const mdp::Vocab& vocab() const { return vocab_; }
  ContextOrder order() const { return order_; }
  std::size_t capacity() const { return capacity_; }
  std::size_t num_actions() const { return vocab_.num_actions(); }

  const ParamTable& logits() const { return logits_; }
  ParamTable& logits() { return logits_; }

  bool has_context(const std::string& key) const { return logits_.contains(key); }
  /// Throws KeyError when the context was never instantiated.
  const std::vector<double>& row(const std::string& key) const;
  /// Instantiates a zero row when missing.
  std::vector<double>& ensure_context(const std::string& key);
  /// Adds zero rows for every context reachable in `tree`.
  void ensure_contexts(const mdp::PrefixTree& tree);

  std::vector<double> probabilities(const std::string& context_key) const;
  std::string context_of(const mdp::State& state) const { return project_context(order_, state); }

  /// Adds independent N(0, scale^2) noise to every logit.
  void perturb(double scale, std::uint64_t seed);

  bool operator==(const TabularPolicy&) const = default;

 private:
  mdp::Vocab vocab_;
  ContextOrder order_;
  std::size_t capacity_;
  ParamTable logits_;
};

/// Numerically stable softmax.
std::vector<double> softmax(const std::vector<double>& logits);
double log_sum_exp(const std::vector<double>& values);

/// pi(.|s) over Vocab::actions(). Throws DomainError on terminal states and
/// KeyError for unknown contexts.
std::vector<double> action_distribution(const TabularPolicy& policy, const mdp::State& state);

/// sum_t log pi(y_t | x, y_<t).
double logprob_trajectory(const TabularPolicy& policy, const mdp::Trajectory& traj);

/// Ancestral sampling until termination; deterministic in `rng_seed`.
mdp::Trajectory sample_response(const TabularPolicy& policy, const mdp::TokenSeq& prompt,
                                std::uint64_t rng_seed);

/// Draws n (prompt, response) pairs from prompts x policy with one seeded stream.
std::vector<mdp::Trajectory> sample_dataset(const TabularPolicy& policy, const mdp::PromptDist& prompts,
                                            std::size_t n, std::uint64_t rng_seed);

struct ExpertSpec {
  mdp::TerminalReward hidden_reward;
  double temperature = 1.0;
};

/// FULL-context policy with d(y|x) proportional to exp(r(x,y)/tau). Each
/// logit is the log partition function of the subtree it leads to.
TabularPolicy boltzmann_expert(const ExpertSpec& spec, const mdp::PrefixTree& tree);
TabularPolicy boltzmann_expert(const ExpertSpec& spec, const mdp::Vocab& vocab,
                               const mdp::PromptDist& prompts, std::size_t capacity);

/// Text format: header lines (vocab hash, context order, capacity, action
/// count) followed by one "key<TAB>logits..." row per context, 17 significant digits.
void save_policy(std::ostream& out, const TabularPolicy& policy);
/// Throws DomainError on header mismatch against `vocab`.
TabularPolicy load_policy(std::istream& in, const mdp::Vocab& vocab);

}  // namespace align::policy
