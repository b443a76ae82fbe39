#pragma once

// Deterministic token-generation MDP: states are (prompt, generated prefix)
// pairs, actions are vocabulary tokens other than the padding marker, the
// transition appends the action, and any state containing EOS is absorbing.

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace align::mdp {

using TokenId = int;
using TokenSeq = std::vector<TokenId>;

/// Default cap on the number of enumerated trajectories.
inline constexpr std::size_t kDefaultEnumerationBudget = 200000;

class Vocab {
 public:
  Vocab() = default;
  /// Throws DomainError on duplicate symbols, out-of-range or equal special ids.
  Vocab(std::vector<std::string> tokens, TokenId eos_id, TokenId mask_id);

  /// Convenience: special tokens are located by symbol.
  static Vocab from_symbols(std::vector<std::string> tokens, const std::string& eos,
                            const std::string& mask);

  std::size_t size() const { return tokens_.size(); }
  TokenId eos_id() const { return eos_id_; }
  TokenId mask_id() const { return mask_id_; }
  const std::vector<std::string>& tokens() const { return tokens_; }
  const std::string& symbol(TokenId id) const;
  TokenId id_of(const std::string& symbol) const;

  bool is_valid(TokenId id) const { return id >= 0 && static_cast<std::size_t>(id) < tokens_.size(); }

  /// Legal actions in ascending token-id order (mask excluded). Logit vectors
  /// are indexed by position in this list.
  const std::vector<TokenId>& actions() const { return actions_; }
  std::size_t num_actions() const { return actions_.size(); }
  /// Position of `id` in actions(); throws DomainError for the mask or invalid ids.
  std::size_t action_index(TokenId id) const;
  TokenId action_token(std::size_t index) const { return actions_.at(index); }

  /// Fingerprint over symbols and special ids.
  std::string hash() const;

  bool operator==(const Vocab& other) const = default;

 private:
  std::vector<std::string> tokens_;
  TokenId eos_id_ = 0;
  TokenId mask_id_ = 1;
  std::vector<TokenId> actions_;
  std::vector<int> action_slot_;
};

struct State {
  TokenSeq prompt;
  TokenSeq generated;
  std::size_t capacity = 1;

  bool operator==(const State&) const = default;
};

struct Trajectory {
  TokenSeq prompt;
  TokenSeq response;

  bool operator==(const Trajectory&) const = default;
  auto operator<=>(const Trajectory&) const = default;
};

struct PromptDist {
  std::vector<TokenSeq> prompts;
  std::vector<double> probs;

  /// Single prompt with probability one.
  static PromptDist single(TokenSeq prompt);
  /// Throws DomainError unless probs are nonnegative, sum to 1 +- 1e-12 and
  /// every prompt is mask-free and EOS-free.
  void validate(const Vocab& vocab) const;
};

/// Terminal-only reward r(x, y), keyed by trajectory_key.
struct TerminalReward {
  std::map<std::string, double> table;
};

// Canonical keys. Token ids are joined with '.', prompt and response parts are
// separated by '|'. Full state keys carry a leading '^'.
std::string join_ids(std::span<const TokenId> ids);
TokenSeq parse_ids(const std::string& text);
std::string trajectory_key(const Trajectory& traj);
std::string trajectory_key(std::span<const TokenId> prompt, std::span<const TokenId> response);
std::string prompt_key(std::span<const TokenId> prompt);
std::string state_key(const State& state);
std::string state_key(std::span<const TokenId> prompt, std::span<const TokenId> generated);
std::string occupancy_key(const std::string& state_key, TokenId action);
/// Number of generated tokens in the state part of an occupancy or state key.
std::size_t key_level(const std::string& key);
Trajectory parse_trajectory_key(const std::string& key);

/// Throws DomainError if the state contains the mask, tokens after EOS, or
/// exceeds capacity.
void validate_state(const Vocab& vocab, const State& state);

/// True iff the generated part contains EOS or has reached capacity.
bool is_terminal(const Vocab& vocab, const State& state);

/// Appends `action` unless the state is terminal (absorbing).
State concat_transition(const Vocab& vocab, const State& state, TokenId action);

/// Number of trajectories reachable from one prompt: sum_{k=1..C} (A-1)^(k-1)
/// EOS-terminated plus (A-1)^C truncated, A = number of legal actions.
double count_trajectories(const Vocab& vocab, std::size_t capacity);

/// Every complete response from `prompt`, depth-first in ascending token-id order.
std::vector<Trajectory> enumerate_trajectories(const Vocab& vocab, const TokenSeq& prompt,
                                               std::size_t capacity,
                                               std::size_t budget = kDefaultEnumerationBudget);

/// Throws DomainError unless EOS appears only at the end and 1 <= |y| <= capacity.
void validate_trajectory(const Vocab& vocab, const Trajectory& traj, std::size_t capacity);

double terminal_reward(const TerminalReward& reward, const Trajectory& traj);

/// Indicator reward: 1 on `target`, 0 on every other trajectory reachable
/// from the prompts of `prompts` under `capacity`.
TerminalReward indicator_reward(const Vocab& vocab, const PromptDist& prompts,
                                std::size_t capacity, const Trajectory& target);

}  // namespace align::mdp
