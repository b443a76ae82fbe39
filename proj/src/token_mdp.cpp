#include "align/token_mdp.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "align/errors.hpp"
#include "align/param_table.hpp"

namespace align::mdp {

Vocab::Vocab(std::vector<std::string> tokens, TokenId eos_id, TokenId mask_id)
    : tokens_(std::move(tokens)), eos_id_(eos_id), mask_id_(mask_id) {
  if (!is_valid(eos_id_) || !is_valid(mask_id_)) throw DomainError("vocab: special id out of range");
  if (eos_id_ == mask_id_) throw DomainError("vocab: eos_id must differ from mask_id");
  std::set<std::string> seen;
  for (const auto& t : tokens_) {
    if (!seen.insert(t).second) throw DomainError("vocab: duplicate token symbol '" + t + "'");
  }
  action_slot_.assign(tokens_.size(), -1);
  for (TokenId id = 0; id < static_cast<TokenId>(tokens_.size()); ++id) {
    if (id == mask_id_) continue;
    action_slot_[static_cast<std::size_t>(id)] = static_cast<int>(actions_.size());
    actions_.push_back(id);
  }
}

Vocab Vocab::from_symbols(std::vector<std::string> tokens, const std::string& eos,
                          const std::string& mask) {
  auto find = [&](const std::string& s) {
    auto it = std::find(tokens.begin(), tokens.end(), s);
    if (it == tokens.end()) throw DomainError("vocab: special token '" + s + "' not in token list");
    return static_cast<TokenId>(it - tokens.begin());
  };
  const TokenId e = find(eos);
  const TokenId m = find(mask);
  return Vocab(std::move(tokens), e, m);
}

const std::string& Vocab::symbol(TokenId id) const {
  if (!is_valid(id)) throw DomainError("vocab: invalid token id " + std::to_string(id));
  return tokens_[static_cast<std::size_t>(id)];
}

TokenId Vocab::id_of(const std::string& symbol) const {
  auto it = std::find(tokens_.begin(), tokens_.end(), symbol);
  if (it == tokens_.end()) throw DomainError("vocab: unknown token symbol '" + symbol + "'");
  return static_cast<TokenId>(it - tokens_.begin());
}

std::size_t Vocab::action_index(TokenId id) const {
  if (!is_valid(id)) throw DomainError("invalid token id " + std::to_string(id));
  const int slot = action_slot_[static_cast<std::size_t>(id)];
  if (slot < 0) throw DomainError("mask token is not a legal action");
  return static_cast<std::size_t>(slot);
}

std::string Vocab::hash() const {
  std::ostringstream os;
  for (const auto& t : tokens_) os << t.size() << ':' << t << ';';
  os << "eos=" << eos_id_ << ";mask=" << mask_id_;
  return hex64(fnv1a64(os.str()));
}

PromptDist PromptDist::single(TokenSeq prompt) { return PromptDist{{std::move(prompt)}, {1.0}}; }

void PromptDist::validate(const Vocab& vocab) const {
  if (prompts.empty() || prompts.size() != probs.size())
    throw DomainError("prompt distribution: prompts and probs must be non-empty and aligned");
  double total = 0.0;
  for (double p : probs) {
    if (!(p >= 0.0)) throw DomainError("prompt distribution: negative probability");
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-12) throw DomainError("prompt distribution: probs must sum to 1");
  std::set<TokenSeq> seen;
  for (const auto& x : prompts) {
    for (TokenId t : x) {
      if (!vocab.is_valid(t)) throw DomainError("prompt: invalid token id");
      if (t == vocab.mask_id()) throw DomainError("prompt: mask token in prompt");
      if (t == vocab.eos_id()) throw DomainError("prompt: EOS in prompt");
    }
    if (!seen.insert(x).second) throw DomainError("prompt distribution: duplicate prompt");
  }
}

std::string join_ids(std::span<const TokenId> ids) {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i) out += '.';
    out += std::to_string(ids[i]);
  }
  return out;
}

TokenSeq parse_ids(const std::string& text) {
  TokenSeq out;
  if (text.empty()) return out;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t dot = text.find('.', pos);
    const std::string part = text.substr(pos, dot == std::string::npos ? std::string::npos : dot - pos);
    try {
      std::size_t used = 0;
      out.push_back(std::stoi(part, &used));
      if (used != part.size()) throw DomainError("bad id");
    } catch (const std::exception&) {
      throw DomainError("malformed token-id list '" + text + "'");
    }
    if (dot == std::string::npos) break;
    pos = dot + 1;
  }
  return out;
}

std::string prompt_key(std::span<const TokenId> prompt) { return join_ids(prompt); }

std::string trajectory_key(std::span<const TokenId> prompt, std::span<const TokenId> response) {
  return join_ids(prompt) + '|' + join_ids(response);
}

std::string trajectory_key(const Trajectory& traj) { return trajectory_key(traj.prompt, traj.response); }

std::string state_key(std::span<const TokenId> prompt, std::span<const TokenId> generated) {
  return '^' + join_ids(prompt) + '|' + join_ids(generated);
}

std::string state_key(const State& state) { return state_key(state.prompt, state.generated); }

std::string occupancy_key(const std::string& skey, TokenId action) {
  return skey + '>' + std::to_string(action);
}

std::size_t key_level(const std::string& key) {
  const auto bar = key.find('|');
  if (bar == std::string::npos) throw DomainError("key without prompt separator: " + key);
  const auto end = key.find('>', bar);
  const std::string gen = key.substr(bar + 1, end == std::string::npos ? std::string::npos : end - bar - 1);
  if (gen.empty()) return 0;
  return static_cast<std::size_t>(std::count(gen.begin(), gen.end(), '.')) + 1;
}

Trajectory parse_trajectory_key(const std::string& key) {
  const auto bar = key.find('|');
  if (bar == std::string::npos) throw DomainError("malformed trajectory key '" + key + "'");
  return Trajectory{parse_ids(key.substr(0, bar)), parse_ids(key.substr(bar + 1))};
}

void validate_state(const Vocab& vocab, const State& state) {
  auto check = [&](const TokenSeq& seq, const char* what) {
    for (TokenId t : seq) {
      if (!vocab.is_valid(t)) throw DomainError(std::string(what) + ": invalid token id");
      if (t == vocab.mask_id()) throw DomainError(std::string(what) + ": mask token present");
    }
  };
  check(state.prompt, "prompt");
  check(state.generated, "generated");
  if (std::find(state.prompt.begin(), state.prompt.end(), vocab.eos_id()) != state.prompt.end())
    throw DomainError("prompt: EOS in prompt");
  if (state.generated.size() > state.capacity) throw DomainError("state: generated length exceeds capacity");
  auto eos = std::find(state.generated.begin(), state.generated.end(), vocab.eos_id());
  if (eos != state.generated.end() && eos + 1 != state.generated.end())
    throw DomainError("state: tokens after EOS");
}

bool is_terminal(const Vocab& vocab, const State& state) {
  if (state.generated.size() >= state.capacity) return true;
  return std::find(state.generated.begin(), state.generated.end(), vocab.eos_id()) != state.generated.end();
}

State concat_transition(const Vocab& vocab, const State& state, TokenId action) {
  if (!vocab.is_valid(action)) throw DomainError("concat_transition: invalid token id " + std::to_string(action));
  if (action == vocab.mask_id()) throw DomainError("concat_transition: mask is not an action");
  if (is_terminal(vocab, state)) return state;
  State next = state;
  next.generated.push_back(action);
  return next;
}

double count_trajectories(const Vocab& vocab, std::size_t capacity) {
  const double branching = static_cast<double>(vocab.num_actions()) - 1.0;
  double total = 0.0;
  for (std::size_t k = 1; k <= capacity; ++k) total += std::pow(branching, static_cast<double>(k - 1));
  return total + std::pow(branching, static_cast<double>(capacity));
}

namespace {

void enumerate_from(const Vocab& vocab, State& state, std::vector<Trajectory>& out) {
  if (is_terminal(vocab, state)) {
    out.push_back(Trajectory{state.prompt, state.generated});
    return;
  }
  for (TokenId a : vocab.actions()) {
    state.generated.push_back(a);
    enumerate_from(vocab, state, out);
    state.generated.pop_back();
  }
}

}  // namespace

std::vector<Trajectory> enumerate_trajectories(const Vocab& vocab, const TokenSeq& prompt,
                                               std::size_t capacity, std::size_t budget) {
  if (capacity < 1) throw DomainError("enumerate_trajectories: capacity must be >= 1");
  if (vocab.num_actions() == 0) throw DomainError("enumerate_trajectories: empty action set");
  const double count = count_trajectories(vocab, capacity);
  if (count > static_cast<double>(budget))
    throw BudgetError("enumeration of " + format_real(count) + " trajectories exceeds budget " +
                      std::to_string(budget));
  State root{prompt, {}, capacity};
  validate_state(vocab, root);
  std::vector<Trajectory> out;
  out.reserve(static_cast<std::size_t>(count));
  enumerate_from(vocab, root, out);
  return out;
}

void validate_trajectory(const Vocab& vocab, const Trajectory& traj, std::size_t capacity) {
  if (traj.response.empty() || traj.response.size() > capacity)
    throw DomainError("trajectory: response length must be in [1, capacity]");
  State s{traj.prompt, traj.response, capacity};
  validate_state(vocab, s);
  if (!is_terminal(vocab, s)) throw DomainError("trajectory: response is not complete");
}

double terminal_reward(const TerminalReward& reward, const Trajectory& traj) {
  const auto key = trajectory_key(traj);
  auto it = reward.table.find(key);
  if (it == reward.table.end()) throw KeyError("terminal_reward: no entry for trajectory " + key);
  return it->second;
}

TerminalReward indicator_reward(const Vocab& vocab, const PromptDist& prompts, std::size_t capacity,
                                const Trajectory& target) {
  TerminalReward r;
  for (const auto& x : prompts.prompts)
    for (const auto& t : enumerate_trajectories(vocab, x, capacity)) r.table[trajectory_key(t)] = 0.0;
  const auto key = trajectory_key(target);
  if (!r.table.contains(key)) throw DomainError("indicator_reward: target is not reachable");
  r.table[key] = 1.0;
  return r;
}

}  // namespace align::mdp
