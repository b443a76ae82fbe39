#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "align/token_mdp.hpp"

namespace align::mdp {

/// Reachable state tree for (vocab, prompt distribution, capacity). Every
/// non-terminal node owns one child edge per legal action; terminal nodes are
/// leaves and correspond one-to-one with complete trajectories. Nodes and
/// edges are laid out depth-first in ascending token-id order, so a child edge
/// always has a larger index than its parent edge.
class PrefixTree {
 public:
  static constexpr std::size_t kNone = static_cast<std::size_t>(-1);

  struct Node {
    std::size_t prompt_index = 0;
    TokenSeq generated;
    std::string key;                    // state_key
    bool terminal = false;
    std::size_t parent_edge = kNone;    // kNone for roots
    std::size_t first_edge = kNone;     // children at [first_edge, first_edge + A)
  };

  struct Edge {
    std::size_t parent = 0;             // node index
    std::size_t action = 0;             // slot in Vocab::actions()
    std::size_t child = 0;              // node index
    std::size_t level = 0;              // generated length of the parent state
    std::string key;                    // occupancy_key
    std::string traj_key;               // non-empty iff the child is terminal
  };

  PrefixTree(Vocab vocab, PromptDist prompts, std::size_t capacity,
             std::size_t budget = kDefaultEnumerationBudget);

  const Vocab& vocab() const { return vocab_; }
  const PromptDist& prompts() const { return prompts_; }
  std::size_t capacity() const { return capacity_; }
  std::size_t num_actions() const { return vocab_.num_actions(); }

  const std::vector<Node>& nodes() const { return nodes_; }
  const std::vector<Edge>& edges() const { return edges_; }
  const std::vector<std::size_t>& roots() const { return roots_; }
  /// Edge indices whose child is terminal, in enumeration order.
  const std::vector<std::size_t>& terminal_edges() const { return terminal_edges_; }

  State state_of(std::size_t node) const;
  Trajectory trajectory_of(std::size_t terminal_edge) const;

  std::optional<std::size_t> find_edge(const std::string& occupancy_key) const;
  std::optional<std::size_t> find_terminal(const std::string& trajectory_key) const;

 private:
  void expand(std::size_t node);

  Vocab vocab_;
  PromptDist prompts_;
  std::size_t capacity_;
  std::vector<Node> nodes_;
  std::vector<Edge> edges_;
  std::vector<std::size_t> roots_;
  std::vector<std::size_t> terminal_edges_;
  std::unordered_map<std::string, std::size_t> edge_by_key_;
  std::unordered_map<std::string, std::size_t> terminal_by_key_;
};

}  // namespace align::mdp
