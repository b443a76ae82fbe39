#include "align/prefix_tree.hpp"

#include "align/errors.hpp"
#include "align/param_table.hpp"

namespace align::mdp {

PrefixTree::PrefixTree(Vocab vocab, PromptDist prompts, std::size_t capacity, std::size_t budget)
    : vocab_(std::move(vocab)), prompts_(std::move(prompts)), capacity_(capacity) {
  if (capacity_ < 1) throw DomainError("prefix tree: capacity must be >= 1");
  if (vocab_.num_actions() == 0) throw DomainError("prefix tree: empty action set");
  prompts_.validate(vocab_);
  const double total = count_trajectories(vocab_, capacity_) * static_cast<double>(prompts_.prompts.size());
  if (total > static_cast<double>(budget))
    throw BudgetError("prefix tree of " + format_real(total) + " trajectories exceeds budget " +
                      std::to_string(budget));
  for (std::size_t p = 0; p < prompts_.prompts.size(); ++p) {
    Node root;
    root.prompt_index = p;
    root.key = state_key(prompts_.prompts[p], root.generated);
    root.terminal = false;  // capacity >= 1 and prompts are EOS-free
    nodes_.push_back(std::move(root));
    roots_.push_back(nodes_.size() - 1);
    expand(nodes_.size() - 1);
  }
}

void PrefixTree::expand(std::size_t node_index) {
  const std::size_t num_actions = vocab_.num_actions();
  const std::size_t first = edges_.size();
  nodes_[node_index].first_edge = first;
  for (std::size_t a = 0; a < num_actions; ++a) {
    Edge e;
    e.parent = node_index;
    e.action = a;
    e.level = nodes_[node_index].generated.size();
    e.key = occupancy_key(nodes_[node_index].key, vocab_.action_token(a));
    edges_.push_back(std::move(e));
    edge_by_key_.emplace(edges_.back().key, edges_.size() - 1);
  }
  for (std::size_t a = 0; a < num_actions; ++a) {
    const std::size_t ei = first + a;
    const Node& parent = nodes_[node_index];
    Node child;
    child.prompt_index = parent.prompt_index;
    child.generated = parent.generated;
    child.generated.push_back(vocab_.action_token(a));
    child.parent_edge = ei;
    const auto& prompt = prompts_.prompts[child.prompt_index];
    child.key = state_key(prompt, child.generated);
    child.terminal = is_terminal(vocab_, State{prompt, child.generated, capacity_});
    nodes_.push_back(std::move(child));
    const std::size_t ci = nodes_.size() - 1;
    edges_[ei].child = ci;
    if (nodes_[ci].terminal) {
      edges_[ei].traj_key = trajectory_key(prompt, nodes_[ci].generated);
      terminal_edges_.push_back(ei);
      terminal_by_key_.emplace(edges_[ei].traj_key, ei);
    } else {
      expand(ci);
    }
  }
}

State PrefixTree::state_of(std::size_t node) const {
  const Node& n = nodes_.at(node);
  return State{prompts_.prompts[n.prompt_index], n.generated, capacity_};
}

Trajectory PrefixTree::trajectory_of(std::size_t terminal_edge) const {
  const Edge& e = edges_.at(terminal_edge);
  if (e.traj_key.empty()) throw DomainError("edge does not end a trajectory");
  const Node& n = nodes_[e.child];
  return Trajectory{prompts_.prompts[n.prompt_index], n.generated};
}

std::optional<std::size_t> PrefixTree::find_edge(const std::string& key) const {
  auto it = edge_by_key_.find(key);
  if (it == edge_by_key_.end()) return std::nullopt;
  return it->second;
}

std::optional<std::size_t> PrefixTree::find_terminal(const std::string& key) const {
  auto it = terminal_by_key_.find(key);
  if (it == terminal_by_key_.end()) return std::nullopt;
  return it->second;
}

}  // namespace align::mdp
