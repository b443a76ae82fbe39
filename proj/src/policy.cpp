#include "align/policy.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>

#include "align/errors.hpp"
#include "align/rng.hpp"

namespace align::policy {

ContextOrder ContextOrder::parse(const std::string& text) {
  if (text == "full" || text == "FULL") return full();
  try {
    std::size_t used = 0;
    const long long n = std::stoll(text, &used);
    if (used != text.size() || n < 0) throw DomainError("bad order");
    return markov(static_cast<std::size_t>(n));
  } catch (const std::exception&) {
    throw DomainError("context order must be 'full' or a nonnegative integer, got '" + text + "'");
  }
}

std::string project_context(ContextOrder order, const mdp::State& state) {
  const std::size_t length = state.prompt.size() + state.generated.size();
  if (order.is_full() || order.n() >= length) return mdp::state_key(state);
  mdp::TokenSeq window;
  window.reserve(order.n());
  for (std::size_t i = length - order.n(); i < length; ++i) {
    window.push_back(i < state.prompt.size() ? state.prompt[i] : state.generated[i - state.prompt.size()]);
  }
  return '~' + mdp::join_ids(window);
}

TabularPolicy::TabularPolicy(mdp::Vocab vocab, ContextOrder order, std::size_t capacity)
    : vocab_(std::move(vocab)), order_(order), capacity_(capacity) {
  if (capacity_ < 1) throw DomainError("policy: capacity must be >= 1");
}

TabularPolicy TabularPolicy::uniform(const mdp::PrefixTree& tree, ContextOrder order) {
  TabularPolicy p(tree.vocab(), order, tree.capacity());
  p.ensure_contexts(tree);
  return p;
}

const std::vector<double>& TabularPolicy::row(const std::string& key) const {
  auto it = logits_.find(key);
  if (it == logits_.end()) throw KeyError("policy: unknown context '" + key + "'");
  return it->second;
}

std::vector<double>& TabularPolicy::ensure_context(const std::string& key) {
  auto [it, inserted] = logits_.try_emplace(key, num_actions(), 0.0);
  return it->second;
}

void TabularPolicy::ensure_contexts(const mdp::PrefixTree& tree) {
  if (!(tree.vocab() == vocab_) || tree.capacity() != capacity_)
    throw DomainError("policy: tree built for a different vocab or capacity");
  for (std::size_t i = 0; i < tree.nodes().size(); ++i) {
    if (tree.nodes()[i].terminal) continue;
    ensure_context(context_of(tree.state_of(i)));
  }
}

std::vector<double> TabularPolicy::probabilities(const std::string& context_key) const {
  return softmax(row(context_key));
}

void TabularPolicy::perturb(double scale, std::uint64_t seed) {
  if (scale == 0.0) return;
  Rng rng(seed);
  for (auto& [key, row] : logits_)
    for (double& v : row) v += scale * rng.normal();
}

std::vector<double> softmax(const std::vector<double>& logits) {
  std::vector<double> p(logits.size());
  if (logits.empty()) return p;
  const double m = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - m);
    z += p[i];
  }
  for (double& v : p) v /= z;
  return p;
}

double log_sum_exp(const std::vector<double>& values) {
  if (values.empty()) return -std::numeric_limits<double>::infinity();
  const double m = *std::max_element(values.begin(), values.end());
  if (std::isinf(m)) return m;
  double s = 0.0;
  for (double v : values) s += std::exp(v - m);
  return m + std::log(s);
}

std::vector<double> action_distribution(const TabularPolicy& policy, const mdp::State& state) {
  mdp::validate_state(policy.vocab(), state);
  if (mdp::is_terminal(policy.vocab(), state)) throw DomainError("action_distribution: terminal state");
  return policy.probabilities(policy.context_of(state));
}

double logprob_trajectory(const TabularPolicy& policy, const mdp::Trajectory& traj) {
  mdp::validate_trajectory(policy.vocab(), traj, policy.capacity());
  mdp::State s{traj.prompt, {}, policy.capacity()};
  double total = 0.0;
  for (mdp::TokenId a : traj.response) {
    const auto& logits = policy.row(policy.context_of(s));
    total += logits[policy.vocab().action_index(a)] - log_sum_exp(logits);
    s.generated.push_back(a);
  }
  return total;
}

namespace {

mdp::Trajectory sample_with(const TabularPolicy& policy, const mdp::TokenSeq& prompt, Rng& rng) {
  mdp::State s{prompt, {}, policy.capacity()};
  mdp::validate_state(policy.vocab(), s);
  while (!mdp::is_terminal(policy.vocab(), s)) {
    const auto probs = policy.probabilities(policy.context_of(s));
    s.generated.push_back(policy.vocab().action_token(rng.categorical(probs)));
  }
  return mdp::Trajectory{prompt, s.generated};
}

}  // namespace

mdp::Trajectory sample_response(const TabularPolicy& policy, const mdp::TokenSeq& prompt,
                                std::uint64_t rng_seed) {
  Rng rng(rng_seed);
  return sample_with(policy, prompt, rng);
}

std::vector<mdp::Trajectory> sample_dataset(const TabularPolicy& policy, const mdp::PromptDist& prompts,
                                            std::size_t n, std::uint64_t rng_seed) {
  prompts.validate(policy.vocab());
  Rng rng(rng_seed);
  std::vector<mdp::Trajectory> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t xi = prompts.prompts.size() == 1 ? 0 : rng.categorical(prompts.probs);
    out.push_back(sample_with(policy, prompts.prompts[xi], rng));
  }
  return out;
}

TabularPolicy boltzmann_expert(const ExpertSpec& spec, const mdp::PrefixTree& tree) {
  if (!(spec.temperature > 0.0)) throw DomainError("boltzmann_expert: temperature must be positive");
  const auto& nodes = tree.nodes();
  const auto& edges = tree.edges();
  // value[e] = log of the (tempered) partition function below edge e.
  std::vector<double> value(edges.size(), 0.0);
  for (std::size_t e = edges.size(); e-- > 0;) {
    const auto& edge = edges[e];
    if (!edge.traj_key.empty()) {
      auto it = spec.hidden_reward.table.find(edge.traj_key);
      if (it == spec.hidden_reward.table.end())
        throw KeyError("boltzmann_expert: hidden reward undefined for " + edge.traj_key);
      if (!std::isfinite(it->second)) throw DomainError("boltzmann_expert: non-finite reward");
      value[e] = it->second / spec.temperature;
      if (!std::isfinite(value[e])) throw NumericAbort("boltzmann_expert: reward / temperature overflows at " + edge.traj_key, 0);
    } else {
      const auto& child = nodes[edge.child];
      std::vector<double> below(value.begin() + static_cast<std::ptrdiff_t>(child.first_edge),
                                value.begin() + static_cast<std::ptrdiff_t>(child.first_edge + tree.num_actions()));
      value[e] = log_sum_exp(below);
    }
  }
  TabularPolicy expert(tree.vocab(), ContextOrder::full(), tree.capacity());
  for (const auto& node : nodes) {
    if (node.terminal) continue;
    auto& row = expert.ensure_context(node.key);
    const double top = *std::max_element(value.begin() + static_cast<std::ptrdiff_t>(node.first_edge),
                                         value.begin() + static_cast<std::ptrdiff_t>(node.first_edge + tree.num_actions()));
    for (std::size_t a = 0; a < tree.num_actions(); ++a) row[a] = value[node.first_edge + a] - top;
  }
  return expert;
}

TabularPolicy boltzmann_expert(const ExpertSpec& spec, const mdp::Vocab& vocab, const mdp::PromptDist& prompts,
                               std::size_t capacity) {
  const mdp::PrefixTree tree(vocab, prompts, capacity);
  return boltzmann_expert(spec, tree);
}

void save_policy(std::ostream& out, const TabularPolicy& policy) {
  out << "# align tabular policy v1\n";
  out << "vocab_hash " << policy.vocab().hash() << '\n';
  out << "context_order " << policy.order().to_string() << '\n';
  out << "capacity " << policy.capacity() << '\n';
  out << "actions " << policy.num_actions() << '\n';
  for (const auto& [key, row] : policy.logits()) {
    out << key;
    for (double v : row) out << '\t' << format_real(v);
    out << '\n';
  }
}

TabularPolicy load_policy(std::istream& in, const mdp::Vocab& vocab) {
  std::string line;
  auto header = [&](const std::string& name) {
    while (std::getline(in, line)) {
      if (line.empty() || line[0] == '#') continue;
      std::istringstream ls(line);
      std::string tag, value;
      ls >> tag >> value;
      if (tag != name) throw DomainError("policy file: expected '" + name + "', got '" + tag + "'");
      return value;
    }
    throw DomainError("policy file: missing header '" + name + "'");
  };
  if (header("vocab_hash") != vocab.hash()) throw DomainError("policy file: vocab hash mismatch");
  const ContextOrder order = ContextOrder::parse(header("context_order"));
  const std::size_t capacity = std::stoul(header("capacity"));
  if (std::stoul(header("actions")) != vocab.num_actions()) throw DomainError("policy file: action count mismatch");
  TabularPolicy policy(vocab, order, capacity);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string key;
    std::getline(ls, key, '\t');
    auto& row = policy.ensure_context(key);
    for (double& v : row) {
      std::string field;
      if (!std::getline(ls, field, '\t')) throw DomainError("policy file: short row for " + key);
      v = std::stod(field);
    }
  }
  return policy;
}

}  // namespace align::policy
