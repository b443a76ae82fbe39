#include "align/occupancy.hpp"

#include <cmath>
#include <ostream>
#include <set>

#include "align/errors.hpp"
#include "align/fdiv.hpp"

namespace align::occupancy {

double OccupancyTable::total() const {
  double s = 0.0;
  for (const auto& [k, v] : entries) s += v;
  return s;
}

double OccupancyTable::level_mass(std::size_t level) const {
  double s = 0.0;
  for (const auto& [k, v] : entries)
    if (mdp::key_level(k) == level) s += v;
  return s;
}

DistTable TrajDist::joint() const {
  DistTable out;
  for (const auto& [key, prob] : entries) {
    const auto bar = key.find('|');
    auto it = prompt_weights.find(key.substr(0, bar));
    if (it == prompt_weights.end()) throw KeyError("trajectory distribution: no weight for prompt of " + key);
    out[key] = it->second * prob;
  }
  return out;
}

double TrajDist::prob(const mdp::Trajectory& traj) const {
  auto it = entries.find(mdp::trajectory_key(traj));
  return it == entries.end() ? 0.0 : it->second;
}

TreeEvaluation::TreeEvaluation(const mdp::PrefixTree& tree, const policy::TabularPolicy& policy, double gamma)
    : tree_(&tree) {
  if (!(gamma > 0.0 && gamma <= 1.0)) throw DomainError("occupancy: gamma must lie in (0, 1]");
  if (!(policy.vocab() == tree.vocab()) || policy.capacity() != tree.capacity())
    throw DomainError("occupancy: policy and tree disagree on vocab or capacity");
  const auto& nodes = tree.nodes();
  const auto& edges = tree.edges();
  const std::size_t na = tree.num_actions();
  contexts_.resize(nodes.size());
  probs_.assign(nodes.size() * na, 0.0);
  reach_.assign(nodes.size(), 0.0);
  edge_mass_.assign(edges.size(), 0.0);

  for (std::size_t i = 0; i < nodes.size(); ++i) {
    if (nodes[i].terminal) continue;
    contexts_[i] = policy.context_of(tree.state_of(i));
    const auto p = policy.probabilities(contexts_[i]);
    std::copy(p.begin(), p.end(), probs_.begin() + static_cast<std::ptrdiff_t>(i * na));
  }
  for (std::size_t r = 0; r < tree.roots().size(); ++r) reach_[tree.roots()[r]] = tree.prompts().probs[r];
  for (std::size_t e = 0; e < edges.size(); ++e) {
    const auto& edge = edges[e];
    const double step = reach_[edge.parent] * probs_[edge.parent * na + edge.action];
    reach_[edge.child] = step;
    edge_mass_[e] = step * std::pow(gamma, static_cast<double>(edge.level));
    total_mass_ += edge_mass_[e];
  }
}

ParamTable TreeEvaluation::score_gradient(const std::vector<double>& weights) const {
  const auto& nodes = tree_->nodes();
  const auto& edges = tree_->edges();
  const std::size_t na = tree_->num_actions();
  if (weights.size() != edges.size()) throw DomainError("score_gradient: one weight per edge required");
  // subtree[e] = sum of weights on e and every edge below it.
  std::vector<double> subtree(weights);
  for (std::size_t e = edges.size(); e-- > 0;) {
    const auto& child = nodes[edges[e].child];
    if (child.terminal) continue;
    for (std::size_t a = 0; a < na; ++a) subtree[e] += subtree[child.first_edge + a];
  }
  ParamTable grad;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    if (nodes[i].terminal) continue;
    auto& row = grad.try_emplace(contexts_[i], na, 0.0).first->second;
    const double* pi = probs(i);
    double total = 0.0;
    for (std::size_t a = 0; a < na; ++a) total += subtree[nodes[i].first_edge + a];
    for (std::size_t a = 0; a < na; ++a) row[a] += subtree[nodes[i].first_edge + a] - total * pi[a];
  }
  return grad;
}

OccupancyTable exact_occupancy(const mdp::PrefixTree& tree, const policy::TabularPolicy& policy, double gamma) {
  const TreeEvaluation ev(tree, policy, gamma);
  OccupancyTable out;
  out.gamma = gamma;
  for (std::size_t e = 0; e < tree.edges().size(); ++e) out.entries[tree.edges()[e].key] = ev.edge_mass(e);
  return out;
}

OccupancyTable exact_occupancy(const policy::TabularPolicy& policy, const mdp::PromptDist& prompts, double gamma) {
  const mdp::PrefixTree tree(policy.vocab(), prompts, policy.capacity());
  return exact_occupancy(tree, policy, gamma);
}

TrajDist trajectory_distribution(const mdp::PrefixTree& tree, const policy::TabularPolicy& policy) {
  const TreeEvaluation ev(tree, policy);
  TrajDist out;
  for (std::size_t r = 0; r < tree.roots().size(); ++r)
    out.prompt_weights[mdp::prompt_key(tree.prompts().prompts[r])] = tree.prompts().probs[r];
  for (std::size_t e : tree.terminal_edges()) {
    const auto& edge = tree.edges()[e];
    // d(y|x) as a product of conditionals along the path.
    double prob = 1.0;
    for (std::size_t cur = e;;) {
      const auto& ce = tree.edges()[cur];
      prob *= ev.probs(ce.parent)[ce.action];
      const auto pe = tree.nodes()[ce.parent].parent_edge;
      if (pe == mdp::PrefixTree::kNone) break;
      cur = pe;
    }
    out.entries[edge.traj_key] = prob;
    out.support.push_back(tree.trajectory_of(e));
  }
  return out;
}

TrajDist trajectory_distribution(const policy::TabularPolicy& policy, const mdp::PromptDist& prompts) {
  const mdp::PrefixTree tree(policy.vocab(), prompts, policy.capacity());
  return trajectory_distribution(tree, policy);
}

TrajDist empirical_traj_dist(const std::vector<mdp::Trajectory>& dataset) {
  if (dataset.empty()) throw DomainError("empirical_traj_dist: empty dataset");
  std::map<std::string, double> per_prompt;
  std::map<std::string, double> counts;
  std::map<std::string, mdp::Trajectory> first_seen;
  for (const auto& t : dataset) {
    const auto key = mdp::trajectory_key(t);
    per_prompt[mdp::prompt_key(t.prompt)] += 1.0;
    counts[key] += 1.0;
    first_seen.try_emplace(key, t);
  }
  TrajDist out;
  for (const auto& [pk, n] : per_prompt) out.prompt_weights[pk] = n / static_cast<double>(dataset.size());
  for (const auto& [key, n] : counts) {
    out.entries[key] = n / per_prompt[key.substr(0, key.find('|'))];
    out.support.push_back(first_seen.at(key));
  }
  return out;
}

OccupancyTable empirical_occupancy(const std::vector<mdp::Trajectory>& dataset, double gamma) {
  if (dataset.empty()) throw DomainError("empirical_occupancy: empty dataset");
  if (!(gamma > 0.0 && gamma <= 1.0)) throw DomainError("occupancy: gamma must lie in (0, 1]");
  OccupancyTable out;
  out.gamma = gamma;
  const double inv_n = 1.0 / static_cast<double>(dataset.size());
  for (const auto& t : dataset) {
    double discount = 1.0;
    for (std::size_t k = 0; k < t.response.size(); ++k) {
      const std::span<const mdp::TokenId> prefix(t.response.data(), k);
      out.entries[mdp::occupancy_key(mdp::state_key(t.prompt, prefix), t.response[k])] += discount * inv_n;
      discount *= gamma;
    }
  }
  return out;
}

DistTable normalized(const DistTable& table) {
  double total = 0.0;
  for (const auto& [k, v] : table) {
    if (!(v >= 0.0)) throw DomainError("normalized: negative or NaN mass at " + k);
    total += v;
  }
  if (!(total > 0.0)) throw DomainError("normalized: table has zero total mass");
  DistTable out;
  for (const auto& [k, v] : table) out.emplace(k, v / total);
  return out;
}

DistTable normalized(const OccupancyTable& table) { return normalized(table.entries); }

namespace {

struct Aligned {
  std::vector<std::string> keys;
  std::vector<double> p, q;
};

Aligned align_tables(const DistTable& p, const DistTable& q, const DivergenceOptions& opts) {
  std::set<std::string> keys;
  for (const auto& [k, v] : p) keys.insert(k);
  for (const auto& [k, v] : q) keys.insert(k);
  Aligned out;
  for (const auto& k : keys) {
    auto ip = p.find(k);
    auto iq = q.find(k);
    const double pv = ip == p.end() ? 0.0 : ip->second;
    const double qv = iq == q.end() ? 0.0 : iq->second;
    if (!(pv >= 0.0) || !(qv >= 0.0)) throw DomainError("divergence: negative or NaN mass at " + k);
    out.keys.push_back(k);
    out.p.push_back(pv);
    out.q.push_back(qv);
  }
  if (opts.smoothing) {
    double sp = 0.0, sq = 0.0;
    for (std::size_t i = 0; i < out.keys.size(); ++i) {
      out.p[i] += opts.epsilon;
      out.q[i] += opts.epsilon;
      sp += out.p[i];
      sq += out.q[i];
    }
    for (std::size_t i = 0; i < out.keys.size(); ++i) {
      out.p[i] /= sp;
      out.q[i] /= sq;
    }
  }
  return out;
}

double kl(const std::vector<double>& p, const std::vector<double>& q, const std::vector<std::string>& keys) {
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] == 0.0) continue;
    if (q[i] == 0.0) throw DomainError("divergence: support mismatch at " + keys[i] + " (enable smoothing)");
    s += p[i] * std::log(p[i] / q[i]);
  }
  return s;
}

}  // namespace

double divergence(const DistTable& p, const DistTable& q, DivKind kind, const DivergenceOptions& opts) {
  const Aligned a = align_tables(p, q, opts);
  switch (kind) {
    case DivKind::FKL: return kl(a.p, a.q, a.keys);
    case DivKind::RKL: return kl(a.q, a.p, a.keys);
    case DivKind::JS: {
      std::vector<double> m(a.p.size());
      for (std::size_t i = 0; i < m.size(); ++i) m[i] = 0.5 * (a.p[i] + a.q[i]);
      return 0.5 * kl(a.p, m, a.keys) + 0.5 * kl(a.q, m, a.keys);
    }
    case DivKind::TV: {
      double s = 0.0;
      for (std::size_t i = 0; i < a.p.size(); ++i) s += std::abs(a.p[i] - a.q[i]);
      return 0.5 * s;
    }
  }
  throw DomainError("divergence: unknown kind");
}

double divergence_for_report(const DistTable& p, const DistTable& q, DivKind kind) {
  try {
    return divergence(p, q, kind);
  } catch (const DomainError&) {
    DivergenceOptions opts;
    opts.smoothing = true;
    return divergence(p, q, kind, opts);
  }
}

double f_divergence(const DistTable& p, const DistTable& q, const adversarial::FDivSpec& spec,
                    const DivergenceOptions& opts) {
  const Aligned a = align_tables(p, q, opts);
  double s = 0.0;
  for (std::size_t i = 0; i < a.p.size(); ++i) {
    const double pv = a.p[i], qv = a.q[i];
    if (pv == 0.0 && qv == 0.0) continue;
    double term;
    if (qv == 0.0) {
      term = pv * spec.slope_at_inf;
    } else if (pv == 0.0) {
      term = qv * spec.f_at_zero;
    } else {
      term = qv * spec.f(pv / qv);
    }
    if (std::isinf(term))
      throw DomainError("f-divergence: infinite contribution from support mismatch at " + a.keys[i]);
    s += term;
  }
  return s;
}

void write_csv(std::ostream& out, const DistTable& table) {
  out << "key,mass\n";
  for (const auto& [k, v] : table) out << k << ',' << format_real(v) << '\n';
}

}  // namespace align::occupancy
