#include "align/objectives.hpp"

#include <cmath>
#include <ostream>

#include <json.hpp>

#include "align/errors.hpp"

namespace align::objectives {

DemoDataset DemoDataset::from_trajectories(const mdp::Vocab& vocab, std::vector<mdp::Trajectory> pairs,
                                           std::size_t capacity, std::vector<double> weights) {
  if (pairs.empty()) throw DomainError("demo dataset: no trajectories");
  if (weights.empty()) weights.assign(pairs.size(), 1.0);
  if (weights.size() != pairs.size()) throw DomainError("demo dataset: one weight per trajectory required");
  DemoDataset data;
  data.capacity = capacity;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    if (!(weights[i] >= 0.0) || !std::isfinite(weights[i])) throw DomainError("demo dataset: invalid weight");
    mdp::validate_trajectory(vocab, pairs[i], capacity);
    const std::size_t K = pairs[i].response.size() - 1;
    mdp::State s{pairs[i].prompt, {}, capacity};
    for (std::size_t k = 0; k <= K; ++k) {
      data.records.push_back(DemoRecord{s, pairs[i].response[k], k, K, i});
      s.generated.push_back(pairs[i].response[k]);
    }
  }
  data.pairs = std::move(pairs);
  data.weights = std::move(weights);
  return data;
}

DemoDataset DemoDataset::from_distribution(const mdp::Vocab& vocab, const occupancy::TrajDist& dist,
                                           std::size_t capacity) {
  const auto joint = dist.joint();
  std::vector<mdp::Trajectory> pairs;
  std::vector<double> weights;
  for (const auto& t : dist.support) {
    pairs.push_back(t);
    weights.push_back(joint.at(mdp::trajectory_key(t)));
  }
  return from_trajectories(vocab, std::move(pairs), capacity, std::move(weights));
}

double DemoDataset::total_weight() const {
  double s = 0.0;
  for (double w : weights) s += w;
  return s;
}

double DemoDataset::total_step_weight() const {
  double s = 0.0;
  for (std::size_t i = 0; i < pairs.size(); ++i) s += weights[i] * static_cast<double>(pairs[i].response.size());
  return s;
}

void write_json(std::ostream& out, const LossReport& report) {
  nlohmann::json grad = nlohmann::json::array();
  for (const auto& [key, row] : report.gradient) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (row[i] != 0.0) grad.push_back({{"key", key}, {"index", i}, {"g", row[i]}});
    }
  }
  nlohmann::json j = {{"value", report.value}, {"gradient", grad}, {"clamp_count", report.clamp_count}};
  out << j.dump(2) << '\n';
}

namespace {

template <typename Coef>
LossReport weighted_nll(const policy::TabularPolicy& policy, const DemoDataset& data, double norm, Coef&& coef) {
  if (!(norm > 0.0)) throw DomainError("loss: dataset has zero total weight");
  LossReport report;
  for (const auto& rec : data.records) {
    const double c = coef(rec) / norm;
    if (c == 0.0) {
      (void)policy.row(policy.context_of(rec.state));
      continue;
    }
    const std::string ctx = policy.context_of(rec.state);
    const auto& logits = policy.row(ctx);
    const auto probs = policy::softmax(logits);
    const std::size_t a = policy.vocab().action_index(rec.action);
    report.value -= c * (logits[a] - policy::log_sum_exp(logits));
    auto& g = report.gradient.try_emplace(ctx, logits.size(), 0.0).first->second;
    for (std::size_t i = 0; i < logits.size(); ++i) g[i] += c * probs[i];
    g[a] -= c;
  }
  return report;
}

}  // namespace

LossReport sft_loss(const policy::TabularPolicy& policy, const DemoDataset& data) {
  return weighted_nll(policy, data, data.total_step_weight(),
                      [&](const DemoRecord& r) { return data.weights[r.trajectory]; });
}

double position_weight(std::size_t k, std::size_t K) {
  if (K == 0) return 1.0;
  return static_cast<double>(K - k) / static_cast<double>(K);
}

LossReport weighted_fkl_loss(const policy::TabularPolicy& policy, const DemoDataset& data) {
  return weighted_nll(policy, data, data.total_step_weight(), [&](const DemoRecord& r) {
    return data.weights[r.trajectory] * position_weight(r.k, r.K);
  });
}

LossReport traj_fkl_loss(const policy::TabularPolicy& policy, const DemoDataset& data) {
  return weighted_nll(policy, data, data.total_weight(),
                      [&](const DemoRecord& r) { return data.weights[r.trajectory]; });
}

LossReport exact_fkl_occupancy_loss(const mdp::PrefixTree& tree, const policy::TabularPolicy& policy,
                                    const occupancy::OccupancyTable& rho_exp) {
  const auto target = occupancy::normalized(rho_exp);
  const occupancy::TreeEvaluation ev(tree, policy, rho_exp.gamma);
  const double total = ev.total_mass();
  std::vector<double> weights(tree.edges().size(), 0.0);
  for (std::size_t e = 0; e < weights.size(); ++e) weights[e] = ev.edge_mass(e) / total;
  LossReport report;
  for (const auto& [key, mass] : target) {
    const auto e = tree.find_edge(key);
    if (!e) throw DomainError("exact_fkl_occupancy_loss: key not in tree: " + key);
    if (mass == 0.0) continue;
    report.value += mass * std::log(mass / (ev.edge_mass(*e) / total));
    weights[*e] -= mass;
  }
  // d/dtheta [-sum p log rho_e + log L] = score_gradient(rho/L - p).
  report.gradient = ev.score_gradient(weights);
  return report;
}

ParamTable finite_diff_gradient(const std::function<double(const ParamTable&)>& loss, const ParamTable& params,
                                double h) {
  if (!(h >= 1e-8 && h <= 1e-3)) throw DomainError("finite_diff_gradient: h must lie in [1e-8, 1e-3]");
  ParamTable grad = zeros_like(params);
  ParamTable probe = params;
  for (auto& [key, row] : probe) {
    auto& g = grad.at(key);
    for (std::size_t i = 0; i < row.size(); ++i) {
      const double saved = row[i];
      row[i] = saved + h;
      const double up = loss(probe);
      row[i] = saved - h;
      const double down = loss(probe);
      row[i] = saved;
      g[i] = (up - down) / (2.0 * h);
    }
  }
  return grad;
}

ParamTable finite_diff_gradient(const std::function<double(const policy::TabularPolicy&)>& loss,
                                const policy::TabularPolicy& policy, double h) {
  policy::TabularPolicy probe = policy;
  return finite_diff_gradient(
      [&](const ParamTable& logits) {
        probe.logits() = logits;
        return loss(probe);
      },
      policy.logits(), h);
}

}  // namespace align::objectives
