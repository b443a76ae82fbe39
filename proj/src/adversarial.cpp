#include "align/adversarial.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <istream>
#include <ostream>
#include <set>

#include <boost/math/tools/minima.hpp>

#include "align/errors.hpp"
#include "align/rng.hpp"

namespace align::adversarial {

std::string to_string(Granularity g) { return g == Granularity::StateAction ? "STATE_ACTION" : "TRAJECTORY"; }

Granularity parse_granularity(const std::string& text) {
  std::string up;
  for (char c : text) up.push_back(static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
  if (up == "STATE_ACTION") return Granularity::StateAction;
  if (up == "TRAJECTORY") return Granularity::Trajectory;
  throw ConfigError("unknown granularity: " + text);
}

std::string to_string(AdvObjective objective) {
  switch (objective) {
    case AdvObjective::RKL: return "RKL";
    case AdvObjective::JS: return "JS";
    case AdvObjective::FGAN: return "FGAN";
  }
  return "?";
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

double Discriminator::output(const std::string& key) const {
  auto it = logits.find(key);
  if (it == logits.end()) throw KeyError("discriminator: no logit for " + key);
  return sigmoid(std::clamp(it->second, -kLogitClamp, kLogitClamp));
}

namespace {

// Per-edge view of the keys a granularity scores: every edge for
// state-action, terminal edges only for trajectories.
struct Scored {
  std::vector<std::size_t> edges;
  std::vector<const std::string*> keys;
  std::vector<double> mass;
  double total = 0.0;
};

Scored scored_edges(const mdp::PrefixTree& tree, const occupancy::TreeEvaluation& ev, Granularity g) {
  Scored s;
  if (g == Granularity::StateAction) {
    for (std::size_t e = 0; e < tree.edges().size(); ++e) {
      s.edges.push_back(e);
      s.keys.push_back(&tree.edges()[e].key);
      s.mass.push_back(ev.edge_mass(e));
    }
  } else {
    for (std::size_t e : tree.terminal_edges()) {
      s.edges.push_back(e);
      s.keys.push_back(&tree.edges()[e].traj_key);
      s.mass.push_back(ev.reach(tree.edges()[e].child));
    }
  }
  for (double m : s.mass) s.total += m;
  return s;
}

// value = sum_e mass_e c_e (optionally divided by total mass) and its exact
// policy gradient.
LossReport linear_policy_loss(const mdp::PrefixTree& tree, const policy::TabularPolicy& policy, Granularity g,
                              const std::function<double(const std::string&)>& cost, bool normalize) {
  const occupancy::TreeEvaluation ev(tree, policy);
  const Scored s = scored_edges(tree, ev, g);
  std::vector<double> c(s.edges.size());
  double value = 0.0;
  for (std::size_t i = 0; i < s.edges.size(); ++i) {
    c[i] = cost(*s.keys[i]);
    value += s.mass[i] * c[i];
  }
  std::vector<double> w(tree.edges().size(), 0.0);
  if (normalize) {
    if (!(s.total > 0.0)) throw DomainError("policy loss: policy puts no mass on the tree");
    value /= s.total;
    for (std::size_t i = 0; i < s.edges.size(); ++i) w[s.edges[i]] = s.mass[i] * (c[i] - value) / s.total;
  } else {
    for (std::size_t i = 0; i < s.edges.size(); ++i) w[s.edges[i]] = s.mass[i] * c[i];
  }
  LossReport report;
  report.value = value;
  report.gradient = ev.score_gradient(w);
  return report;
}

double table_mass(const DistTable& t, const std::string& key) {
  auto it = t.find(key);
  return it == t.end() ? 0.0 : it->second;
}

std::set<std::string> key_union(const DistTable& a, const DistTable& b) {
  std::set<std::string> keys;
  for (const auto& [k, v] : a) keys.insert(k);
  for (const auto& [k, v] : b) keys.insert(k);
  return keys;
}

double clamped_logit(const Discriminator& disc, const std::string& key, std::size_t* clamps) {
  auto it = disc.logits.find(key);
  if (it == disc.logits.end()) throw DomainError("discriminator has no logit for key carrying mass: " + key);
  if (!std::isfinite(it->second)) throw NumericAbort("discriminator logit is not finite at " + key, 0);
  if (std::abs(it->second) > kLogitClamp && clamps) ++*clamps;
  return std::clamp(it->second, -kLogitClamp, kLogitClamp);
}

}  // namespace

DistTable policy_table(const mdp::PrefixTree& tree, const policy::TabularPolicy& policy, Granularity g) {
  const occupancy::TreeEvaluation ev(tree, policy);
  const Scored s = scored_edges(tree, ev, g);
  if (!(s.total > 0.0)) throw DomainError("policy_table: zero total mass");
  DistTable out;
  for (std::size_t i = 0; i < s.edges.size(); ++i) out[*s.keys[i]] = s.mass[i] / s.total;
  return out;
}

Discriminator uniform_discriminator(const mdp::PrefixTree& tree, Granularity g) {
  Discriminator d;
  d.granularity = g;
  if (g == Granularity::StateAction) {
    for (const auto& e : tree.edges()) d.logits[e.key] = 0.0;
  } else {
    for (std::size_t e : tree.terminal_edges()) d.logits[tree.edges()[e].traj_key] = 0.0;
  }
  return d;
}

Critic constant_critic(const mdp::PrefixTree& tree, Granularity g, double value) {
  Critic c;
  c.granularity = g;
  for (const auto& [k, v] : uniform_discriminator(tree, g).logits) c.values[k] = value;
  return c;
}

Discriminator optimal_discriminator(const DistTable& p_exp, const DistTable& p_pi, Granularity g) {
  Discriminator d;
  d.granularity = g;
  for (const auto& key : key_union(p_exp, p_pi)) {
    const double pe = table_mass(p_exp, key);
    const double pp = table_mass(p_pi, key);
    if (pe < 0.0 || pp < 0.0) throw DomainError("optimal_discriminator: negative mass at " + key);
    if (pe == 0.0 && pp == 0.0) continue;
    double logit;
    if (pp == 0.0) logit = kLogitClamp;
    else if (pe == 0.0) logit = -kLogitClamp;
    else logit = std::clamp(std::log(pe) - std::log(pp), -kLogitClamp, kLogitClamp);
    d.logits[key] = logit;
  }
  return d;
}

Discriminator optimal_discriminator(const occupancy::OccupancyTable& rho_exp,
                                    const occupancy::OccupancyTable& rho_pi) {
  return optimal_discriminator(occupancy::normalized(rho_exp), occupancy::normalized(rho_pi),
                               Granularity::StateAction);
}

LossReport discriminator_loss(const Discriminator& disc, const DistTable& p_exp, const DistTable& p_pi) {
  LossReport report;
  for (const auto& key : key_union(p_exp, p_pi)) {
    const double pe = table_mass(p_exp, key);
    const double pp = table_mass(p_pi, key);
    if (pe == 0.0 && pp == 0.0) continue;
    const double l = clamped_logit(disc, key, &report.clamp_count);
    // -log sigmoid(l) = softplus(-l), -log(1 - sigmoid(l)) = softplus(l)
    report.value += pe * softplus(-l) + pp * softplus(l);
    report.gradient[key] = {(pe + pp) * sigmoid(l) - pe};
  }
  return report;
}

LossReport policy_rkl_loss(const mdp::PrefixTree& tree, const policy::TabularPolicy& policy,
                           const Discriminator& disc) {
  std::size_t clamps = 0;
  auto report = linear_policy_loss(
      tree, policy, disc.granularity, [&](const std::string& k) { return -clamped_logit(disc, k, &clamps); }, true);
  report.clamp_count = clamps;
  return report;
}

LossReport policy_js_loss(const mdp::PrefixTree& tree, const policy::TabularPolicy& policy,
                          const Discriminator& disc) {
  std::size_t clamps = 0;
  auto report = linear_policy_loss(
      tree, policy, disc.granularity,
      [&](const std::string& k) { return -softplus(clamped_logit(disc, k, &clamps)); }, true);
  report.clamp_count = clamps;
  return report;
}

double js_minimax_value(const Discriminator& disc, const DistTable& p_exp, const DistTable& p_pi) {
  return -discriminator_loss(disc, p_exp, p_pi).value;
}

double js_minimax_value(const mdp::PrefixTree& tree, const policy::TabularPolicy& policy,
                        const Discriminator& disc, const DistTable& p_exp) {
  return js_minimax_value(disc, p_exp, policy_table(tree, policy, disc.granularity));
}

LossReport fgan_critic_loss(const Critic& critic, const DistTable& p_exp, const DistTable& p_pi,
                            const FDivSpec& spec) {
  LossReport report;
  for (const auto& key : key_union(p_exp, p_pi)) {
    const double pe = table_mass(p_exp, key);
    const double pp = table_mass(p_pi, key);
    if (pe == 0.0 && pp == 0.0) continue;
    auto it = critic.values.find(key);
    if (it == critic.values.end()) throw DomainError("critic has no value for key carrying mass: " + key);
    double t = it->second;
    if (!spec.in_domain(t)) {
      t = spec.clamp(t);
      ++report.clamp_count;
    }
    report.value -= pe * t - pp * spec.f_star(t);
    report.gradient[key] = {-pe + pp * spec.f_star_prime(t)};
  }
  return report;
}

Critic maximize_critic(const DistTable& p_exp, const DistTable& p_pi, const FDivSpec& spec, Granularity g) {
  Critic c;
  c.granularity = g;
  const double lo = spec.clamp(-1e6), hi = spec.clamp(1e6);
  for (const auto& key : key_union(p_exp, p_pi)) {
    const double pe = table_mass(p_exp, key);
    const double pp = table_mass(p_pi, key);
    if (pe == 0.0 && pp == 0.0) continue;
    if (pp == 0.0) throw DomainError("maximize_critic: p_pi has no mass at " + key);
    std::uintmax_t iters = 500;
    const auto [t, v] = boost::math::tools::brent_find_minima(
        [&](double x) { return -(pe * x - pp * spec.f_star(x)); }, lo, hi, std::numeric_limits<double>::digits / 2,
        iters);
    c.values[key] = t;
  }
  return c;
}

LossReport fgan_policy_loss(const mdp::PrefixTree& tree, const policy::TabularPolicy& policy, const Critic& critic,
                            const FDivSpec& spec, bool normalized) {
  std::size_t clamps = 0;
  auto report = linear_policy_loss(
      tree, policy, critic.granularity,
      [&](const std::string& k) {
        auto it = critic.values.find(k);
        if (it == critic.values.end()) throw KeyError("critic: no value for " + k);
        double t = it->second;
        if (!spec.in_domain(t)) {
          t = spec.clamp(t);
          ++clamps;
        }
        return -spec.f_star(t);
      },
      normalized);
  report.clamp_count = clamps;
  return report;
}

LossReport sampled_policy_loss(const policy::TabularPolicy& policy, const mdp::PromptDist& prompts, Granularity g,
                               const std::function<double(const std::string&)>& cost, std::size_t n_samples,
                               std::uint64_t seed) {
  if (n_samples == 0) throw DomainError("sampled_policy_loss: need at least one sample");
  const auto samples = policy::sample_dataset(policy, prompts, n_samples, seed);
  std::vector<double> returns;
  for (const auto& t : samples) {
    double r = 0.0;
    if (g == Granularity::Trajectory) {
      r = cost(mdp::trajectory_key(t));
    } else {
      for (std::size_t k = 0; k < t.response.size(); ++k) {
        const std::span<const mdp::TokenId> prefix(t.response.data(), k);
        r += cost(mdp::occupancy_key(mdp::state_key(t.prompt, prefix), t.response[k]));
      }
    }
    returns.push_back(r);
  }
  double baseline = 0.0;
  for (double r : returns) baseline += r;
  baseline /= static_cast<double>(n_samples);

  LossReport report;
  report.value = baseline;
  const double inv_n = 1.0 / static_cast<double>(n_samples);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const double adv = (returns[i] - baseline) * inv_n;
    if (adv == 0.0) continue;
    mdp::State s{samples[i].prompt, {}, policy.capacity()};
    for (mdp::TokenId a : samples[i].response) {
      const auto ctx = policy.context_of(s);
      const auto pi = policy.probabilities(ctx);
      auto& row = report.gradient.try_emplace(ctx, pi.size(), 0.0).first->second;
      for (std::size_t j = 0; j < pi.size(); ++j) row[j] -= adv * pi[j];
      row[policy.vocab().action_index(a)] += adv;
      s.generated.push_back(a);
    }
  }
  return report;
}

Target Target::from_policy(const mdp::PrefixTree& tree, const policy::TabularPolicy& expert) {
  return Target{policy_table(tree, expert, Granularity::StateAction),
                policy_table(tree, expert, Granularity::Trajectory)};
}

Target Target::from_dataset(const std::vector<mdp::Trajectory>& dataset) {
  return Target{occupancy::normalized(occupancy::empirical_occupancy(dataset)),
                occupancy::empirical_traj_dist(dataset).joint()};
}

AdversarialState initial_state(const mdp::PrefixTree& tree, const AdversarialSetup& setup) {
  AdversarialState st;
  st.disc = uniform_discriminator(tree, setup.granularity);
  st.critic = constant_critic(tree, setup.granularity, setup.fdiv.f_prime(1.0));
  return st;
}

std::vector<HistoryRow> alternating_train(const mdp::PrefixTree& tree, policy::TabularPolicy& policy,
                                          AdversarialState& state, const Target& target,
                                          const AdversarialSetup& setup, const Schedule& schedule,
                                          const RoundObserver& observer) {
  if (schedule.rounds == 0 || schedule.disc_steps == 0)
    throw DomainError("alternating_train: rounds and disc_steps must be positive");
  if (!(schedule.disc_step_size > 0.0) || !(schedule.policy_step_size > 0.0))
    throw DomainError("alternating_train: step sizes must be positive");
  const Granularity g = setup.granularity;
  const DistTable& p_exp = target.at(g);
  const bool fgan = setup.objective == AdvObjective::FGAN;
  state.disc.granularity = g;
  state.critic.granularity = g;
  policy.ensure_contexts(tree);

  auto disc_loss = [&](const DistTable& p_pi) {
    return fgan ? fgan_critic_loss(state.critic, p_exp, p_pi, setup.fdiv)
                : discriminator_loss(state.disc, p_exp, p_pi);
  };
  auto policy_loss = [&]() {
    switch (setup.objective) {
      case AdvObjective::RKL: return policy_rkl_loss(tree, policy, state.disc);
      case AdvObjective::JS: return policy_js_loss(tree, policy, state.disc);
      case AdvObjective::FGAN: return fgan_policy_loss(tree, policy, state.critic, setup.fdiv, true);
    }
    throw DomainError("unknown adversarial objective");
  };

  std::vector<HistoryRow> history;
  for (std::size_t round = 0; round < schedule.rounds; ++round) {
    DistTable p_pi = policy_table(tree, policy, g);
    LossReport dl;
    for (std::size_t s = 0; s < schedule.disc_steps; ++s) {
      dl = disc_loss(p_pi);
      for (const auto& [key, row] : dl.gradient) {
        if (fgan) {
          double& t = state.critic.values.at(key);
          t -= schedule.disc_step_size * row[0];
          if (!setup.fdiv.in_domain(t)) t = setup.fdiv.clamp(t);
        } else {
          double& l = state.disc.logits.at(key);
          l = std::clamp(l - schedule.disc_step_size * row[0], -kLogitClamp, kLogitClamp);
        }
      }
    }
    dl = disc_loss(p_pi);

    LossReport pl = policy_loss();
    for (std::size_t s = 0; s < schedule.policy_steps; ++s) {
      for (const auto& [ctx, row] : pl.gradient) {
        auto& logits = policy.ensure_context(ctx);
        for (std::size_t a = 0; a < row.size(); ++a) logits[a] -= schedule.policy_step_size * row[a];
      }
      pl = policy_loss();
    }

    HistoryRow h;
    h.round = round;
    h.policy_loss = pl.value;
    h.disc_loss = dl.value;
    const DistTable traj = policy_table(tree, policy, Granularity::Trajectory);
    h.fkl = occupancy::divergence_for_report(target.trajectory, traj, occupancy::DivKind::FKL);
    h.rkl = occupancy::divergence_for_report(target.trajectory, traj, occupancy::DivKind::RKL);
    h.js = occupancy::divergence_for_report(target.trajectory, traj, occupancy::DivKind::JS);
    if (!fgan) {
      const auto star = optimal_discriminator(p_exp, p_pi, g);
      for (const auto& [key, l] : star.logits)
        h.disc_gap = std::max(h.disc_gap, std::abs(state.disc.output(key) - sigmoid(l)));
    }
    for (double v : {h.policy_loss, h.disc_loss, h.fkl, h.rkl, h.js, h.disc_gap})
      if (!std::isfinite(v)) throw NumericAbort("adversarial training produced a non-finite value", round);
    history.push_back(h);
    if (observer) observer(h, policy);
  }
  return history;
}

void write_history_csv(std::ostream& out, const std::vector<HistoryRow>& history) {
  out << "round,policy_loss,disc_loss,fkl,rkl,js,disc_gap\n";
  for (const auto& h : history) {
    out << h.round << ',' << format_real(h.policy_loss) << ',' << format_real(h.disc_loss) << ','
        << format_real(h.fkl) << ',' << format_real(h.rkl) << ',' << format_real(h.js) << ','
        << format_real(h.disc_gap) << '\n';
  }
}

void save_discriminator(std::ostream& out, const Discriminator& disc) {
  out << "granularity " << to_string(disc.granularity) << '\n';
  for (const auto& [key, l] : disc.logits) out << key << '\t' << format_real(l) << '\n';
}

Discriminator load_discriminator(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line.rfind("granularity ", 0) != 0)
    throw DomainError("load_discriminator: missing granularity header");
  Discriminator d;
  d.granularity = parse_granularity(line.substr(12));
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw DomainError("load_discriminator: malformed row: " + line);
    const double v = std::stod(line.substr(tab + 1));
    if (!std::isfinite(v)) throw DomainError("load_discriminator: non-finite logit");
    d.logits[line.substr(0, tab)] = v;
  }
  return d;
}

}  // namespace align::adversarial
