#include "align/checks.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

#include <json.hpp>

#include "align/adversarial.hpp"
#include "align/objectives.hpp"
#include "align/occupancy.hpp"
#include "align/preference.hpp"
#include "align/rng.hpp"

namespace align::checks {

namespace {

using occupancy::DivKind;

mdp::Vocab desk_vocab() { return mdp::Vocab::from_symbols({"a", "b", "EOS", "MASK"}, "EOS", "MASK"); }

mdp::PrefixTree desk_tree(std::size_t capacity = 3) {
  return mdp::PrefixTree(desk_vocab(), mdp::PromptDist::single({}), capacity);
}

CheckResult at_most(std::string name, double measured, double tol) {
  return CheckResult{std::move(name), std::isfinite(measured) && measured <= tol, measured, tol};
}

double fd_error(const std::function<double(const policy::TabularPolicy&)>& f, const policy::TabularPolicy& p,
                const ParamTable& analytic) {
  return relative_error(analytic, objectives::finite_diff_gradient(f, p, 1e-6));
}

}  // namespace

policy::TabularPolicy random_expert(const mdp::PrefixTree& tree, std::uint64_t seed) {
  Rng rng(seed);
  policy::ExpertSpec spec;
  for (std::size_t e : tree.terminal_edges()) spec.hidden_reward.table[tree.edges()[e].traj_key] = rng.normal();
  return policy::boltzmann_expert(spec, tree);
}

std::vector<CheckResult> run_invariants(std::uint64_t seed) {
  std::vector<CheckResult> out;
  const auto tree = desk_tree();
  const auto expert = random_expert(tree, seed);
  auto pi = policy::TabularPolicy::uniform(tree, policy::ContextOrder::full());
  pi.perturb(0.7, seed + 1);

  const auto occ = occupancy::exact_occupancy(tree, pi);
  const auto traj = occupancy::trajectory_distribution(tree, pi);
  double traj_total = 0.0, expected_len = 0.0;
  for (std::size_t i = 0; i < traj.support.size(); ++i) {
    const double p = traj.prob(traj.support[i]);
    traj_total += p;
    expected_len += p * static_cast<double>(traj.support[i].response.size());
  }
  out.push_back(at_most("trajectory distribution sums to one", std::abs(traj_total - 1.0), 1e-12));
  out.push_back(at_most("level-0 occupancy mass is one", std::abs(occ.level_mass(0) - 1.0), 1e-12));
  out.push_back(at_most("occupancy total equals expected length", std::abs(occ.total() - expected_len), 1e-12));

  const auto data = objectives::DemoDataset::from_trajectories(
      tree.vocab(), policy::sample_dataset(expert, tree.prompts(), 50, seed + 2), tree.capacity());
  const auto sft = objectives::sft_loss(pi, data);
  const auto trj = objectives::traj_fkl_loss(pi, data);
  out.push_back(at_most("SFT and trajectory-FKL gradients are parallel",
                        std::abs(1.0 - cosine_similarity(sft.gradient, trj.gradient)), 1e-10));
  out.push_back(at_most("trajectory-FKL = (N_steps / N_traj) SFT",
                        std::abs(trj.value - sft.value * data.total_step_weight() / data.total_weight()), 1e-12));

  using adversarial::Granularity;
  const auto p_exp = adversarial::policy_table(tree, expert, Granularity::StateAction);
  const auto p_pi = adversarial::policy_table(tree, pi, Granularity::StateAction);
  const auto star = adversarial::optimal_discriminator(p_exp, p_pi, Granularity::StateAction);
  out.push_back(at_most("policy RKL surrogate at D* equals KL(pi || exp)",
                        std::abs(adversarial::policy_rkl_loss(tree, pi, star).value -
                                 occupancy::divergence(p_exp, p_pi, DivKind::RKL)),
                        1e-9));
  out.push_back(at_most("JS saddle value at D* equals 2 JS - ln 4",
                        std::abs(adversarial::js_minimax_value(star, p_exp, p_pi) -
                                 (2.0 * occupancy::divergence(p_exp, p_pi, DivKind::JS) - std::log(4.0))),
                        1e-9));

  for (auto fam : {adversarial::FDivFamily::AIRL, adversarial::FDivFamily::GAIL, adversarial::FDivFamily::FAIRL,
                   adversarial::FDivFamily::ALPHA}) {
    const auto spec = adversarial::make_fdiv(fam);
    adversarial::Critic critic;
    for (const auto& [k, q] : p_pi) critic.values[k] = spec.f_prime(p_exp.at(k) / q);
    out.push_back(at_most("critic at f'(p/q) attains D_f for " + adversarial::to_string(fam),
                          std::abs(-adversarial::fgan_critic_loss(critic, p_exp, p_pi, spec).value -
                                   occupancy::f_divergence(p_exp, p_pi, spec)),
                          1e-9));
  }
  out.push_back(at_most("FAIRL D_f equals KL(exp || pi)",
                        std::abs(occupancy::f_divergence(p_exp, p_pi, adversarial::make_fdiv(adversarial::FDivFamily::FAIRL)) -
                                 occupancy::divergence(p_exp, p_pi, DivKind::FKL)),
                        1e-9));
  out.push_back(at_most("AIRL D_f equals KL(pi || exp)",
                        std::abs(occupancy::f_divergence(p_exp, p_pi, adversarial::make_fdiv(adversarial::FDivFamily::AIRL)) -
                                 occupancy::divergence(p_exp, p_pi, DivKind::RKL)),
                        1e-9));

  const auto rho_exp = occupancy::exact_occupancy(tree, expert);
  out.push_back(at_most("exact occupancy-KL gradient matches finite differences",
                        fd_error([&](const policy::TabularPolicy& p) {
                          return objectives::exact_fkl_occupancy_loss(tree, p, rho_exp).value;
                        }, pi, objectives::exact_fkl_occupancy_loss(tree, pi, rho_exp).gradient),
                        1e-5));
  out.push_back(at_most("SFT gradient matches finite differences",
                        fd_error([&](const policy::TabularPolicy& p) { return objectives::sft_loss(p, data).value; }, pi,
                                 sft.gradient),
                        1e-5));
  out.push_back(at_most("policy RKL gradient matches finite differences",
                        fd_error([&](const policy::TabularPolicy& p) {
                          return adversarial::policy_rkl_loss(tree, p, star).value;
                        }, pi, adversarial::policy_rkl_loss(tree, pi, star).gradient),
                        1e-5));
  out.push_back(at_most("expert (FULL) has zero exact occupancy-KL",
                        std::abs(objectives::exact_fkl_occupancy_loss(tree, expert, rho_exp).value), 1e-12));

  preference::BTRewardModel model;
  Rng rng(seed + 3);
  preference::PrefDataset prefs;
  const std::vector<std::string> items = {"r0", "r1", "r2", "r3"};
  for (const auto& k : items) model.set(preference::item_key("x", k), rng.normal(), 0.5 + rng.uniform());
  for (std::size_t i = 0; i < items.size(); ++i)
    for (std::size_t j = 0; j < items.size(); ++j)
      if (i != j) prefs.triples.push_back({"x", items[i], items[j]});
  const double base = preference::ce_loss_full(model, prefs).value;
  auto shifted = model, scaled = model;
  for (const auto& k : model.keys()) {
    shifted.set(k, model.R(k) + 1.7, model.V(k));
    scaled.set(k, 2.5 * model.R(k), 2.5 * model.V(k));
  }
  out.push_back(at_most("BT CE is shift invariant",
                        std::abs(preference::ce_loss_full(shifted, prefs).value - base), 1e-12));
  out.push_back(at_most("BT FULL CE is invariant to joint rescaling",
                        std::abs(preference::ce_loss_full(scaled, prefs).value - base), 1e-12));
  return out;
}

AuditReport position_weight_audit(std::size_t instances, std::size_t iterations, std::uint64_t seed) {
  AuditReport audit;
  const auto tree = desk_tree();
  double sum_w = 0.0, sum_s = 0.0;
  for (std::size_t inst = 0; inst < instances; ++inst) {
    const auto expert = random_expert(tree, seed + 101 * inst);
    const auto rho_exp = occupancy::exact_occupancy(tree, expert);
    const auto data = objectives::DemoDataset::from_distribution(
        tree.vocab(), occupancy::trajectory_distribution(tree, expert), tree.capacity());
    auto pi = policy::TabularPolicy::uniform(tree, policy::ContextOrder::full());
    pi.perturb(1.0, seed + 101 * inst + 7);
    for (std::size_t it = 0; it < iterations; ++it) {
      const auto exact = objectives::exact_fkl_occupancy_loss(tree, pi, rho_exp);
      if (it == 0) {
        const double err = relative_error(
            exact.gradient, objectives::finite_diff_gradient(
                                [&](const policy::TabularPolicy& p) {
                                  return objectives::exact_fkl_occupancy_loss(tree, p, rho_exp).value;
                                },
                                pi, 1e-6));
        audit.exact_fd_error = std::max(audit.exact_fd_error, err);
      }
      AuditRow row;
      row.instance = inst;
      row.iteration = it;
      row.exact_loss = exact.value;
      row.cos_wfkl_exact = cosine_similarity(objectives::weighted_fkl_loss(pi, data).gradient, exact.gradient);
      row.cos_sft_exact = cosine_similarity(objectives::sft_loss(pi, data).gradient, exact.gradient);
      sum_w += row.cos_wfkl_exact;
      sum_s += row.cos_sft_exact;
      audit.rows.push_back(row);
      for (const auto& [ctx, g] : exact.gradient) {
        auto& l = pi.logits().at(ctx);
        for (std::size_t a = 0; a < g.size(); ++a) l[a] -= 1.0 * g[a];
      }
    }
  }
  if (!audit.rows.empty()) {
    audit.mean_cos_wfkl = sum_w / static_cast<double>(audit.rows.size());
    audit.mean_cos_sft = sum_s / static_cast<double>(audit.rows.size());
  }
  return audit;
}

void write_audit_csv(std::ostream& out, const AuditReport& audit) {
  out << "instance,iteration,cos_wfkl_exact,cos_sft_exact,exact_loss\n";
  for (const auto& r : audit.rows)
    out << r.instance << ',' << r.iteration << ',' << format_real(r.cos_wfkl_exact) << ','
        << format_real(r.cos_sft_exact) << ',' << format_real(r.exact_loss) << '\n';
}

void write_check_json(std::ostream& out, const std::vector<CheckResult>& invariants, const AuditReport& audit) {
  nlohmann::ordered_json j;
  j["invariants"] = nlohmann::ordered_json::array();
  for (const auto& c : invariants)
    j["invariants"].push_back({{"name", c.name}, {"passed", c.passed}, {"measured", c.measured}, {"tolerance", c.tolerance}});
  nlohmann::ordered_json a;
  a["exact_fd_error"] = audit.exact_fd_error;
  a["mean_cos_wfkl_exact"] = audit.mean_cos_wfkl;
  a["mean_cos_sft_exact"] = audit.mean_cos_sft;
  a["rows"] = nlohmann::ordered_json::array();
  for (const auto& r : audit.rows)
    a["rows"].push_back({{"instance", r.instance},
                         {"iteration", r.iteration},
                         {"cos_wfkl_exact", r.cos_wfkl_exact},
                         {"cos_sft_exact", r.cos_sft_exact},
                         {"exact_loss", r.exact_loss}});
  j["audit"] = a;
  out << j.dump(2) << '\n';
}

}  // namespace align::checks
