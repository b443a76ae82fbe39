#include "align/experiment.hpp"

#include <chrono>
#include <cmath>
#include <ostream>
#include <sstream>

#include <json.hpp>

#include "align/adversarial.hpp"
#include "align/errors.hpp"
#include "align/objectives.hpp"
#include "align/occupancy.hpp"
#include "align/optim.hpp"

namespace align::experiment {

namespace {

using config::ObjectiveKind;
using occupancy::DistTable;
using occupancy::DivKind;

constexpr std::uint64_t kInitStream = 0x9E3779B97F4A7C15ull;

struct Evaluator {
  const mdp::PrefixTree& tree;
  DistTable expert_traj;
  const mdp::TerminalReward& reward;
  std::vector<std::string> mode_keys;

  RoundMetrics operator()(const policy::TabularPolicy& pi, std::size_t round, double loss) const {
    RoundMetrics m;
    m.round = round;
    m.loss = loss;
    const DistTable traj = adversarial::policy_table(tree, pi, adversarial::Granularity::Trajectory);
    m.fkl = occupancy::divergence_for_report(expert_traj, traj, DivKind::FKL);
    m.rkl = occupancy::divergence_for_report(expert_traj, traj, DivKind::RKL);
    m.js = occupancy::divergence_for_report(expert_traj, traj, DivKind::JS);
    for (const auto& k : mode_keys) {
      auto it = traj.find(k);
      m.mode_mass.push_back(it == traj.end() ? 0.0 : it->second);
    }
    for (const auto& [k, p] : traj) m.expected_reward += p * reward.table.at(k);
    for (double v : {m.loss, m.fkl, m.rkl, m.js, m.expected_reward})
      if (!std::isfinite(v)) throw NumericAbort("experiment metric is not finite", round);
    return m;
  }
};

void initialize_policy(policy::TabularPolicy& pi, const ExperimentConfig& cfg) {
  if (cfg.init_scale > 0.0) pi.perturb(cfg.init_scale, cfg.seed ^ kInitStream);
}

template <typename Fn>
auto with_context(const ExperimentConfig& cfg, Fn&& fn) {
  const std::string ctx = "experiment " + config::to_string(cfg.objective) + " (config " +
                          config::config_hash(cfg) + ", seed " + std::to_string(cfg.seed) + "): ";
  try {
    return fn();
  } catch (const NumericAbort&) {
    throw;
  } catch (const KeyError& e) {
    throw KeyError(ctx + e.what());
  } catch (const BudgetError& e) {
    throw BudgetError(ctx + e.what());
  } catch (const ConfigError& e) {
    throw ConfigError(ctx + e.what());
  } catch (const DomainError& e) {
    throw DomainError(ctx + e.what());
  }
}

ExperimentResult run_impl(const ExperimentConfig& cfg) {
  const auto start = std::chrono::steady_clock::now();
  const config::Scenario sc = config::build_scenario(cfg);
  const mdp::PrefixTree tree(sc.vocab, sc.prompts, sc.capacity, cfg.budget);
  const policy::TabularPolicy expert = policy::boltzmann_expert(sc.expert, tree);

  Evaluator eval{tree, adversarial::policy_table(tree, expert, adversarial::Granularity::Trajectory),
                 sc.expert.hidden_reward, {}};
  for (const auto& m : sc.modes) eval.mode_keys.push_back(mdp::trajectory_key(m));

  policy::TabularPolicy pi = policy::TabularPolicy::uniform(tree, cfg.order);
  initialize_policy(pi, cfg);

  std::vector<mdp::Trajectory> samples;
  if (cfg.dataset_size) samples = policy::sample_dataset(expert, sc.prompts, *cfg.dataset_size, cfg.seed);

  MetricsReport report;
  report.objective = config::to_string(cfg.objective);
  if (cfg.objective == ObjectiveKind::FGAN) report.objective += "(" + adversarial::to_string(cfg.family) + ")";
  report.config_hash = config::config_hash(cfg);
  report.seed = cfg.seed;
  report.modes = eval.mode_keys;

  const bool adversarial_kind = cfg.objective == ObjectiveKind::RKL_ADV || cfg.objective == ObjectiveKind::JS_ADV ||
                                cfg.objective == ObjectiveKind::FGAN;
  if (!adversarial_kind) {
    std::function<objectives::LossReport(const policy::TabularPolicy&)> loss;
    optim::OptimizerConfig opt = cfg.optimizer;
    objectives::DemoDataset data;
    occupancy::OccupancyTable rho_exp;
    if (cfg.objective == ObjectiveKind::EXACT_FKL) {
      rho_exp = cfg.dataset_size ? occupancy::empirical_occupancy(samples) : occupancy::exact_occupancy(tree, expert);
      loss = [&](const policy::TabularPolicy& p) { return objectives::exact_fkl_occupancy_loss(tree, p, rho_exp); };
    } else {
      data = cfg.dataset_size
                 ? objectives::DemoDataset::from_trajectories(sc.vocab, samples, sc.capacity)
                 : objectives::DemoDataset::from_distribution(
                       sc.vocab, occupancy::trajectory_distribution(tree, expert), sc.capacity);
      switch (cfg.objective) {
        case ObjectiveKind::SFT: loss = [&](const policy::TabularPolicy& p) { return objectives::sft_loss(p, data); }; break;
        case ObjectiveKind::WFKL:
          loss = [&](const policy::TabularPolicy& p) { return objectives::weighted_fkl_loss(p, data); };
          break;
        default:
          loss = [&](const policy::TabularPolicy& p) { return objectives::traj_fkl_loss(p, data); };
          if (cfg.match_step_size) {
            const double scale = data.total_weight() / data.total_step_weight();
            opt.step_size *= scale;
            opt.grad_tol /= scale;
          }
      }
    }
    policy::TabularPolicy probe = pi;
    auto fn = [&](const ParamTable& logits) {
      probe.logits() = logits;
      auto r = loss(probe);
      return optim::Evaluation{r.value, std::move(r.gradient)};
    };
    auto observer = [&](const optim::TracePoint& tp, const ParamTable& logits) {
      if (tp.iter % cfg.report_every != 0) return;
      probe.logits() = logits;
      report.rounds.push_back(eval(probe, tp.iter, tp.value));
    };
    const auto res = optim::optimize(fn, pi.logits(), opt, observer);
    pi.logits() = res.params;
    report.final = eval(pi, res.iterations, res.value);
    if (report.rounds.empty() || report.rounds.back().round != res.iterations) report.rounds.push_back(report.final);
    report.converged = res.converged;
    report.iterations = res.iterations;
  } else {
    adversarial::AdversarialSetup setup;
    setup.objective = cfg.objective == ObjectiveKind::RKL_ADV  ? adversarial::AdvObjective::RKL
                      : cfg.objective == ObjectiveKind::JS_ADV ? adversarial::AdvObjective::JS
                                                               : adversarial::AdvObjective::FGAN;
    setup.granularity = cfg.granularity;
    setup.fdiv = adversarial::make_fdiv(cfg.family, cfg.alpha);
    const adversarial::Target target =
        cfg.dataset_size ? adversarial::Target::from_dataset(samples) : adversarial::Target::from_policy(tree, expert);
    auto state = adversarial::initial_state(tree, setup);
    auto observer = [&](const adversarial::HistoryRow& h, const policy::TabularPolicy& p) {
      if (h.round % cfg.report_every != 0 && h.round + 1 != cfg.schedule.rounds) return;
      auto m = eval(p, h.round, h.policy_loss);
      m.disc_gap = h.disc_gap;
      report.rounds.push_back(m);
    };
    const auto history = adversarial::alternating_train(tree, pi, state, target, setup, cfg.schedule, observer);
    report.final = report.rounds.back();
    report.iterations = history.size();
    // Stationarity of the policy against the final discriminator/critic.
    objectives::LossReport pl = setup.objective == adversarial::AdvObjective::RKL
                                    ? adversarial::policy_rkl_loss(tree, pi, state.disc)
                                : setup.objective == adversarial::AdvObjective::JS
                                    ? adversarial::policy_js_loss(tree, pi, state.disc)
                                    : adversarial::fgan_policy_loss(tree, pi, state.critic, setup.fdiv, true);
    report.converged = l2_norm(pl.gradient) <= cfg.optimizer.grad_tol;
  }
  report.wall_clock_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return ExperimentResult{report, pi};
}

nlohmann::ordered_json metrics_json(const RoundMetrics& m) {
  nlohmann::ordered_json j;
  j["round"] = m.round;
  j["loss"] = m.loss;
  j["fkl"] = m.fkl;
  j["rkl"] = m.rkl;
  j["js"] = m.js;
  j["mode_mass"] = m.mode_mass;
  j["expected_reward"] = m.expected_reward;
  j["disc_gap"] = m.disc_gap;
  return j;
}

}  // namespace

std::string to_json(const MetricsReport& report) {
  nlohmann::ordered_json j;
  j["objective"] = report.objective;
  j["config_hash"] = report.config_hash;
  j["seed"] = report.seed;
  j["modes"] = report.modes;
  j["converged"] = report.converged;
  j["iterations"] = report.iterations;
  j["final"] = metrics_json(report.final);
  j["rounds"] = nlohmann::ordered_json::array();
  for (const auto& r : report.rounds) j["rounds"].push_back(metrics_json(r));
  j["wall_clock_s"] = report.wall_clock_s;
  return j.dump(2) + "\n";
}

void write_json(std::ostream& out, const MetricsReport& report) { out << to_json(report); }

ExperimentResult run_experiment_full(const ExperimentConfig& cfg) {
  return with_context(cfg, [&] { return run_impl(cfg); });
}

MetricsReport run_experiment(const ExperimentConfig& cfg) { return run_experiment_full(cfg).report; }

std::vector<SweepRow> sweep(const ExperimentConfig& base,
                            const std::vector<std::pair<std::string, std::vector<std::string>>>& axes) {
  const std::string ini = config::to_ini(base);
  std::vector<SweepRow> rows;
  std::vector<std::size_t> idx(axes.size(), 0);
  for (const auto& [k, values] : axes)
    if (values.empty()) throw ConfigError("sweep axis has no values: " + k);
  while (true) {
    config::Overrides ov;
    for (std::size_t a = 0; a < axes.size(); ++a) ov.emplace_back(axes[a].first, axes[a].second[idx[a]]);
    std::istringstream in(ini);
    const auto cfg = config::parse_config(in, ov);
    rows.push_back(SweepRow{ov, run_experiment(cfg)});
    std::size_t a = axes.size();
    while (a > 0) {
      --a;
      if (++idx[a] < axes[a].second.size()) break;
      idx[a] = 0;
      if (a == 0) return rows;
    }
    if (axes.empty()) return rows;
  }
}

void write_sweep_csv(std::ostream& out, const std::vector<SweepRow>& rows) {
  std::size_t n_modes = 0;
  for (const auto& r : rows) n_modes = std::max(n_modes, r.report.final.mode_mass.size());
  if (!rows.empty())
    for (const auto& [k, v] : rows.front().axes) out << k << ',';
  out << "objective,seed,config_hash,fkl,rkl,js,expected_reward";
  for (std::size_t i = 0; i < n_modes; ++i) out << ",mode_mass_" << i;
  out << ",disc_gap,converged\n";
  for (const auto& r : rows) {
    for (const auto& [k, v] : r.axes) out << v << ',';
    const auto& f = r.report.final;
    out << r.report.objective << ',' << r.report.seed << ',' << r.report.config_hash << ',' << format_real(f.fkl)
        << ',' << format_real(f.rkl) << ',' << format_real(f.js) << ',' << format_real(f.expected_reward);
    for (std::size_t i = 0; i < n_modes; ++i)
      out << ',' << (i < f.mode_mass.size() ? format_real(f.mode_mass[i]) : std::string());
    out << ',' << format_real(f.disc_gap) << ',' << (r.report.converged ? "true" : "false") << '\n';
  }
}

}  // namespace align::experiment
