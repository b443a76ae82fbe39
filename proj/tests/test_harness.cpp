#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <regex>
#include <sstream>

#include "align/checks.hpp"
#include "align/cli.hpp"
#include "align/config.hpp"
#include "align/errors.hpp"
#include "align/experiment.hpp"
#include "align/occupancy.hpp"
#include "align/optim.hpp"
#include "align/preference.hpp"

using namespace align;
using config::ExperimentConfig;
using config::ObjectiveKind;

namespace {

std::filesystem::path scratch_dir() {
  auto dir = std::filesystem::temp_directory_path() / "align_test_harness";
  std::filesystem::create_directories(dir);
  return dir;
}

std::string write_file(const std::string& name, const std::string& text) {
  const auto path = scratch_dir() / name;
  std::ofstream(path) << text;
  return path.string();
}

int cli(std::vector<std::string> args, std::string* out_text = nullptr, std::string* err_text = nullptr) {
  args.insert(args.begin(), "align");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  if (out_text) *out_text = out.str();
  if (err_text) *err_text = err.str();
  return code;
}

std::string strip_wall_clock(const std::string& json) {
  return std::regex_replace(json, std::regex(R"(\s*"wall_clock_s":[^\n]*)"), "");
}

ExperimentConfig small_custom() {
  std::istringstream in(R"(
[mdp]
tokens = a, b, EOS, MASK
capacity = 3
[expert]
rewards = | a a EOS = 2; | b EOS = 1; | a b a = -1
[policy]
order = full
init_scale = 0.5
[train]
objective = SFT
method = GD
step_size = 1
max_iters = 3000
grad_tol = 1e-10
[adversarial]
rounds = 40
disc_steps = 50
disc_step_size = 10
policy_step_size = 0.5
[run]
seed = 3
)");
  return config::parse_config(in);
}

double tv(const occupancy::DistTable& p, const occupancy::DistTable& q) {
  double s = 0.0;
  for (const auto& [k, v] : p) s += std::abs(v - (q.contains(k) ? q.at(k) : 0.0));
  for (const auto& [k, v] : q)
    if (!p.contains(k)) s += std::abs(v);
  return 0.5 * s;
}

}  // namespace

TEST_CASE("GD converges on a quadratic bowl") {
  const ParamTable target{{"x", {1.0, -2.0}}, {"y", {0.5}}};
  const std::map<std::string, std::vector<double>> curv{{"x", {0.5, 1.0}}, {"y", {0.8}}};
  auto bowl = [&](const ParamTable& p) {
    optim::Evaluation e;
    for (const auto& [k, row] : p) {
      std::vector<double> g(row.size());
      for (std::size_t i = 0; i < row.size(); ++i) {
        const double d = row[i] - target.at(k)[i];
        e.value += curv.at(k)[i] * d * d;
        g[i] = 2.0 * curv.at(k)[i] * d;
      }
      e.gradient[k] = g;
    }
    return e;
  };
  const ParamTable x0{{"x", {0.0, 0.0}}, {"y", {0.0}}};
  optim::OptimizerConfig cfg;
  cfg.step_size = 0.5;
  cfg.max_iters = 200;
  std::size_t calls = 0;
  const auto r = optim::optimize(bowl, x0, cfg, [&](const optim::TracePoint&, const ParamTable&) { ++calls; });
  CHECK(r.converged);
  CHECK(r.iterations <= 200);
  CHECK(calls == r.trace.size());
  for (const auto& [k, row] : r.params)
    for (std::size_t i = 0; i < row.size(); ++i) CHECK(std::abs(row[i] - target.at(k)[i]) <= 1e-8);

  cfg.line_search = true;
  cfg.step_size = 100.0;
  const auto ls = optim::optimize(bowl, x0, cfg);
  CHECK(ls.converged);
  for (std::size_t i = 1; i < ls.trace.size(); ++i) CHECK(ls.trace[i].value <= ls.trace[i - 1].value);

  cfg = {};
  cfg.method = optim::Method::ADAM;
  cfg.step_size = 0.05;
  cfg.max_iters = 5000;
  cfg.grad_tol = 1e-7;
  const auto adam = optim::optimize(bowl, x0, cfg);
  for (const auto& [k, row] : adam.params)
    for (std::size_t i = 0; i < row.size(); ++i) CHECK(std::abs(row[i] - target.at(k)[i]) <= 1e-4);
}

TEST_CASE("optimizer guards") {
  optim::OptimizerConfig cfg;
  auto nan_fn = [](const ParamTable&) {
    return optim::Evaluation{std::numeric_limits<double>::quiet_NaN(), {{"x", {1.0}}}};
  };
  CHECK_THROWS_AS(optim::optimize(nan_fn, {{"x", {0.0}}}, cfg), NumericAbort);
  auto stray = [](const ParamTable&) { return optim::Evaluation{1.0, {{"nope", {1.0}}}}; };
  CHECK_THROWS_AS(optim::optimize(stray, {{"x", {0.0}}}, cfg), KeyError);
  cfg.step_size = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = {};
  cfg.beta1 = 1.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  CHECK(optim::parse_method(optim::to_string(optim::Method::ADAM)) == optim::Method::ADAM);
}

TEST_CASE("bimodal scenario") {
  const auto cfg = config::build_bimodal_scenario(3.0, 1.0, policy::ContextOrder::markov(1));
  const auto sc = config::build_scenario(cfg);
  REQUIRE(sc.modes.size() == 2);
  const mdp::PrefixTree tree(sc.vocab, sc.prompts, sc.capacity);
  const auto expert = policy::boltzmann_expert(sc.expert, tree);
  const auto d = occupancy::trajectory_distribution(tree, expert);

  // Independent oracle: enumerate and weight by exp(r), no tree involved.
  const auto all = mdp::enumerate_trajectories(sc.vocab, {}, sc.capacity);
  CHECK(all.size() == 15);
  double z = 0.0;
  for (const auto& t : all) z += std::exp(mdp::terminal_reward(sc.expert.hidden_reward, t));
  const double oracle = std::exp(3.0) / z;
  CHECK(oracle == doctest::Approx(std::exp(3.0) / (2.0 * std::exp(3.0) + 13.0)).epsilon(1e-15));
  for (const auto& m : sc.modes) CHECK(d.prob(m) == doctest::Approx(oracle).epsilon(1e-12));

  CHECK_THROWS_AS(config::build_bimodal_scenario(0.0, 1.0, policy::ContextOrder::markov(1)), DomainError);
  CHECK_THROWS_AS(config::build_bimodal_scenario(3.0, -1.0, policy::ContextOrder::markov(1)), DomainError);
}

TEST_CASE("exact-data training reaches the expert for FULL-order policies") {
  auto check_run = [](ExperimentConfig cfg, const std::string& label) {
    const auto r = experiment::run_experiment(cfg);
    INFO(label);
    CHECK(r.final.fkl <= 1e-6);
    CHECK(r.final.rkl <= 1e-6);
  };
  for (auto kind : config::all_objectives()) {
    if (kind == ObjectiveKind::WFKL) continue;
    auto cfg = small_custom();
    cfg.objective = kind;
    cfg.schedule.rounds = 600;
    cfg.schedule.policy_step_size = 2.0;
    if (kind != ObjectiveKind::FGAN) {
      check_run(cfg, config::to_string(kind));
      continue;
    }
    cfg.schedule.disc_step_size = 1.0;
    for (auto fam : {adversarial::FDivFamily::AIRL, adversarial::FDivFamily::GAIL, adversarial::FDivFamily::FAIRL,
                     adversarial::FDivFamily::ALPHA}) {
      cfg.family = fam;
      check_run(cfg, "FGAN " + adversarial::to_string(fam));
    }
  }
}

TEST_CASE("SFT and trajectory FKL follow the same path under matched steps") {
  auto cfg = small_custom();
  cfg.dataset_size = 64;
  cfg.optimizer.max_iters = 200;
  cfg.objective = ObjectiveKind::SFT;
  const auto sft = experiment::run_experiment_full(cfg);
  cfg.objective = ObjectiveKind::TRAJ_FKL;
  const auto traj = experiment::run_experiment_full(cfg);
  const auto sc = config::build_scenario(cfg);
  const mdp::PrefixTree tree(sc.vocab, sc.prompts, sc.capacity);
  CHECK(tv(occupancy::trajectory_distribution(tree, sft.policy).joint(),
           occupancy::trajectory_distribution(tree, traj.policy).joint()) <= 1e-8);
}

TEST_CASE("reports are reproducible") {
  auto cfg = small_custom();
  cfg.dataset_size = 32;
  cfg.optimizer.max_iters = 50;
  for (auto kind : {ObjectiveKind::SFT, ObjectiveKind::RKL_ADV}) {
    cfg.objective = kind;
    cfg.schedule.rounds = 10;
    const auto a = experiment::to_json(experiment::run_experiment(cfg));
    const auto b = experiment::to_json(experiment::run_experiment(cfg));
    CHECK(strip_wall_clock(a) == strip_wall_clock(b));
    CHECK(a.find("wall_clock_s") != std::string::npos);
  }
  auto other = cfg;
  other.seed = cfg.seed + 1;
  CHECK(strip_wall_clock(experiment::to_json(experiment::run_experiment(cfg))) !=
        strip_wall_clock(experiment::to_json(experiment::run_experiment(other))));
}

TEST_CASE("every objective kind runs and round-trips its name") {
  auto cfg = small_custom();
  cfg.dataset_size = 16;
  cfg.optimizer.max_iters = 5;
  cfg.schedule.rounds = 3;
  cfg.schedule.disc_steps = 2;
  for (auto kind : config::all_objectives()) {
    CHECK(config::parse_objective(config::to_string(kind)) == kind);
    cfg.objective = kind;
    for (auto g : {adversarial::Granularity::StateAction, adversarial::Granularity::Trajectory}) {
      cfg.granularity = g;
      const auto r = experiment::run_experiment(cfg);
      CHECK(r.objective.rfind(config::to_string(kind).substr(0, 4), 0) == 0);
      CHECK(std::isfinite(r.final.fkl));
      CHECK(r.final.mode_mass.size() == cfg.modes.size());
    }
  }
  CHECK(config::all_objectives().size() == 7);
  CHECK_THROWS_AS(config::parse_objective("PPO"), ConfigError);
}

TEST_CASE("config: round trip, hashing, overrides and errors") {
  const auto cfg = small_custom();
  std::istringstream canon(config::to_ini(cfg));
  CHECK(config::parse_config(canon) == cfg);
  canon.clear();
  canon.seekg(0);

  auto reseeded = cfg;
  reseeded.seed = 99;
  reseeded.report_every = 1;
  CHECK(config::config_hash(reseeded) == config::config_hash(cfg));
  auto changes = std::vector<ExperimentConfig>(4, cfg);
  changes[0].capacity = 4;
  changes[1].temperature = 0.5;
  changes[2].objective = ObjectiveKind::JS_ADV;
  changes[3].schedule.disc_steps = 7;
  for (const auto& c : changes) CHECK(config::config_hash(c) != config::config_hash(cfg));

  std::istringstream again(config::to_ini(cfg));
  const auto o = config::parse_config(again, {{"temperature", "0.25"}, {"train.objective", "FGAN(AIRL)"}});
  CHECK(o.temperature == 0.25);
  CHECK(o.objective == ObjectiveKind::FGAN);
  CHECK(o.family == adversarial::FDivFamily::AIRL);
  CHECK(config::resolve_key("seed") == "run.seed");
  CHECK_THROWS_AS(config::resolve_key("nonsense"), ConfigError);

  const auto [key, values] = config::parse_axis("train.step_size=0.1,0.2,0.4");
  CHECK(key == "train.step_size");
  CHECK(values == std::vector<std::string>{"0.1", "0.2", "0.4"});
  CHECK_THROWS_AS(config::parse_axis("step_size"), ConfigError);

  const auto pair = config::parse_symbol_pair("a | b EOS");
  CHECK(pair.prompt == std::vector<std::string>{"a"});
  CHECK(pair.response == std::vector<std::string>{"b", "EOS"});
  CHECK(config::parse_symbol_pair(config::format_symbol_pair(pair)) == pair);

  auto bad = [](const std::string& text) {
    std::istringstream in(text);
    return config::parse_config(in);
  };
  CHECK_THROWS_AS(bad("[mdp]\nbogus = 1\n"), ConfigError);
  CHECK_THROWS_AS(bad("[mdp]\ncapacity = three\n"), ConfigError);
  CHECK_THROWS_AS(bad("[mdp]\ncapacity = 0\n"), ConfigError);
  CHECK_THROWS_AS(config::parse_config(canon, {{"capacity", "4"}}), ConfigError);
  CHECK_THROWS_AS(bad("[expert]\nrewards = | a zz EOS = 1\n"), ConfigError);
  CHECK_THROWS_AS(bad("[expert]\nrewards = | a b = 1\n"), ConfigError);
  CHECK_THROWS_AS(bad("[train]\nobjective = PPO\n"), ConfigError);
  CHECK_THROWS_AS(bad("[mdp]\nprompts = a @ 0.5\n"), ConfigError);
  try {
    bad("[adversarial]\nrounds = -3\n");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("rounds") != std::string::npos);
  }
}

TEST_CASE("sweeps enumerate the Cartesian product") {
  auto cfg = small_custom();
  cfg.dataset_size = 16;
  cfg.optimizer.max_iters = 5;
  const auto rows = experiment::sweep(cfg, {{"train.step_size", {"0.5", "1"}}, {"run.seed", {"1", "2", "3"}}});
  REQUIRE(rows.size() == 6);
  CHECK(rows[0].axes[1].second == "1");
  CHECK(rows[1].axes[1].second == "2");
  CHECK(rows[3].axes[0].second == "1");
  CHECK(rows[0].report.config_hash == rows[1].report.config_hash);
  CHECK(rows[0].report.config_hash != rows[3].report.config_hash);
  CHECK(rows[1].report.seed == 2);
  std::ostringstream csv;
  experiment::write_sweep_csv(csv, rows);
  const auto text = csv.str();
  CHECK(text.rfind("train.step_size,run.seed,objective,seed,config_hash,fkl,rkl,js,expected_reward", 0) == 0);
  CHECK(std::count(text.begin(), text.end(), '\n') == 7);
  CHECK_THROWS_AS(experiment::sweep(cfg, {{"train.nonsense", {"1"}}}), ConfigError);
}

TEST_CASE("invariant suite and audit") {
  for (const auto& c : checks::run_invariants(5)) {
    INFO(c.name, " measured=", c.measured, " tol=", c.tolerance);
    CHECK(c.passed);
  }
  const auto audit = checks::position_weight_audit(2, 5, 1);
  CHECK(audit.rows.size() == 10);
  CHECK(audit.exact_fd_error <= 1e-5);
  for (const auto& r : audit.rows) {
    CHECK(std::abs(r.cos_wfkl_exact) <= 1.0 + 1e-12);
    CHECK(std::abs(r.cos_sft_exact) <= 1.0 + 1e-12);
  }
}

TEST_CASE("CLI exit codes and outputs") {
  auto cfg = small_custom();
  cfg.dataset_size = 16;
  cfg.optimizer.max_iters = 20;
  const auto good = write_file("good.cfg", config::to_ini(cfg));
  std::string out, err;
  CHECK(cli({"run", "--config", good}, &out) == 0);
  CHECK(out.find("\"objective\"") != std::string::npos);
  std::string out2;
  CHECK(cli({"run", "--config", good}, &out2) == 0);
  CHECK(strip_wall_clock(out) == strip_wall_clock(out2));
  CHECK(cli({"run", "--config", good, "--format", "csv"}, &out) == 0);
  CHECK(out.rfind("round,", 0) == 0);
  const auto report = (scratch_dir() / "r.json").string();
  CHECK(cli({"run", "--config", good, "--seed", "4", "--out", report}) == 0);
  CHECK(std::filesystem::file_size(report) > 0);

  CHECK(cli({"run", "--config", (scratch_dir() / "missing.cfg").string()}, nullptr, &err) == 2);
  CHECK(cli({"run", "--config", write_file("bad.cfg", "[mdp]\ncapacity = x\n")}, nullptr, &err) == 2);
  CHECK(err.find("capacity") != std::string::npos);
  CHECK(cli({"frobnicate"}) == 2);
  CHECK(cli({"run"}) == 2);

  auto blowup = cfg;
  blowup.temperature = 1e-10;
  blowup.rewards[0].second = 1e300;
  CHECK(cli({"run", "--config", write_file("blowup.cfg", config::to_ini(blowup))}, nullptr, &err) == 3);

  CHECK(cli({"sweep", "--config", good, "--axis", "run.seed=1,2"}, &out) == 0);
  CHECK(std::count(out.begin(), out.end(), '\n') == 3);
  CHECK(cli({"sweep", "--config", good, "--axis", "bogus=1"}) == 2);

  CHECK(cli({"check", "--instances", "1", "--iterations", "2"}, &out) == 0);
  CHECK(out.find("FAIL") == std::string::npos);
  CHECK(out.find("PASS") != std::string::npos);
}

TEST_CASE("CLI btfit") {
  std::ostringstream csv;
  csv << "prompt,winner,loser\n";
  for (int i = 0; i < 60; ++i) csv << "0," << (i % 4 ? "1.2" : "2.2") << ',' << (i % 4 ? "2.2" : "1.2") << '\n';
  for (int i = 0; i < 30; ++i) csv << "0," << (i % 3 ? "2.2" : "0.2") << ',' << (i % 3 ? "0.2" : "2.2") << '\n';
  const auto data = write_file("prefs.csv", csv.str());
  const auto model = (scratch_dir() / "model.csv").string();
  std::string out;
  CHECK(cli({"btfit", "--data", data, "--variant", "full", "--out", model}, &out) == 0);
  CHECK(out.find("heldout") != std::string::npos);
  std::ifstream in(model);
  const auto fitted = preference::read_model_csv(in);
  CHECK(fitted.R("0|1.2") > fitted.R("0|2.2"));
  CHECK(fitted.R("0|2.2") > fitted.R("0|0.2"));
  CHECK(cli({"btfit", "--data", write_file("bad.csv", "a,b\n")}) == 2);
}
