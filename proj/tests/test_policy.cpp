#include <doctest.h>

#include <cmath>
#include <map>
#include <sstream>

#include "align/errors.hpp"
#include "align/objectives.hpp"
#include "align/occupancy.hpp"
#include "align/optim.hpp"
#include "align/policy.hpp"
#include "align/rng.hpp"

using namespace align;
using namespace align::policy;
using mdp::PrefixTree;
using mdp::PromptDist;
using mdp::State;
using mdp::Trajectory;
using mdp::Vocab;

namespace {

Vocab vocab_of(std::vector<std::string> syms) {
  syms.push_back("MASK");
  return Vocab::from_symbols(syms, "EOS", "MASK");
}

// Direct oracle: softmax of r/tau over the enumerated trajectory list.
std::map<std::string, double> boltzmann_oracle(const ExpertSpec& spec, const Vocab& v, std::size_t c) {
  const auto all = mdp::enumerate_trajectories(v, {}, c);
  double z = 0.0;
  std::map<std::string, double> out;
  for (const auto& t : all) z += std::exp(mdp::terminal_reward(spec.hidden_reward, t) / spec.temperature);
  for (const auto& t : all)
    out[mdp::trajectory_key(t)] = std::exp(mdp::terminal_reward(spec.hidden_reward, t) / spec.temperature) / z;
  return out;
}

ExpertSpec random_spec(const Vocab& v, std::size_t c, std::uint64_t seed, double tau = 1.0) {
  Rng rng(seed);
  ExpertSpec spec;
  spec.temperature = tau;
  for (const auto& t : mdp::enumerate_trajectories(v, {}, c)) spec.hidden_reward.table[mdp::trajectory_key(t)] = rng.normal();
  return spec;
}

}  // namespace

TEST_CASE("action_distribution examples") {
  const auto v4 = vocab_of({"a", "b", "c", "EOS"});
  TabularPolicy p(v4, ContextOrder::full(), 3);
  p.ensure_context(project_context(ContextOrder::full(), State{{}, {}, 3}));
  const auto d = action_distribution(p, State{{}, {}, 3});
  for (double x : d) CHECK(x == doctest::Approx(0.25).epsilon(1e-15));

  const auto v2 = vocab_of({"a", "EOS"});
  TabularPolicy q(v2, ContextOrder::full(), 3);
  q.ensure_context("^|") = {0.0, std::log(3.0)};
  const auto e = action_distribution(q, State{{}, {}, 3});
  CHECK(e[0] == doctest::Approx(0.25).epsilon(1e-14));
  CHECK(e[1] == doctest::Approx(0.75).epsilon(1e-14));

  const auto v1 = vocab_of({"EOS"});
  TabularPolicy r(v1, ContextOrder::full(), 3);
  r.ensure_context("^|") = {2.0};
  CHECK(action_distribution(r, State{{}, {}, 3})[0] == 1.0);

  CHECK_THROWS_AS(action_distribution(q, State{{}, {v2.eos_id()}, 3}), DomainError);
  CHECK_THROWS_AS(action_distribution(q, State{{}, {0}, 3}), KeyError);
}

TEST_CASE("logprob_trajectory") {
  const auto v = vocab_of({"a", "EOS"});
  const PrefixTree tree(v, PromptDist::single({}), 3);
  auto p = TabularPolicy::uniform(tree, ContextOrder::full());
  const Trajectory t{{}, {0, 0, v.eos_id()}};
  CHECK(logprob_trajectory(p, t) == doctest::Approx(-3.0 * std::log(2.0)).epsilon(1e-14));

  p.perturb(1.3, 5);
  double prod = 1.0;
  State s{{}, {}, 3};
  for (auto a : t.response) {
    prod *= action_distribution(p, s)[v.action_index(a)];
    s = mdp::concat_transition(v, s, a);
  }
  CHECK(std::exp(logprob_trajectory(p, t)) == doctest::Approx(prod).epsilon(1e-13));

  TabularPolicy det = TabularPolicy::uniform(tree, ContextOrder::full());
  for (auto& [k, row] : det.logits()) row = {800.0, 0.0};
  CHECK(logprob_trajectory(det, Trajectory{{}, {0, 0, 0}}) == doctest::Approx(0.0));
  CHECK_THROWS_AS(logprob_trajectory(p, Trajectory{{}, {v.eos_id(), 0}}), DomainError);
}

TEST_CASE("normalization on every reachable state") {
  const auto v = vocab_of({"a", "b", "c", "EOS"});
  const PrefixTree tree(v, PromptDist::single({}), 4);
  for (auto order : {ContextOrder::full(), ContextOrder::markov(1), ContextOrder::markov(2)}) {
    auto p = TabularPolicy::uniform(tree, order);
    p.perturb(2.0, 11);
    for (std::size_t i = 0; i < tree.nodes().size(); ++i) {
      if (tree.nodes()[i].terminal) continue;
      const auto d = action_distribution(p, tree.state_of(i));
      double s = 0.0;
      for (double x : d) {
        CHECK(x > 0.0);
        s += x;
      }
      CHECK(std::abs(s - 1.0) <= 1e-12);
    }
  }
}

TEST_CASE("sampling is deterministic and matches the exact distribution") {
  const auto v = vocab_of({"a", "b", "EOS"});
  const PrefixTree tree(v, PromptDist::single({}), 3);
  auto p = TabularPolicy::uniform(tree, ContextOrder::full());
  p.perturb(0.8, 3);
  CHECK(sample_response(p, {}, 42) == sample_response(p, {}, 42));

  TabularPolicy det = TabularPolicy::uniform(tree, ContextOrder::full());
  for (auto& [k, row] : det.logits()) row = {0.0, 900.0, 0.0};
  for (std::uint64_t s = 0; s < 5; ++s) CHECK(sample_response(det, {}, s).response == mdp::TokenSeq{1, 1, 1});

  const std::size_t n = 100000;
  const auto samples = sample_dataset(p, PromptDist::single({}), n, 9);
  std::map<std::string, double> counts;
  for (const auto& t : samples) counts[mdp::trajectory_key(t)] += 1.0;
  const auto exact = occupancy::trajectory_distribution(tree, p);
  for (const auto& [k, q] : exact.entries) {
    const double sigma = std::sqrt(q * (1.0 - q) / static_cast<double>(n));
    CHECK(std::abs(counts[k] / static_cast<double>(n) - q) <= 3.0 * sigma);
  }
}

TEST_CASE("boltzmann expert against the enumeration oracle") {
  for (std::size_t V = 1; V <= 3; ++V) {
    std::vector<std::string> syms;
    for (std::size_t i = 0; i < V; ++i) syms.push_back(std::string(1, static_cast<char>('a' + i)));
    syms.push_back("EOS");
    const auto v = vocab_of(syms);
    for (std::size_t c = 1; c <= 5; ++c) {
      const auto spec = random_spec(v, c, 100 * V + c, 0.7);
      const auto expert = boltzmann_expert(spec, v, PromptDist::single({}), c);
      const auto d = occupancy::trajectory_distribution(expert, PromptDist::single({}));
      const auto oracle = boltzmann_oracle(spec, v, c);
      REQUIRE(d.entries.size() == oracle.size());
      double worst = 0.0;
      for (const auto& [k, q] : oracle) worst = std::max(worst, std::abs(d.entries.at(k) - q));
      CHECK(worst <= 1e-10);
    }
  }
}

TEST_CASE("boltzmann temperature limits and hand case") {
  const auto v = vocab_of({"a", "b", "EOS"});
  auto spec = random_spec(v, 3, 77, 1e6);
  auto d = occupancy::trajectory_distribution(boltzmann_expert(spec, v, PromptDist::single({}), 3),
                                              PromptDist::single({}));
  double tv = 0.0;
  for (const auto& [k, q] : d.entries) tv += 0.5 * std::abs(q - 1.0 / static_cast<double>(d.entries.size()));
  CHECK(tv <= 1e-4);

  spec.temperature = 1e-6;
  auto best = std::max_element(spec.hidden_reward.table.begin(), spec.hidden_reward.table.end(),
                               [](auto& a, auto& b) { return a.second < b.second; });
  d = occupancy::trajectory_distribution(boltzmann_expert(spec, v, PromptDist::single({}), 3), PromptDist::single({}));
  CHECK(d.entries.at(best->first) >= 1.0 - 1e-6);

  const auto v2 = vocab_of({"a", "EOS"});
  ExpertSpec two;
  two.hidden_reward.table = {{"|0", 0.0}, {"|1", std::log(2.0)}};
  d = occupancy::trajectory_distribution(boltzmann_expert(two, v2, PromptDist::single({}), 1), PromptDist::single({}));
  CHECK(d.entries.at("|0") == doctest::Approx(1.0 / 3.0).epsilon(1e-14));
  CHECK(d.entries.at("|1") == doctest::Approx(2.0 / 3.0).epsilon(1e-14));

  ExpertSpec missing;
  CHECK_THROWS_AS(boltzmann_expert(missing, v2, PromptDist::single({}), 1), KeyError);
}

TEST_CASE("project_context") {
  const State s{{}, {0, 1, 2}, 5};
  CHECK(project_context(ContextOrder::markov(1), s) == "~2");
  CHECK(project_context(ContextOrder::markov(2), s) == "~1.2");
  CHECK(project_context(ContextOrder::full(), s) == mdp::state_key(s));
  CHECK(project_context(ContextOrder::markov(3), s) == mdp::state_key(s));
  CHECK(project_context(ContextOrder::markov(9), s) == mdp::state_key(s));
  const State with_prompt{{7}, {0, 1}, 5};
  CHECK(project_context(ContextOrder::markov(3), with_prompt) == mdp::state_key(with_prompt));
  CHECK(project_context(ContextOrder::markov(2), with_prompt) == "~0.1");
  CHECK(ContextOrder::parse("full").is_full());
  CHECK(ContextOrder::parse("2") == ContextOrder::markov(2));
}

TEST_CASE("save/load round trip") {
  const auto v = vocab_of({"a", "b", "EOS"});
  const PrefixTree tree(v, PromptDist::single({}), 3);
  auto p = TabularPolicy::uniform(tree, ContextOrder::markov(1));
  p.perturb(1.0, 4);
  std::stringstream ss;
  save_policy(ss, p);
  CHECK(load_policy(ss, v) == p);
  std::stringstream again;
  save_policy(again, p);
  const auto other = vocab_of({"a", "c", "EOS"});
  CHECK_THROWS_AS(load_policy(again, other), DomainError);
}

TEST_CASE("order-limited forward-KL fit is exact iff the expert is order-Markov") {
  const auto v = vocab_of({"a", "b", "EOS"});
  const PrefixTree tree(v, PromptDist::single({}), 3);
  auto fit = [&](const TabularPolicy& expert) {
    const auto data = objectives::DemoDataset::from_distribution(v, occupancy::trajectory_distribution(tree, expert), 3);
    auto pi = TabularPolicy::uniform(tree, ContextOrder::markov(1));
    optim::OptimizerConfig cfg;
    cfg.step_size = 4.0;
    cfg.line_search = true;
    cfg.max_iters = 5000;
    cfg.grad_tol = 1e-10;
    auto res = optim::optimize(
        [&](const ParamTable& x) {
          TabularPolicy probe = pi;
          probe.logits() = x;
          auto r = objectives::sft_loss(probe, data);
          return optim::Evaluation{r.value, r.gradient};
        },
        pi.logits(), cfg);
    pi.logits() = res.params;
    return occupancy::divergence(occupancy::trajectory_distribution(tree, expert).entries,
                                 occupancy::trajectory_distribution(tree, pi).entries, occupancy::DivKind::FKL);
  };
  auto markov = TabularPolicy::uniform(tree, ContextOrder::markov(1));
  markov.perturb(1.0, 8);
  CHECK(fit(markov) <= 1e-9);

  ExpertSpec bimodal;
  for (const auto& t : mdp::enumerate_trajectories(v, {}, 3)) bimodal.hidden_reward.table[mdp::trajectory_key(t)] = 0.0;
  bimodal.hidden_reward.table["|0.0.2"] = 3.0;
  bimodal.hidden_reward.table["|1.1.2"] = 3.0;
  CHECK(fit(boltzmann_expert(bimodal, tree)) > 1e-3);
}
