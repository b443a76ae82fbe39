#include <doctest.h>

#include <cmath>
#include <limits>
#include <sstream>

#include "align/adversarial.hpp"
#include "align/errors.hpp"
#include "align/rng.hpp"

using namespace align;
using namespace align::adversarial;
using mdp::PrefixTree;
using mdp::PromptDist;
using occupancy::DivKind;
using policy::ContextOrder;
using policy::TabularPolicy;

namespace {

mdp::Vocab v3() { return mdp::Vocab::from_symbols({"a", "b", "EOS", "MASK"}, "EOS", "MASK"); }

TabularPolicy random_policy(const PrefixTree& tree, std::uint64_t seed, double scale = 0.8,
                            ContextOrder order = ContextOrder::full()) {
  auto p = TabularPolicy::uniform(tree, order);
  p.perturb(scale, seed);
  return p;
}

// sup_u {u t - f(u)}: coarse log-spaced grid, then golden-section refinement
// of the (concave) objective around the best grid point.
double numeric_sup(const FDivSpec& s, double t) {
  auto g = [&](double logu) {
    const double u = std::exp(logu);
    return u * t - s.f(u);
  };
  double best = -30.0;
  for (double x = -30.0; x <= 30.0; x += 0.01)
    if (g(x) > g(best)) best = x;
  double lo = best - 0.01, hi = best + 0.01;
  const double r = (std::sqrt(5.0) - 1.0) / 2.0;
  for (int i = 0; i < 200; ++i) {
    const double a = hi - r * (hi - lo), b = lo + r * (hi - lo);
    if (g(a) > g(b)) hi = b;
    else lo = a;
  }
  return g(0.5 * (lo + hi));
}

double fd_rel_error(const std::function<double(const TabularPolicy&)>& f, const TabularPolicy& p,
                    const ParamTable& analytic) {
  return relative_error(analytic, objectives::finite_diff_gradient(f, p, 1e-6));
}

ParamTable scalar_fd(const std::function<double(const DistTable&)>& f, const DistTable& x) {
  ParamTable shape;
  for (const auto& [k, v] : x) shape[k] = {v};
  return objectives::finite_diff_gradient(
      [&](const ParamTable& p) {
        DistTable probe;
        for (const auto& [k, row] : p) probe[k] = row[0];
        return f(probe);
      },
      shape, 1e-6);
}

}  // namespace

TEST_CASE("optimal discriminator closed form") {
  auto d = optimal_discriminator(DistTable{{"x", 0.2}, {"y", 0.6}, {"z", 0.0}, {"w", 0.0}},
                                 DistTable{{"x", 0.2}, {"y", 0.2}, {"z", 0.6}}, Granularity::StateAction);
  CHECK(d.output("x") == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(d.output("y") == doctest::Approx(0.75).epsilon(1e-14));
  CHECK(d.output("z") <= 1e-12);
  CHECK_FALSE(d.logits.contains("w"));
  CHECK_THROWS_AS(d.output("w"), KeyError);
}

TEST_CASE("discriminator loss: identities and gradient") {
  const auto v = v3();
  const PrefixTree tree(v, PromptDist::single({}), 3);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto pe = policy_table(tree, random_policy(tree, seed), Granularity::StateAction);
    const auto pp = policy_table(tree, random_policy(tree, seed + 50), Granularity::StateAction);
    const auto star = optimal_discriminator(pe, pp, Granularity::StateAction);
    CHECK(std::abs(discriminator_loss(star, pe, pp).value +
                   (2.0 * occupancy::divergence(pe, pp, DivKind::JS) - std::log(4.0))) <= 1e-6);
    const auto half = uniform_discriminator(tree, Granularity::StateAction);
    CHECK(discriminator_loss(half, pe, pp).value == doctest::Approx(std::log(4.0)).epsilon(1e-14));

    Discriminator d = half;
    Rng rng(seed);
    for (auto& [k, l] : d.logits) l = rng.normal();
    const auto fd = scalar_fd(
        [&](const DistTable& logits) {
          Discriminator probe{Granularity::StateAction, logits};
          return discriminator_loss(probe, pe, pp).value;
        },
        d.logits);
    CHECK(relative_error(discriminator_loss(d, pe, pp).gradient, fd) <= 1e-6);
  }
  Discriminator partial{Granularity::StateAction, {{"x", 0.0}}};
  CHECK_THROWS_AS(discriminator_loss(partial, {{"x", 0.5}, {"y", 0.5}}, {{"x", 1.0}}), DomainError);
}

TEST_CASE("policy RKL surrogate equals reverse KL at D*, both granularities") {
  const auto v = v3();
  const PrefixTree tree(v, PromptDist{{{}, {0}}, {0.6, 0.4}}, 3);
  for (auto g : {Granularity::StateAction, Granularity::Trajectory}) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      const auto expert = random_policy(tree, seed);
      const auto pi = random_policy(tree, seed + 7, 1.0, ContextOrder::markov(1));
      const auto pe = policy_table(tree, expert, g), pp = policy_table(tree, pi, g);
      const auto star = optimal_discriminator(pe, pp, g);
      CHECK(std::abs(policy_rkl_loss(tree, pi, star).value - occupancy::divergence(pe, pp, DivKind::RKL)) <= 1e-6);
      CHECK(fd_rel_error([&](const TabularPolicy& p) { return policy_rkl_loss(tree, p, star).value; }, pi,
                         policy_rkl_loss(tree, pi, star).gradient) <= 1e-5);
      CHECK(fd_rel_error([&](const TabularPolicy& p) { return policy_js_loss(tree, p, star).value; }, pi,
                         policy_js_loss(tree, pi, star).gradient) <= 1e-5);
      const auto self = optimal_discriminator(pe, pe, g);
      CHECK(std::abs(policy_rkl_loss(tree, expert, self).value) <= 1e-12);
    }
  }
}

TEST_CASE("fixed-D* surrogate gradient equals the true reverse-KL gradient") {
  const auto v = v3();
  const PrefixTree tree(v, PromptDist::single({}), 3);
  const auto expert = random_policy(tree, 1);
  const auto pi = random_policy(tree, 2);
  const auto pe = policy_table(tree, expert, Granularity::StateAction);
  const auto star = optimal_discriminator(pe, policy_table(tree, pi, Granularity::StateAction), Granularity::StateAction);
  const auto fd = objectives::finite_diff_gradient(
      [&](const TabularPolicy& p) {
        return occupancy::divergence(pe, policy_table(tree, p, Granularity::StateAction), DivKind::RKL);
      },
      pi, 1e-6);
  CHECK(relative_error(policy_rkl_loss(tree, pi, star).gradient, fd) <= 1e-6);
}

TEST_CASE("JS minimax value") {
  const auto v = v3();
  const PrefixTree tree(v, PromptDist::single({}), 3);
  const auto expert = random_policy(tree, 3);
  const auto pe = policy_table(tree, expert, Granularity::StateAction);
  const auto pi = random_policy(tree, 4);
  const auto pp = policy_table(tree, pi, Granularity::StateAction);
  const auto star = optimal_discriminator(pe, pp, Granularity::StateAction);
  CHECK(std::abs(js_minimax_value(tree, pi, star, pe) - (2.0 * occupancy::divergence(pe, pp, DivKind::JS) - std::log(4.0))) <=
        1e-6);
  CHECK(js_minimax_value(optimal_discriminator(pe, pe, Granularity::StateAction), pe, pe) ==
        doctest::Approx(-std::log(4.0)).epsilon(1e-14));

  double prev = -std::numeric_limits<double>::infinity();
  for (int i = 0; i <= 10; ++i) {
    const double lam = i / 10.0;
    DistTable mix;
    for (const auto& [k, p] : pe) mix[k] = (1.0 - lam) * p + lam * pp.at(k);
    const double val = js_minimax_value(optimal_discriminator(pe, mix, Granularity::StateAction), pe, mix);
    if (i > 0) CHECK(val > prev);
    prev = val;
  }
}

TEST_CASE("conjugates: closed forms match numeric sup") {
  const auto fairl = make_fdiv(FDivFamily::FAIRL);
  const auto airl = make_fdiv(FDivFamily::AIRL);
  CHECK(f_conjugate(fairl, 0.3) == doctest::Approx(std::exp(-0.7)).epsilon(1e-15));
  CHECK(f_conjugate(airl, -2.0) == doctest::Approx(-1.0 - std::log(2.0)).epsilon(1e-15));
  CHECK_THROWS_AS(f_conjugate(airl, 0.5), DomainError);
  CHECK_THROWS_AS(f_conjugate(make_fdiv(FDivFamily::GAIL), 1.0), DomainError);
  CHECK_THROWS_AS(make_fdiv(FDivFamily::ALPHA, 1.0), DomainError);

  struct Range {
    FDivFamily fam;
    double lo, hi;
  };
  for (const auto& r : {Range{FDivFamily::FAIRL, -5.0, 5.0}, Range{FDivFamily::AIRL, -10.0, -0.1},
                        Range{FDivFamily::GAIL, -5.0, 0.6}, Range{FDivFamily::ALPHA, -10.0, 1.8}}) {
    const auto s = make_fdiv(r.fam);
    double worst = 0.0;
    for (int i = 0; i < 100; ++i) {
      const double t = r.lo + (r.hi - r.lo) * (i + 0.5) / 100.0;
      worst = std::max(worst, std::abs(f_conjugate(s, t) - numeric_sup(s, t)));
    }
    CHECK(worst <= 1e-6);
  }
}

TEST_CASE("generators are convex with f(1) = 0, and the alpha family matches its 0.5 closed form") {
  for (auto fam : {FDivFamily::AIRL, FDivFamily::GAIL, FDivFamily::FAIRL, FDivFamily::ALPHA}) {
    const auto s = make_fdiv(fam);
    CHECK(std::abs(s.f(1.0)) <= 1e-15);
    for (double u = 0.05; u < 20.0; u *= 1.3) {
      const double h = 1e-3 * u;
      CHECK(s.f(u + h) + s.f(u - h) - 2.0 * s.f(u) >= -1e-12);
    }
  }
  const auto a = make_fdiv(FDivFamily::ALPHA, 0.5);
  for (double u : {0.1, 0.7, 2.0, 9.0}) CHECK(a.f(u) == doctest::Approx(2.0 * std::pow(std::sqrt(u) - 1.0, 2)));
  for (double t : {-3.0, 0.0, 1.5}) CHECK(a.f_star(t) == doctest::Approx(2.0 * t / (2.0 - t)));
}

TEST_CASE("f-GAN critic: gradient and variational tightness") {
  const auto v = v3();
  const PrefixTree tree(v, PromptDist::single({}), 3);
  const auto pe = policy_table(tree, random_policy(tree, 5), Granularity::StateAction);
  const auto pp = policy_table(tree, random_policy(tree, 6), Granularity::StateAction);
  for (auto fam : {FDivFamily::AIRL, FDivFamily::GAIL, FDivFamily::FAIRL, FDivFamily::ALPHA}) {
    const auto spec = make_fdiv(fam);
    Critic c = constant_critic(tree, Granularity::StateAction, spec.f_prime(1.0));
    Rng rng(static_cast<std::uint64_t>(fam));
    for (auto& [k, t] : c.values) t = spec.clamp(t + 0.2 * rng.normal() - 0.3);
    const auto fd = scalar_fd(
        [&](const DistTable& vals) {
          return fgan_critic_loss(Critic{Granularity::StateAction, vals}, pe, pp, spec).value;
        },
        c.values);
    CHECK(relative_error(fgan_critic_loss(c, pe, pp, spec).gradient, fd) <= 1e-5);

    Critic best{Granularity::StateAction, {}};
    for (const auto& [k, p] : pe) best.values[k] = spec.f_prime(p / pp.at(k));
    const auto at_best = fgan_critic_loss(best, pe, pp, spec);
    CHECK(std::abs(-at_best.value - occupancy::f_divergence(pe, pp, spec)) <= 1e-10);
    CHECK(at_best.clamp_count == 0);
    for (const auto& [k, row] : at_best.gradient) CHECK(std::abs(row[0]) <= 1e-12);
    for (int trial = 0; trial < 20; ++trial) {
      Critic moved = best;
      for (auto& [k, t] : moved.values) t = spec.clamp(t + 0.05 * rng.normal());
      CHECK(fgan_critic_loss(moved, pe, pp, spec).value >= at_best.value);
    }

    const auto fitted = maximize_critic(pe, pp, spec, Granularity::StateAction);
    CHECK(std::abs(fgan_critic_loss(fitted, pe, pp, spec).value - at_best.value) <= 1e-10);

    const auto same = constant_critic(tree, Granularity::StateAction, spec.f_prime(1.0));
    CHECK(std::abs(fgan_critic_loss(same, pe, pe, spec).value) <= 1e-12);
  }
  CHECK_THROWS_AS(maximize_critic({{"x", 1.0}}, {{"y", 1.0}}, make_fdiv(FDivFamily::GAIL), Granularity::StateAction),
                  DomainError);
  Critic bad{Granularity::StateAction, {}};
  for (const auto& [k, p] : pe) bad.values[k] = 5.0;
  CHECK(fgan_critic_loss(bad, pe, pp, make_fdiv(FDivFamily::AIRL)).clamp_count == pe.size());
}

TEST_CASE("f-GAN policy loss") {
  const auto v = v3();
  const PrefixTree tree(v, PromptDist::single({}), 3);
  const auto pi = random_policy(tree, 8);
  const auto spec = make_fdiv(FDivFamily::GAIL);
  const auto c = constant_critic(tree, Granularity::StateAction, -0.4);
  const double expected_len = occupancy::exact_occupancy(tree, pi).total();
  CHECK(fgan_policy_loss(tree, pi, c, spec).value == doctest::Approx(-spec.f_star(-0.4) * expected_len));

  for (bool normalized : {false, true}) {
    for (auto g : {Granularity::StateAction, Granularity::Trajectory}) {
      Critic rc = constant_critic(tree, g, 0.0);
      Rng rng(3);
      for (auto& [k, t] : rc.values) t = -0.5 + 0.3 * rng.normal();
      auto loss = [&](const TabularPolicy& p) { return fgan_policy_loss(tree, p, rc, spec, normalized); };
      const auto r = loss(pi);
      CHECK(fd_rel_error([&](const TabularPolicy& p) { return loss(p).value; }, pi, r.gradient) <= 1e-5);
      TabularPolicy stepped = pi;
      for (const auto& [k, gr] : r.gradient)
        for (std::size_t a = 0; a < gr.size(); ++a) stepped.logits().at(k)[a] -= 1e-3 * gr[a];
      CHECK(loss(stepped).value < r.value);
    }
  }
}

TEST_CASE("frozen-policy training converges the discriminator to D*") {
  const auto v = v3();
  const PrefixTree tree(v, PromptDist::single({}), 3);
  auto pi = random_policy(tree, 11, 0.5);
  const auto expert = random_policy(tree, 12, 0.5);
  const auto target = Target::from_policy(tree, expert);
  AdversarialSetup setup;
  auto state = initial_state(tree, setup);
  Schedule sch;
  sch.policy_steps = 0;
  sch.disc_steps = 100;
  sch.rounds = 50;
  sch.disc_step_size = 10.0;
  const auto hist = alternating_train(tree, pi, state, target, setup, sch);
  const auto star = optimal_discriminator(target.state_action, policy_table(tree, pi, Granularity::StateAction),
                                          Granularity::StateAction);
  double gap = 0.0;
  for (const auto& [k, l] : star.logits) gap = std::max(gap, std::abs(state.disc.output(k) - sigmoid(l)));
  CHECK(gap <= 1e-3);
  CHECK(hist.back().disc_gap == doctest::Approx(gap));
}

TEST_CASE("expert as initial policy is a fixed point for every objective") {
  const auto v = v3();
  const PrefixTree tree(v, PromptDist::single({}), 3);
  const auto expert = random_policy(tree, 13, 0.6);
  const auto target = Target::from_policy(tree, expert);
  for (auto obj : {AdvObjective::RKL, AdvObjective::JS, AdvObjective::FGAN}) {
    for (auto g : {Granularity::StateAction, Granularity::Trajectory}) {
      AdversarialSetup setup;
      setup.objective = obj;
      setup.granularity = g;
      setup.fdiv = make_fdiv(FDivFamily::GAIL);
      auto pi = expert;
      auto state = initial_state(tree, setup);
      Schedule sch;
      sch.rounds = 20;
      sch.disc_step_size = 5.0;
      const auto hist = alternating_train(tree, pi, state, target, setup, sch);
      for (const auto& h : hist) {
        CHECK(std::abs(h.fkl) <= 1e-6);
        CHECK(std::abs(h.rkl) <= 1e-6);
        CHECK(std::abs(h.policy_loss - hist.front().policy_loss) <= 1e-6);
        CHECK(std::abs(h.disc_loss - hist.front().disc_loss) <= 1e-6);
      }
    }
  }
}

TEST_CASE("alternating training is deterministic and guards against non-finite values") {
  const auto v = v3();
  const PrefixTree tree(v, PromptDist::single({}), 3);
  const auto target = Target::from_policy(tree, random_policy(tree, 14));
  AdversarialSetup setup;
  Schedule sch;
  sch.rounds = 5;
  auto run = [&] {
    auto pi = TabularPolicy::uniform(tree, ContextOrder::markov(1));
    auto st = initial_state(tree, setup);
    auto h = alternating_train(tree, pi, st, target, setup, sch);
    return std::make_pair(h.back().policy_loss, pi.logits());
  };
  CHECK(run() == run());

  auto pi = TabularPolicy::uniform(tree, ContextOrder::full());
  auto st = initial_state(tree, setup);
  st.disc.logits.begin()->second = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(alternating_train(tree, pi, st, target, setup, sch), NumericAbort);

  sch.rounds = 0;
  CHECK_THROWS_AS(alternating_train(tree, pi, st, target, setup, sch), DomainError);
}

TEST_CASE("sampled estimator agrees with the exact gradient") {
  const auto v = v3();
  const PrefixTree tree(v, PromptDist::single({}), 3);
  const auto pi = random_policy(tree, 15);
  const auto pe = policy_table(tree, random_policy(tree, 16), Granularity::Trajectory);
  const auto star = optimal_discriminator(pe, policy_table(tree, pi, Granularity::Trajectory), Granularity::Trajectory);
  const auto exact = policy_rkl_loss(tree, pi, star);
  const auto mc = sampled_policy_loss(
      pi, PromptDist::single({}), Granularity::Trajectory, [&](const std::string& k) { return -star.logits.at(k); },
      200000, 3);
  CHECK(mc.value == doctest::Approx(exact.value).epsilon(0.02));
  CHECK(cosine_similarity(mc.gradient, exact.gradient) >= 0.99);
}

TEST_CASE("serialization") {
  Discriminator d{Granularity::Trajectory, {{"|0.2", 0.1}, {"|2", -1.0 / 3.0}}};
  std::stringstream ss;
  save_discriminator(ss, d);
  const auto back = load_discriminator(ss);
  CHECK(back.granularity == Granularity::Trajectory);
  CHECK(back.logits == d.logits);

  std::ostringstream csv;
  write_history_csv(csv, {HistoryRow{0, 1.0, 2.0, 0.5, 0.25, 0.125, 0.0}});
  CHECK(csv.str() == "round,policy_loss,disc_loss,fkl,rkl,js,disc_gap\n0,1,2,0.5,0.25,0.125,0\n");
}
