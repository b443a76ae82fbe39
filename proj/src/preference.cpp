#include "align/preference.hpp"

#include <cmath>
#include <functional>
#include <istream>
#include <numeric>
#include <ostream>
#include <set>
#include <sstream>

#include "align/adversarial.hpp"
#include "align/errors.hpp"
#include "align/rng.hpp"

namespace align::preference {

using adversarial::sigmoid;
using adversarial::softplus;

std::string item_key(const std::string& prompt, const std::string& response) { return prompt + "|" + response; }

void BTGroundTruth::validate() const {
  for (const auto& [k, v] : variances)
    if (!(v > 0.0) || !std::isfinite(v)) throw DomainError("ground truth: variance must be positive at " + k);
  if (scores.size() != variances.size()) throw DomainError("ground truth: score/variance key spaces differ");
  for (const auto& [k, r] : scores)
    if (!variances.contains(k)) throw DomainError("ground truth: no variance for " + k);
}

double bt_win_prob_gauss(double s_a, double s_b, double var_a, double var_b) {
  if (!(var_a > 0.0) || !(var_b > 0.0)) throw DomainError("bt_win_prob_gauss: variances must be positive");
  return 0.5 + 0.5 * std::erf((s_a - s_b) / std::sqrt(2.0 * (var_a + var_b)));
}

double bt_win_prob_tanh(double r_a, double r_b, double v2_a, double v2_b) {
  if (!(v2_a > 0.0) || !(v2_b > 0.0)) throw DomainError("bt_win_prob_tanh: variances must be positive");
  return sigmoid((r_a - r_b) / std::sqrt(0.5 * (v2_a + v2_b)));
}

PrefDataset sample_pref_dataset(const BTGroundTruth& truth, const std::vector<Pairing>& pairing,
                                std::size_t n_per_pair, std::uint64_t seed, WinModel model) {
  truth.validate();
  Rng rng(seed);
  PrefDataset out;
  out.triples.reserve(pairing.size() * n_per_pair);
  for (const auto& p : pairing) {
    if (p.a == p.b) throw DomainError("sample_pref_dataset: pairing compares a response with itself");
    const auto ka = item_key(p.prompt, p.a);
    const auto kb = item_key(p.prompt, p.b);
    auto ra = truth.scores.find(ka), rb = truth.scores.find(kb);
    if (ra == truth.scores.end() || rb == truth.scores.end())
      throw KeyError("sample_pref_dataset: item missing from ground truth");
    const double va = truth.variances.at(ka), vb = truth.variances.at(kb);
    const double p_a = model == WinModel::Tanh ? bt_win_prob_tanh(ra->second, rb->second, va, vb)
                                               : bt_win_prob_gauss(ra->second, rb->second, va, vb);
    for (std::size_t i = 0; i < n_per_pair; ++i) {
      if (rng.bernoulli(p_a)) out.triples.push_back({p.prompt, p.a, p.b});
      else out.triples.push_back({p.prompt, p.b, p.a});
    }
  }
  return out;
}

namespace {

double inverse_softplus(double y) { return y > 30.0 ? y : std::log(std::expm1(y)); }

struct Comparison {
  std::string plus, minus;
  double weight;
};

std::vector<Comparison> aggregate(const PrefDataset& data) {
  std::map<std::pair<std::string, std::string>, double> counts;
  for (const auto& t : data.triples) {
    if (t.plus == t.minus) throw DomainError("preference triple compares a response with itself");
    counts[{t.plus_key(), t.minus_key()}] += 1.0;
  }
  std::vector<Comparison> out;
  for (const auto& [k, n] : counts) out.push_back({k.first, k.second, n});
  return out;
}

const std::vector<double>& row_of(const BTRewardModel& m, const std::string& key) {
  auto it = m.params().find(key);
  if (it == m.params().end()) throw KeyError("reward model: unknown item " + key);
  return it->second;
}

LossReport weighted_ce(const BTRewardModel& model, const std::vector<Comparison>& cmp, bool use_variance) {
  LossReport report;
  double total = 0.0;
  for (const auto& c : cmp) total += c.weight;
  if (!(total > 0.0)) throw DomainError("CE loss: empty preference dataset");
  for (const auto& c : cmp) {
    const auto& p = row_of(model, c.plus);
    const auto& q = row_of(model, c.minus);
    const double w = c.weight / total;
    const double dr = p[0] - q[0];
    auto& gp = report.gradient.try_emplace(c.plus, 2, 0.0).first->second;
    auto& gq = report.gradient.try_emplace(c.minus, 2, 0.0).first->second;
    if (!use_variance) {
      report.value += w * softplus(-dr);
      const double dm = -w * sigmoid(-dr);
      gp[0] += dm;
      gq[0] -= dm;
      continue;
    }
    const double vp = model.v_min() + softplus(p[1]);
    const double vq = model.v_min() + softplus(q[1]);
    const double s = std::sqrt(0.5 * (vp * vp + vq * vq));
    const double m = dr / s;
    report.value += w * softplus(-m);
    const double dm = -w * sigmoid(-m);
    gp[0] += dm / s;
    gq[0] -= dm / s;
    const double ds3 = 2.0 * s * s * s;
    gp[1] += dm * (-dr * vp / ds3) * sigmoid(p[1]);
    gq[1] += dm * (-dr * vq / ds3) * sigmoid(q[1]);
  }
  return report;
}

LossReport model_loss(const BTRewardModel& model, const std::vector<Comparison>& cmp) {
  return weighted_ce(model, cmp, !model.simplified());
}

std::map<std::string, std::string> component_labels(const std::vector<Comparison>& cmp) {
  std::map<std::string, std::string> parent;
  std::function<std::string(const std::string&)> find = [&](const std::string& k) -> std::string {
    auto& p = parent.try_emplace(k, k).first->second;
    if (p == k) return k;
    p = find(p);
    return p;
  };
  for (const auto& c : cmp) {
    const auto a = find(c.plus), b = find(c.minus);
    if (a != b) parent[std::max(a, b)] = std::min(a, b);
  }
  std::map<std::string, std::string> out;
  for (const auto& [k, p] : parent) out[k] = "component:" + find(k);
  return out;
}

}  // namespace

BTRewardModel::BTRewardModel(bool simplified, double v_min) : simplified_(simplified), v_min_(v_min) {
  if (!(v_min > 0.0) || !(v_min < 1.0)) throw DomainError("reward model: v_min must lie in (0, 1)");
}

BTRewardModel BTRewardModel::init(const std::vector<std::string>& keys, bool simplified, double v_min) {
  BTRewardModel m(simplified, v_min);
  for (const auto& k : keys) m.set(k, 0.0, 1.0);
  return m;
}

std::vector<std::string> BTRewardModel::keys() const {
  std::vector<std::string> out;
  for (const auto& [k, r] : params_) out.push_back(k);
  return out;
}

double BTRewardModel::R(const std::string& key) const { return row_of(*this, key)[0]; }

double BTRewardModel::V(const std::string& key) const {
  const auto& row = row_of(*this, key);
  return simplified_ ? 1.0 : v_min_ + softplus(row[1]);
}

void BTRewardModel::set(const std::string& key, double r, double v) {
  if (!(v > v_min_)) throw DomainError("reward model: V must exceed v_min at " + key);
  params_[key] = {r, inverse_softplus(v - v_min_)};
}

double margin(const BTRewardModel& model, const PrefTriple& t) {
  const auto kp = t.plus_key(), km = t.minus_key();
  const double vp = model.V(kp), vm = model.V(km);
  return (model.R(kp) - model.R(km)) / std::sqrt(0.5 * (vp * vp + vm * vm));
}

LossReport ce_loss_full(const BTRewardModel& model, const PrefDataset& data) {
  return weighted_ce(model, aggregate(data), true);
}

LossReport ce_loss_simplified(const BTRewardModel& model, const PrefDataset& data) {
  return weighted_ce(model, aggregate(data), false);
}

std::string to_string(Variant v) { return v == Variant::Full ? "full" : "simplified"; }

Variant parse_variant(const std::string& text) {
  if (text == "full" || text == "FULL") return Variant::Full;
  if (text == "simplified" || text == "SIMPLIFIED") return Variant::Simplified;
  throw ConfigError("unknown BT variant: " + text);
}

FitConfig::FitConfig() {
  optimizer.method = optim::Method::GD;
  optimizer.line_search = true;
  optimizer.step_size = 16.0;
  optimizer.max_iters = 20000;
  optimizer.grad_tol = 1e-8;
}

FitResult fit_reward_model(const PrefDataset& train, Variant variant, const FitConfig& config,
                           const PrefDataset* heldout) {
  const auto cmp = aggregate(train);
  if (cmp.empty()) throw DomainError("fit_reward_model: empty training set");
  std::set<std::string> items;
  for (const auto& c : cmp) {
    items.insert(c.plus);
    items.insert(c.minus);
  }
  const bool simplified = variant == Variant::Simplified;
  BTRewardModel model = BTRewardModel::init({items.begin(), items.end()}, simplified, config.v_min);

  auto objective = [&](const ParamTable& params) {
    BTRewardModel probe = model;
    probe.params() = params;
    auto r = model_loss(probe, cmp);
    return optim::Evaluation{r.value, std::move(r.gradient)};
  };
  const auto res = optim::optimize(objective, model.params(), config.optimizer);
  model.params() = res.params;

  if (!simplified) {
    double log_mean = 0.0;
    for (const auto& k : items) log_mean += std::log(model.V(k));
    const double scale = std::exp(log_mean / static_cast<double>(items.size()));
    for (const auto& k : items)
      model.set(k, model.R(k) / scale, std::max(model.V(k) / scale, config.v_min * (1.0 + 1e-12)));
  }
  auto labels = component_labels(cmp);
  std::map<std::string, std::string> component_domain;
  for (const auto& [k, d] : config.domains) {
    auto it = labels.find(k);
    if (it == labels.end()) continue;
    auto [slot, fresh] = component_domain.try_emplace(it->second, d);
    if (!fresh && slot->second != d)
      throw DomainError("fit_reward_model: domains '" + slot->second + "' and '" + d +
                        "' share a comparison component");
  }
  for (auto& [k, group] : labels)
    if (auto it = component_domain.find(group); it != component_domain.end()) group = "domain:" + it->second;
  std::map<std::string, std::pair<double, double>> sums;
  for (const auto& [k, d] : labels) {
    sums[d].first += model.R(k);
    sums[d].second += 1.0;
  }
  for (const auto& [k, d] : labels) model.params()[k][0] -= sums[d].first / sums[d].second;

  FitResult out{model, {}};
  out.report.train_ce = model_loss(model, cmp).value;
  out.report.converged = res.converged;
  out.report.iterations = res.iterations;
  if (heldout) out.report.heldout_ce = model_loss(model, aggregate(*heldout)).value;
  return out;
}

void online_update(BTRewardModel& model, const PrefTriple& t, double step_size) {
  if (!(step_size > 0.0)) throw DomainError("online_update: step size must be positive");
  const auto g = model_loss(model, {{t.plus_key(), t.minus_key(), 1.0}}).gradient;
  for (const auto& [k, row] : g) {
    auto& p = model.params().at(k);
    p[0] -= step_size * row[0];
    p[1] -= step_size * row[1];
  }
}

BTRewardModel fit_online(const PrefDataset& data, Variant variant, double step_size, double v_min) {
  BTRewardModel model(variant == Variant::Simplified, v_min);
  for (const auto& t : data.triples) {
    if (!model.contains(t.plus_key())) model.set(t.plus_key(), 0.0, 1.0);
    if (!model.contains(t.minus_key())) model.set(t.minus_key(), 0.0, 1.0);
    online_update(model, t, step_size);
  }
  return model;
}

double normalized_gap(const BTGroundTruth& truth, const std::string& i, const std::string& j) {
  return (truth.scores.at(i) - truth.scores.at(j)) / std::sqrt(0.5 * (truth.variances.at(i) + truth.variances.at(j)));
}

double normalized_gap(const BTRewardModel& model, const std::string& i, const std::string& j) {
  const double vi = model.V(i), vj = model.V(j);
  return (model.R(i) - model.R(j)) / std::sqrt(0.5 * (vi * vi + vj * vj));
}

double kendall_tau(const std::map<std::string, double>& a, const std::map<std::string, double>& b) {
  std::vector<std::pair<double, double>> v;
  for (const auto& [k, x] : a) {
    auto it = b.find(k);
    if (it == b.end()) throw KeyError("kendall_tau: key missing from second ranking: " + k);
    v.emplace_back(x, it->second);
  }
  if (v.size() < 2) throw DomainError("kendall_tau: need at least two items");
  auto sgn = [](double x) { return (x > 0.0) - (x < 0.0); };
  double s = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i)
    for (std::size_t j = i + 1; j < v.size(); ++j)
      s += sgn(v[i].first - v[j].first) * sgn(v[i].second - v[j].second);
  const double n = static_cast<double>(v.size());
  return s / (n * (n - 1.0) / 2.0);
}

std::map<std::string, double> score_table(const BTRewardModel& model) {
  std::map<std::string, double> out;
  for (const auto& [k, row] : model.params()) out[k] = row[0];
  return out;
}

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace

void write_pref_csv(std::ostream& out, const PrefDataset& data) {
  out << "prompt,winner,loser\n";
  for (const auto& t : data.triples) out << t.prompt << ',' << t.plus << ',' << t.minus << '\n';
}

PrefDataset read_pref_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != "prompt,winner,loser")
    throw ConfigError("preference CSV: expected header prompt,winner,loser");
  PrefDataset data;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto cells = split_csv(line);
    if (cells.size() != 3) throw ConfigError("preference CSV: line " + std::to_string(lineno) + " needs 3 columns");
    if (cells[1] == cells[2]) throw DomainError("preference CSV: winner equals loser on line " + std::to_string(lineno));
    data.triples.push_back({cells[0], cells[1], cells[2]});
  }
  return data;
}

void write_model_csv(std::ostream& out, const BTRewardModel& model) {
  out << "key,R,V\n";
  for (const auto& k : model.keys()) out << k << ',' << format_real(model.R(k)) << ',' << format_real(model.V(k)) << '\n';
}

BTRewardModel read_model_csv(std::istream& in, bool simplified, double v_min) {
  std::string line;
  if (!std::getline(in, line) || line != "key,R,V") throw ConfigError("model CSV: expected header key,R,V");
  BTRewardModel model(simplified, v_min);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto cells = split_csv(line);
    if (cells.size() != 3) throw ConfigError("model CSV: malformed row: " + line);
    model.set(cells[0], std::stod(cells[1]), simplified ? 1.0 : std::stod(cells[2]));
  }
  return model;
}

}  // namespace align::preference
