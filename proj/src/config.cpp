#include "align/config.hpp"

#include <array>
#include <cmath>
#include <fstream>
#include <functional>
#include <sstream>

#include <boost/algorithm/string.hpp>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "align/errors.hpp"

namespace align::config {

namespace {

const std::array<ObjectiveKind, 7> kObjectives = {ObjectiveKind::SFT,       ObjectiveKind::WFKL,
                                                  ObjectiveKind::TRAJ_FKL,  ObjectiveKind::EXACT_FKL,
                                                  ObjectiveKind::RKL_ADV,   ObjectiveKind::JS_ADV,
                                                  ObjectiveKind::FGAN};

std::string trim(std::string s) {
  boost::algorithm::trim(s);
  return s;
}

std::vector<std::string> split(const std::string& text, const char* sep) {
  std::vector<std::string> parts;
  boost::algorithm::split(parts, text, boost::algorithm::is_any_of(sep));
  for (auto& p : parts) p = trim(p);
  return parts;
}

std::vector<std::string> words(const std::string& text) {
  std::vector<std::string> out;
  for (auto& w : split(text, " \t"))
    if (!w.empty()) out.push_back(w);
  return out;
}

double to_real(const std::string& key, const std::string& text) {
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected a real number, got '" + text + "'");
  }
}

std::size_t to_count(const std::string& key, const std::string& text) {
  try {
    std::size_t used = 0;
    if (text.empty() || text[0] == '-') throw std::invalid_argument(text);
    const auto v = std::stoull(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return static_cast<std::size_t>(v);
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected a nonnegative integer, got '" + text + "'");
  }
}

bool to_bool(const std::string& key, const std::string& text) {
  const auto t = boost::algorithm::to_lower_copy(text);
  if (t == "true" || t == "1" || t == "yes") return true;
  if (t == "false" || t == "0" || t == "no") return false;
  throw ConfigError(key + ": expected true/false, got '" + text + "'");
}

std::string join_words(const std::vector<std::string>& w) { return boost::algorithm::join(w, " "); }

struct Field {
  const char* qualified;
  std::function<void(ExperimentConfig&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
  bool semantic = true;
};

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      {"scenario.kind", [](ExperimentConfig& c, const std::string& v) { c.scenario = v; },
       [](const ExperimentConfig& c) { return c.scenario; }},
      {"scenario.separation", [](ExperimentConfig& c, const std::string& v) { c.separation = to_real("scenario.separation", v); },
       [](const ExperimentConfig& c) { return format_real(c.separation); }},
      {"mdp.tokens", [](ExperimentConfig& c, const std::string& v) { c.tokens = split(v, ","); },
       [](const ExperimentConfig& c) { return boost::algorithm::join(c.tokens, ","); }},
      {"mdp.eos", [](ExperimentConfig& c, const std::string& v) { c.eos = v; },
       [](const ExperimentConfig& c) { return c.eos; }},
      {"mdp.mask", [](ExperimentConfig& c, const std::string& v) { c.mask = v; },
       [](const ExperimentConfig& c) { return c.mask; }},
      {"mdp.capacity", [](ExperimentConfig& c, const std::string& v) { c.capacity = to_count("mdp.capacity", v); },
       [](const ExperimentConfig& c) { return std::to_string(c.capacity); }},
      {"mdp.prompts",
       [](ExperimentConfig& c, const std::string& v) {
         c.prompts.clear();
         for (const auto& item : split(v, ";")) {
           if (item.empty()) continue;
           const auto at = item.rfind('@');
           if (at == std::string::npos) throw ConfigError("mdp.prompts: entry '" + item + "' lacks '@ prob'");
           c.prompts.emplace_back(words(item.substr(0, at)), to_real("mdp.prompts", trim(item.substr(at + 1))));
         }
       },
       [](const ExperimentConfig& c) {
         std::vector<std::string> items;
         for (const auto& [p, w] : c.prompts) items.push_back(trim(join_words(p) + " @ " + format_real(w)));
         return boost::algorithm::join(items, "; ");
       }},
      {"mdp.budget", [](ExperimentConfig& c, const std::string& v) { c.budget = to_count("mdp.budget", v); },
       [](const ExperimentConfig& c) { return std::to_string(c.budget); }},
      {"expert.temperature",
       [](ExperimentConfig& c, const std::string& v) { c.temperature = to_real("expert.temperature", v); },
       [](const ExperimentConfig& c) { return format_real(c.temperature); }},
      {"expert.rewards",
       [](ExperimentConfig& c, const std::string& v) {
         c.rewards.clear();
         for (const auto& item : split(v, ";")) {
           if (item.empty()) continue;
           const auto eq = item.rfind('=');
           if (eq == std::string::npos) throw ConfigError("expert.rewards: entry '" + item + "' lacks '= value'");
           c.rewards.emplace_back(parse_symbol_pair(item.substr(0, eq)),
                                  to_real("expert.rewards", trim(item.substr(eq + 1))));
         }
       },
       [](const ExperimentConfig& c) {
         std::vector<std::string> items;
         for (const auto& [p, r] : c.rewards) items.push_back(format_symbol_pair(p) + " = " + format_real(r));
         return boost::algorithm::join(items, "; ");
       }},
      {"policy.order",
       [](ExperimentConfig& c, const std::string& v) {
         try {
           c.order = policy::ContextOrder::parse(v);
         } catch (const std::exception& e) {
           throw ConfigError(std::string("policy.order: ") + e.what());
         }
       },
       [](const ExperimentConfig& c) { return c.order.to_string(); }},
      {"policy.init_scale", [](ExperimentConfig& c, const std::string& v) { c.init_scale = to_real("policy.init_scale", v); },
       [](const ExperimentConfig& c) { return format_real(c.init_scale); }},
      {"train.fgan_family",
       [](ExperimentConfig& c, const std::string& v) {
         try {
           c.family = adversarial::parse_family(v);
         } catch (const std::exception& e) {
           throw ConfigError(std::string("train.fgan_family: ") + e.what());
         }
       },
       [](const ExperimentConfig& c) { return adversarial::to_string(c.family); }},
      {"train.objective",
       [](ExperimentConfig& c, const std::string& v) {
         const auto open = v.find('(');
         if (open != std::string::npos && v.back() == ')') {
           c.objective = parse_objective(v.substr(0, open));
           if (c.objective != ObjectiveKind::FGAN) throw ConfigError("train.objective: only FGAN takes a family");
           try {
             c.family = adversarial::parse_family(v.substr(open + 1, v.size() - open - 2));
           } catch (const std::exception& e) {
             throw ConfigError(std::string("train.objective: ") + e.what());
           }
         } else {
           c.objective = parse_objective(v);
         }
       },
       [](const ExperimentConfig& c) { return to_string(c.objective); }},
      {"train.alpha", [](ExperimentConfig& c, const std::string& v) { c.alpha = to_real("train.alpha", v); },
       [](const ExperimentConfig& c) { return format_real(c.alpha); }},
      {"train.granularity",
       [](ExperimentConfig& c, const std::string& v) { c.granularity = adversarial::parse_granularity(v); },
       [](const ExperimentConfig& c) { return adversarial::to_string(c.granularity); }},
      {"train.dataset",
       [](ExperimentConfig& c, const std::string& v) {
         if (boost::algorithm::to_upper_copy(v) == "EXACT") c.dataset_size.reset();
         else c.dataset_size = to_count("train.dataset", v);
       },
       [](const ExperimentConfig& c) { return c.dataset_size ? std::to_string(*c.dataset_size) : std::string("EXACT"); }},
      {"train.method", [](ExperimentConfig& c, const std::string& v) { c.optimizer.method = optim::parse_method(v); },
       [](const ExperimentConfig& c) { return optim::to_string(c.optimizer.method); }},
      {"train.step_size",
       [](ExperimentConfig& c, const std::string& v) { c.optimizer.step_size = to_real("train.step_size", v); },
       [](const ExperimentConfig& c) { return format_real(c.optimizer.step_size); }},
      {"train.beta1", [](ExperimentConfig& c, const std::string& v) { c.optimizer.beta1 = to_real("train.beta1", v); },
       [](const ExperimentConfig& c) { return format_real(c.optimizer.beta1); }},
      {"train.beta2", [](ExperimentConfig& c, const std::string& v) { c.optimizer.beta2 = to_real("train.beta2", v); },
       [](const ExperimentConfig& c) { return format_real(c.optimizer.beta2); }},
      {"train.epsilon",
       [](ExperimentConfig& c, const std::string& v) { c.optimizer.epsilon = to_real("train.epsilon", v); },
       [](const ExperimentConfig& c) { return format_real(c.optimizer.epsilon); }},
      {"train.max_iters",
       [](ExperimentConfig& c, const std::string& v) { c.optimizer.max_iters = to_count("train.max_iters", v); },
       [](const ExperimentConfig& c) { return std::to_string(c.optimizer.max_iters); }},
      {"train.grad_tol",
       [](ExperimentConfig& c, const std::string& v) { c.optimizer.grad_tol = to_real("train.grad_tol", v); },
       [](const ExperimentConfig& c) { return format_real(c.optimizer.grad_tol); }},
      {"train.line_search",
       [](ExperimentConfig& c, const std::string& v) { c.optimizer.line_search = to_bool("train.line_search", v); },
       [](const ExperimentConfig& c) { return std::string(c.optimizer.line_search ? "true" : "false"); }},
      {"train.match_step_size",
       [](ExperimentConfig& c, const std::string& v) { c.match_step_size = to_bool("train.match_step_size", v); },
       [](const ExperimentConfig& c) { return std::string(c.match_step_size ? "true" : "false"); }},
      {"adversarial.disc_steps",
       [](ExperimentConfig& c, const std::string& v) { c.schedule.disc_steps = to_count("adversarial.disc_steps", v); },
       [](const ExperimentConfig& c) { return std::to_string(c.schedule.disc_steps); }},
      {"adversarial.policy_steps",
       [](ExperimentConfig& c, const std::string& v) { c.schedule.policy_steps = to_count("adversarial.policy_steps", v); },
       [](const ExperimentConfig& c) { return std::to_string(c.schedule.policy_steps); }},
      {"adversarial.rounds",
       [](ExperimentConfig& c, const std::string& v) { c.schedule.rounds = to_count("adversarial.rounds", v); },
       [](const ExperimentConfig& c) { return std::to_string(c.schedule.rounds); }},
      {"adversarial.disc_step_size",
       [](ExperimentConfig& c, const std::string& v) {
         c.schedule.disc_step_size = to_real("adversarial.disc_step_size", v);
       },
       [](const ExperimentConfig& c) { return format_real(c.schedule.disc_step_size); }},
      {"adversarial.policy_step_size",
       [](ExperimentConfig& c, const std::string& v) {
         c.schedule.policy_step_size = to_real("adversarial.policy_step_size", v);
       },
       [](const ExperimentConfig& c) { return format_real(c.schedule.policy_step_size); }},
      {"run.seed", [](ExperimentConfig& c, const std::string& v) { c.seed = to_count("run.seed", v); },
       [](const ExperimentConfig& c) { return std::to_string(c.seed); }, false},
      {"run.modes",
       [](ExperimentConfig& c, const std::string& v) {
         c.modes.clear();
         for (const auto& item : split(v, ";"))
           if (!item.empty()) c.modes.push_back(parse_symbol_pair(item));
       },
       [](const ExperimentConfig& c) {
         std::vector<std::string> items;
         for (const auto& m : c.modes) items.push_back(format_symbol_pair(m));
         return boost::algorithm::join(items, "; ");
       }},
      {"run.report_every",
       [](ExperimentConfig& c, const std::string& v) { c.report_every = to_count("run.report_every", v); },
       [](const ExperimentConfig& c) { return std::to_string(c.report_every); }, false},
  };
  return table;
}

const Field& field(const std::string& qualified) {
  for (const auto& f : fields())
    if (qualified == f.qualified) return f;
  throw ConfigError("unknown config key: " + qualified);
}

void validate(const ExperimentConfig& cfg) {
  (void)build_scenario(cfg);
  try {
    cfg.optimizer.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("train: ") + e.what());
  }
  if (cfg.dataset_size && *cfg.dataset_size == 0) throw ConfigError("train.dataset: N must be >= 1 or EXACT");
  if (cfg.objective == ObjectiveKind::FGAN && cfg.family == adversarial::FDivFamily::ALPHA &&
      (cfg.alpha == 0.0 || cfg.alpha == 1.0))
    throw ConfigError("train.alpha: must not be 0 or 1");
  if (!(cfg.init_scale >= 0.0)) throw ConfigError("policy.init_scale: must be >= 0");
  if (cfg.schedule.rounds == 0 || cfg.schedule.disc_steps == 0)
    throw ConfigError("adversarial: rounds and disc_steps must be positive");
  if (!(cfg.schedule.disc_step_size > 0.0) || !(cfg.schedule.policy_step_size > 0.0))
    throw ConfigError("adversarial: step sizes must be positive");
  if (cfg.report_every == 0) throw ConfigError("run.report_every: must be positive");
}

}  // namespace

std::string to_string(ObjectiveKind kind) {
  switch (kind) {
    case ObjectiveKind::SFT: return "SFT";
    case ObjectiveKind::WFKL: return "WFKL";
    case ObjectiveKind::TRAJ_FKL: return "TRAJ_FKL";
    case ObjectiveKind::EXACT_FKL: return "EXACT_FKL";
    case ObjectiveKind::RKL_ADV: return "RKL_ADV";
    case ObjectiveKind::JS_ADV: return "JS_ADV";
    case ObjectiveKind::FGAN: return "FGAN";
  }
  return "?";
}

ObjectiveKind parse_objective(const std::string& text) {
  const auto up = boost::algorithm::to_upper_copy(trim(text));
  for (auto k : kObjectives)
    if (to_string(k) == up) return k;
  throw ConfigError("unknown objective kind: " + text);
}

const std::vector<ObjectiveKind>& all_objectives() {
  static const std::vector<ObjectiveKind> v(kObjectives.begin(), kObjectives.end());
  return v;
}

SymbolPair parse_symbol_pair(const std::string& text) {
  const auto bar = text.find('|');
  if (bar == std::string::npos) throw ConfigError("expected 'prompt | response', got '" + text + "'");
  SymbolPair p{words(text.substr(0, bar)), words(text.substr(bar + 1))};
  if (p.response.empty()) throw ConfigError("empty response in '" + text + "'");
  return p;
}

std::string format_symbol_pair(const SymbolPair& p) {
  return trim(join_words(p.prompt) + " | " + join_words(p.response));
}

ExperimentConfig build_bimodal_scenario(double separation, double tau, policy::ContextOrder order) {
  if (!(separation > 0.0)) throw DomainError("build_bimodal_scenario: separation must be positive");
  if (!(tau > 0.0)) throw DomainError("build_bimodal_scenario: tau must be positive");
  ExperimentConfig c;
  c.scenario = "bimodal";
  c.separation = separation;
  c.tokens = {"a", "b", "EOS", "MASK"};
  c.eos = "EOS";
  c.mask = "MASK";
  c.capacity = 3;
  c.prompts = {{{}, 1.0}};
  c.temperature = tau;
  const SymbolPair aa{{}, {"a", "a", "EOS"}}, bb{{}, {"b", "b", "EOS"}};
  c.rewards = {{aa, separation}, {bb, separation}};
  c.modes = {aa, bb};
  c.order = order;
  return c;
}

Scenario build_scenario(const ExperimentConfig& cfg) {
  Scenario s;
  auto ids = [&](const std::vector<std::string>& syms, const std::string& where) {
    mdp::TokenSeq out;
    for (const auto& sym : syms) {
      try {
        out.push_back(s.vocab.id_of(sym));
      } catch (const std::exception&) {
        throw ConfigError(where + ": unknown token '" + sym + "'");
      }
    }
    return out;
  };
  try {
    s.vocab = mdp::Vocab::from_symbols(cfg.tokens, cfg.eos, cfg.mask);
  } catch (const std::exception& e) {
    throw ConfigError(std::string("mdp.tokens: ") + e.what());
  }
  if (cfg.capacity == 0) throw ConfigError("mdp.capacity: must be >= 1");
  s.capacity = cfg.capacity;
  for (const auto& [p, w] : cfg.prompts) {
    s.prompts.prompts.push_back(ids(p, "mdp.prompts"));
    s.prompts.probs.push_back(w);
  }
  try {
    s.prompts.validate(s.vocab);
  } catch (const std::exception& e) {
    throw ConfigError(std::string("mdp.prompts: ") + e.what());
  }
  if (!(cfg.temperature > 0.0)) throw ConfigError("expert.temperature: must be positive");
  s.expert.temperature = cfg.temperature;
  auto trajectory = [&](const SymbolPair& p, const std::string& where) {
    mdp::Trajectory t{ids(p.prompt, where), ids(p.response, where)};
    try {
      mdp::validate_trajectory(s.vocab, t, s.capacity);
    } catch (const std::exception& e) {
      throw ConfigError(where + ": " + e.what());
    }
    return t;
  };
  try {
    for (const auto& prompt : s.prompts.prompts)
      for (const auto& t : mdp::enumerate_trajectories(s.vocab, prompt, s.capacity, cfg.budget))
        s.expert.hidden_reward.table[mdp::trajectory_key(t)] = 0.0;
  } catch (const BudgetError& e) {
    throw ConfigError(std::string("mdp.budget: ") + e.what());
  }
  for (const auto& [p, r] : cfg.rewards) {
    const auto key = mdp::trajectory_key(trajectory(p, "expert.rewards"));
    if (!s.expert.hidden_reward.table.contains(key))
      throw ConfigError("expert.rewards: '" + format_symbol_pair(p) + "' does not start from a configured prompt");
    if (!std::isfinite(r)) throw ConfigError("expert.rewards: non-finite reward");
    s.expert.hidden_reward.table[key] = r;
  }
  for (const auto& m : cfg.modes) s.modes.push_back(trajectory(m, "run.modes"));
  return s;
}

std::string resolve_key(const std::string& key) {
  if (key.find('.') != std::string::npos) return field(key).qualified;
  const Field* hit = nullptr;
  for (const auto& f : fields()) {
    const std::string q = f.qualified;
    if (q.substr(q.find('.') + 1) == key) {
      if (hit) throw ConfigError("ambiguous config key: " + key);
      hit = &f;
    }
  }
  if (!hit) throw ConfigError("unknown config key: " + key);
  return hit->qualified;
}

ExperimentConfig parse_config(std::istream& in, const Overrides& overrides) {
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::ini_parser::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError(std::string("config syntax: ") + e.what());
  }
  std::map<std::string, std::string> flat;
  for (const auto& [section, body] : tree) {
    if (body.empty()) throw ConfigError("config: top-level key outside a section: " + section);
    for (const auto& [key, value] : body) {
      const auto q = section + "." + key;
      field(q);
      flat[q] = trim(value.data());
    }
  }
  for (const auto& [key, value] : overrides) {
    const auto q = resolve_key(key);
    flat[q] = trim(value);
  }

  ExperimentConfig cfg;
  auto get = [&](const std::string& q) -> std::optional<std::string> {
    auto it = flat.find(q);
    if (it == flat.end()) return std::nullopt;
    return it->second;
  };
  const auto kind = get("scenario.kind").value_or("custom");
  if (kind == "bimodal") {
    const double sep = to_real("scenario.separation", get("scenario.separation").value_or("3"));
    const double tau = to_real("expert.temperature", get("expert.temperature").value_or("1"));
    ExperimentConfig probe;
    if (auto o = get("policy.order")) field("policy.order").set(probe, *o);
    try {
      cfg = build_bimodal_scenario(sep, tau, probe.order);
    } catch (const DomainError& e) {
      throw ConfigError(std::string("scenario: ") + e.what());
    }
  } else if (kind != "custom") {
    throw ConfigError("scenario.kind: expected custom or bimodal, got '" + kind + "'");
  }
  for (const auto& f : fields()) {
    if (auto v = get(f.qualified)) f.set(cfg, *v);
  }
  validate(cfg);
  return cfg;
}

ExperimentConfig load_config(const std::string& path, const Overrides& overrides) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  return parse_config(in, overrides);
}

std::string to_ini(const ExperimentConfig& cfg) {
  std::ostringstream out;
  std::string section;
  for (const auto& f : fields()) {
    const std::string q = f.qualified;
    const auto dot = q.find('.');
    if (q.substr(0, dot) != section) {
      if (!section.empty()) out << '\n';
      section = q.substr(0, dot);
      out << '[' << section << "]\n";
    }
    out << q.substr(dot + 1) << " = " << f.get(cfg) << '\n';
  }
  return out.str();
}

std::string config_hash(const ExperimentConfig& cfg) {
  std::string text;
  for (const auto& f : fields()) {
    if (!f.semantic) continue;
    text += f.qualified;
    text += '=';
    text += f.get(cfg);
    text += '\n';
  }
  return hex64(fnv1a64(text));
}

std::pair<std::string, std::vector<std::string>> parse_axis(const std::string& text) {
  const auto eq = text.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("--axis expects KEY=V1,V2,..., got '" + text + "'");
  auto values = split(text.substr(eq + 1), ",");
  for (const auto& v : values)
    if (v.empty()) throw ConfigError("--axis: empty value in '" + text + "'");
  return {resolve_key(trim(text.substr(0, eq))), values};
}

}  // namespace align::config
