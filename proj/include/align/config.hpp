#pragma once

// Experiment configuration: an INI-style file with one section per module,
// parsed into ExperimentConfig. configs/SCHEMA.md documents every key.

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "align/adversarial.hpp"
#include "align/fdiv.hpp"
#include "align/optim.hpp"
#include "align/policy.hpp"

namespace align::config {

enum class ObjectiveKind { SFT, WFKL, TRAJ_FKL, EXACT_FKL, RKL_ADV, JS_ADV, FGAN };

std::string to_string(ObjectiveKind kind);
ObjectiveKind parse_objective(const std::string& text);
const std::vector<ObjectiveKind>& all_objectives();

/// A (prompt, response) pair written with vocabulary symbols separated by
/// spaces, "prompt | response"; the prompt part may be empty.
struct SymbolPair {
  std::vector<std::string> prompt;
  std::vector<std::string> response;
  bool operator==(const SymbolPair&) const = default;
};

struct ExperimentConfig {
  std::string scenario = "custom";
  double separation = 3.0;  // bimodal scenario only

  std::vector<std::string> tokens{"a", "b", "EOS", "MASK"};
  std::string eos = "EOS";
  std::string mask = "MASK";
  std::size_t capacity = 3;
  std::vector<std::pair<std::vector<std::string>, double>> prompts{{{}, 1.0}};
  std::size_t budget = 200000;

  double temperature = 1.0;
  /// Unlisted trajectories get reward 0.
  std::vector<std::pair<SymbolPair, double>> rewards;

  policy::ContextOrder order = policy::ContextOrder::full();
  double init_scale = 0.0;

  ObjectiveKind objective = ObjectiveKind::SFT;
  adversarial::FDivFamily family = adversarial::FDivFamily::FAIRL;
  double alpha = 0.5;
  adversarial::Granularity granularity = adversarial::Granularity::StateAction;
  /// nullopt: train against the exact expert distributions.
  std::optional<std::size_t> dataset_size;
  optim::OptimizerConfig optimizer;
  /// TRAJ_FKL only: rescale step size and tolerance by N_traj / N_steps so
  /// iterates follow the SFT path.
  bool match_step_size = true;

  adversarial::Schedule schedule;

  std::uint64_t seed = 0;
  std::vector<SymbolPair> modes;
  std::size_t report_every = 10;

  bool operator==(const ExperimentConfig&) const = default;
};

/// Bimodal expert: vocab {a, b, EOS}, capacity 3, empty prompt, reward
/// `separation` on "a a EOS" and "b b EOS" (the two designated modes) and 0
/// elsewhere. Throws DomainError unless separation > 0 and tau > 0.
ExperimentConfig build_bimodal_scenario(double separation, double tau, policy::ContextOrder order);

/// The MDP, expert and modes a configuration describes.
struct Scenario {
  mdp::Vocab vocab;
  mdp::PromptDist prompts;
  std::size_t capacity = 1;
  policy::ExpertSpec expert;
  std::vector<mdp::Trajectory> modes;
};

/// Resolves symbols and fills unlisted rewards with 0. Throws ConfigError.
Scenario build_scenario(const ExperimentConfig& cfg);

using Overrides = std::vector<std::pair<std::string, std::string>>;

/// Reads the INI text, applies "section.key" (or bare key) overrides, and
/// validates. Throws ConfigError with the offending key on any problem.
ExperimentConfig parse_config(std::istream& in, const Overrides& overrides = {});
ExperimentConfig load_config(const std::string& path, const Overrides& overrides = {});

/// Canonical INI text: every key of every section in schema order.
std::string to_ini(const ExperimentConfig& cfg);

/// FNV-1a over the canonical text of every semantic field; the seed and
/// reporting cadence are excluded.
std::string config_hash(const ExperimentConfig& cfg);

/// Fully qualified "section.key" for a bare or qualified key; ConfigError if unknown.
std::string resolve_key(const std::string& key);

/// "KEY=V1,V2,..." -> (KEY, [V1, V2, ...]).
std::pair<std::string, std::vector<std::string>> parse_axis(const std::string& text);

SymbolPair parse_symbol_pair(const std::string& text);
std::string format_symbol_pair(const SymbolPair& p);

}  // namespace align::config
