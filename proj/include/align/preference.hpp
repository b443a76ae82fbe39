#pragma once

// Bradley-Terry reward modeling with per-response performance variances:
// win probabilities, synthetic preference data, the variance-normalized and
// simplified cross-entropy losses, and fitting.
//
// Items are addressed by "prompt|response" keys; prompts and responses are
// opaque strings (token-id lists in the CLI's CSV files).

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "align/objectives.hpp"
#include "align/optim.hpp"

namespace align::preference {

using objectives::LossReport;

std::string item_key(const std::string& prompt, const std::string& response);

struct BTGroundTruth {
  std::map<std::string, double> scores;     // r
  std::map<std::string, double> variances;  // v^2 > 0
  std::map<std::string, std::string> domains;

  void validate() const;
};

struct PrefTriple {
  std::string prompt;
  std::string plus;
  std::string minus;

  std::string plus_key() const { return item_key(prompt, plus); }
  std::string minus_key() const { return item_key(prompt, minus); }
  auto operator<=>(const PrefTriple&) const = default;
};

struct PrefDataset {
  std::vector<PrefTriple> triples;
};

struct Pairing {
  std::string prompt;
  std::string a;
  std::string b;
};

/// 1/2 + 1/2 erf((S_A - S_B) / sqrt(2 (var_A + var_B))).
double bt_win_prob_gauss(double s_a, double s_b, double var_a, double var_b);
/// 1/2 + 1/2 tanh((r_A - r_B) / sqrt(2 (v2_A + v2_B))), which is
/// sigmoid((r_A - r_B) / sqrt((v2_A + v2_B) / 2)).
double bt_win_prob_tanh(double r_a, double r_b, double v2_a, double v2_b);

enum class WinModel { Tanh, Gauss };

/// n_per_pair labelled comparisons per pairing, one seeded stream, pairings
/// in order.
PrefDataset sample_pref_dataset(const BTGroundTruth& truth, const std::vector<Pairing>& pairing,
                                std::size_t n_per_pair, std::uint64_t seed, WinModel model = WinModel::Tanh);

inline constexpr double kDefaultVMin = 1e-3;

/// R and V tables; V = v_min + softplus(w) is stored through its raw
/// parameter w.
class BTRewardModel {
 public:
  explicit BTRewardModel(bool simplified = false, double v_min = kDefaultVMin);

  /// R = 0, V = 1 for every key.
  static BTRewardModel init(const std::vector<std::string>& keys, bool simplified = false,
                            double v_min = kDefaultVMin);

  bool simplified() const { return simplified_; }
  double v_min() const { return v_min_; }
  bool contains(const std::string& key) const { return params_.contains(key); }
  std::vector<std::string> keys() const;

  double R(const std::string& key) const;
  /// 1 for simplified models.
  double V(const std::string& key) const;
  void set(const std::string& key, double r, double v);

  /// Rows [R, w] per key; gradients from the CE losses share this layout.
  const ParamTable& params() const { return params_; }
  ParamTable& params() { return params_; }

 private:
  bool simplified_;
  double v_min_;
  ParamTable params_;
};

/// (R(y+) - R(y-)) / sqrt((V(y+)^2 + V(y-)^2) / 2).
double margin(const BTRewardModel& model, const PrefTriple& t);

/// Mean softplus(-margin) with the [dR, dw] gradient. KeyError on unknown items.
LossReport ce_loss_full(const BTRewardModel& model, const PrefDataset& data);
/// Mean softplus(-(R(y+) - R(y-))); gradient rows carry 0 in the w slot.
LossReport ce_loss_simplified(const BTRewardModel& model, const PrefDataset& data);

enum class Variant { Full, Simplified };

std::string to_string(Variant v);
Variant parse_variant(const std::string& text);

struct FitConfig {
  optim::OptimizerConfig optimizer;
  double v_min = kDefaultVMin;
  /// Centering groups. A labelled item puts its whole connected component of
  /// the comparison graph into that domain (components with two labels are a
  /// DomainError); unlabelled components are centered on their own.
  std::map<std::string, std::string> domains;

  FitConfig();
};

struct FitReport {
  double train_ce = 0.0;
  std::optional<double> heldout_ce;
  bool converged = false;
  std::size_t iterations = 0;
};

struct FitResult {
  BTRewardModel model;
  FitReport report;
};

/// Fits R (and V for FULL) by minimizing the mean CE on `train`, then
/// normalizes: FULL rescales R and V jointly so the geometric mean of V is 1,
/// and R is centered to mean 0 per domain. Non-convergence is reported, not thrown.
FitResult fit_reward_model(const PrefDataset& train, Variant variant, const FitConfig& config,
                           const PrefDataset* heldout = nullptr);

/// One gradient step on a single triple (sequential/online mode).
void online_update(BTRewardModel& model, const PrefTriple& t, double step_size);
/// Starts from R = 0, V = 1 and applies online_update to each triple in order.
BTRewardModel fit_online(const PrefDataset& data, Variant variant, double step_size,
                         double v_min = kDefaultVMin);

/// (r_i - r_j) / sqrt((v_i^2 + v_j^2) / 2) from a ground truth and from a model.
double normalized_gap(const BTGroundTruth& truth, const std::string& i, const std::string& j);
double normalized_gap(const BTRewardModel& model, const std::string& i, const std::string& j);

/// Kendall tau-a over the keys of `a` (all must be present in `b`).
double kendall_tau(const std::map<std::string, double>& a, const std::map<std::string, double>& b);
std::map<std::string, double> score_table(const BTRewardModel& model);

/// CSV "prompt,winner,loser".
void write_pref_csv(std::ostream& out, const PrefDataset& data);
PrefDataset read_pref_csv(std::istream& in);
/// CSV "key,R,V".
void write_model_csv(std::ostream& out, const BTRewardModel& model);
BTRewardModel read_model_csv(std::istream& in, bool simplified = false, double v_min = kDefaultVMin);

}  // namespace align::preference
