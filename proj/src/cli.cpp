#include "align/cli.hpp"

#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>

#include "align/checks.hpp"
#include "align/config.hpp"
#include "align/errors.hpp"
#include "align/experiment.hpp"
#include "align/preference.hpp"

namespace align {

namespace {

constexpr int kOk = 0;
constexpr int kFailed = 1;
constexpr int kConfigError = 2;
constexpr int kNumericAbort = 3;

// Writes to --out when given, else to `fallback`.
class Sink {
 public:
  Sink(const std::string& path, std::ostream& fallback) : stream_(&fallback) {
    if (path.empty()) return;
    file_.open(path);
    if (!file_) throw ConfigError("cannot open output file: " + path);
    stream_ = &file_;
  }
  std::ostream& get() { return *stream_; }

 private:
  std::ofstream file_;
  std::ostream* stream_;
};

void write_rounds_csv(std::ostream& out, const experiment::MetricsReport& r) {
  out << "round,loss,fkl,rkl,js,expected_reward,disc_gap";
  for (std::size_t i = 0; i < r.final.mode_mass.size(); ++i) out << ",mode_mass_" << i;
  out << '\n';
  for (const auto& m : r.rounds) {
    out << m.round << ',' << format_real(m.loss) << ',' << format_real(m.fkl) << ',' << format_real(m.rkl) << ','
        << format_real(m.js) << ',' << format_real(m.expected_reward) << ',' << format_real(m.disc_gap);
    for (double v : m.mode_mass) out << ',' << format_real(v);
    out << '\n';
  }
}

preference::PrefDataset read_prefs(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open preference data: " + path);
  return preference::read_pref_csv(in);
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Tabular distribution-matching alignment toolkit"};
  app.require_subcommand(1);

  std::string config_path, out_path, format = "json", data_path, heldout_path, variant = "full";
  std::optional<std::uint64_t> seed;
  std::vector<std::string> axes;
  std::size_t instances = 10, iterations = 50;

  auto* run = app.add_subcommand("run", "Run one experiment and write its MetricsReport");
  run->add_option("--config", config_path, "Config file")->required();
  run->add_option("--seed", seed, "Override run.seed");
  run->add_option("--out", out_path, "Output path (default stdout)");
  run->add_option("--format", format, "json or csv")->check(CLI::IsMember({"json", "csv"}));

  auto* sw = app.add_subcommand("sweep", "Run the Cartesian product of --axis values");
  sw->add_option("--config", config_path, "Base config file")->required();
  sw->add_option("--axis", axes, "KEY=V1,V2,... (repeatable)");
  sw->add_option("--seed", seed, "Override run.seed");
  sw->add_option("--out", out_path, "Output path (default stdout)");
  sw->add_option("--format", format, "csv or json")->check(CLI::IsMember({"json", "csv"}));

  auto* bt = app.add_subcommand("btfit", "Fit a Bradley-Terry reward model to preference CSV data");
  bt->add_option("--data", data_path, "Training CSV (prompt,winner,loser)")->required();
  bt->add_option("--heldout", heldout_path, "Held-out CSV (default: every 5th training row)");
  bt->add_option("--variant", variant, "full or simplified")->check(CLI::IsMember({"full", "simplified"}));
  bt->add_option("--out", out_path, "Model CSV path (default stdout)");
  bt->add_option("--format", format, "report format on stdout: json or csv")->check(CLI::IsMember({"json", "csv"}));

  auto* ck = app.add_subcommand("check", "Run the invariant suite and the position-weight audit");
  ck->add_option("--seed", seed, "Seed for random instances");
  ck->add_option("--out", out_path, "Report path (default stdout)");
  ck->add_option("--format", format, "json (full report) or csv (audit rows)")->check(CLI::IsMember({"json", "csv"}));
  ck->add_option("--instances", instances, "Audit instances");
  ck->add_option("--iterations", iterations, "Audit iterations per instance");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    std::ostringstream o, e2;
    const int code = app.exit(e, o, e2);
    out << o.str();
    err << e2.str();
    return code == 0 ? kOk : kConfigError;
  }

  try {
    config::Overrides ov;
    if (seed) ov.emplace_back("run.seed", std::to_string(*seed));

    if (*run) {
      const auto cfg = config::load_config(config_path, ov);
      const auto report = experiment::run_experiment(cfg);
      Sink sink(out_path, out);
      if (format == "csv") write_rounds_csv(sink.get(), report);
      else experiment::write_json(sink.get(), report);
      return kOk;
    }
    if (*sw) {
      const auto cfg = config::load_config(config_path, ov);
      std::vector<std::pair<std::string, std::vector<std::string>>> parsed;
      for (const auto& a : axes) parsed.push_back(config::parse_axis(a));
      const auto rows = experiment::sweep(cfg, parsed);
      Sink sink(out_path, out);
      if (format == "json" && !sw->get_option("--format")->empty()) {
        sink.get() << "[\n";
        for (std::size_t i = 0; i < rows.size(); ++i) {
          sink.get() << experiment::to_json(rows[i].report);
          if (i + 1 < rows.size()) sink.get() << ",\n";
        }
        sink.get() << "]\n";
      } else {
        experiment::write_sweep_csv(sink.get(), rows);
      }
      return kOk;
    }
    if (*bt) {
      auto train = read_prefs(data_path);
      preference::PrefDataset heldout;
      if (!heldout_path.empty()) {
        heldout = read_prefs(heldout_path);
      } else {
        preference::PrefDataset kept;
        for (std::size_t i = 0; i < train.triples.size(); ++i)
          (i % 5 == 4 ? heldout : kept).triples.push_back(train.triples[i]);
        train = std::move(kept);
      }
      const auto fit = preference::fit_reward_model(train, preference::parse_variant(variant), preference::FitConfig{},
                                                    heldout.triples.empty() ? nullptr : &heldout);
      Sink sink(out_path, out);
      preference::write_model_csv(sink.get(), fit.model);
      const auto& r = fit.report;
      const std::string held = r.heldout_ce ? format_real(*r.heldout_ce) : std::string("nan");
      if (format == "csv") {
        out << "variant,train_ce,heldout_ce,converged,iterations\n"
            << variant << ',' << format_real(r.train_ce) << ',' << held << ',' << (r.converged ? "true" : "false")
            << ',' << r.iterations << '\n';
      } else {
        out << "{\"variant\": \"" << variant << "\", \"train_ce\": " << format_real(r.train_ce)
            << ", \"heldout_ce\": " << (r.heldout_ce ? held : std::string("null"))
            << ", \"converged\": " << (r.converged ? "true" : "false") << ", \"iterations\": " << r.iterations
            << "}\n";
      }
      return kOk;
    }
    if (*ck) {
      const std::uint64_t s = seed.value_or(0);
      const auto inv = checks::run_invariants(s);
      const auto audit = checks::position_weight_audit(instances, iterations, s);
      bool ok = audit.exact_fd_error <= 1e-5;
      for (const auto& c : inv) {
        out << (c.passed ? "PASS " : "FAIL ") << c.name << " (measured " << c.measured << ", tol " << c.tolerance
            << ")\n";
        ok = ok && c.passed;
      }
      out << "audit: " << audit.rows.size() << " rows, mean cos(WFKL, exact) = " << audit.mean_cos_wfkl
          << ", mean cos(SFT, exact) = " << audit.mean_cos_sft << ", exact-gradient FD error = "
          << audit.exact_fd_error << '\n';
      if (!out_path.empty()) {
        Sink sink(out_path, out);
        if (format == "csv") checks::write_audit_csv(sink.get(), audit);
        else checks::write_check_json(sink.get(), inv, audit);
      }
      return ok ? kOk : kFailed;
    }
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const NumericAbort& e) {
    err << "numeric abort: " << e.what() << '\n';
    return kNumericAbort;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kFailed;
  }
  return kFailed;
}

}  // namespace align
