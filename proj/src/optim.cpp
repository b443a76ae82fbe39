#include "align/optim.hpp"

#include <algorithm>
#include <cmath>

#include "align/errors.hpp"

namespace align::optim {

std::string to_string(Method m) { return m == Method::GD ? "GD" : "ADAM"; }

Method parse_method(const std::string& text) {
  if (text == "GD" || text == "gd") return Method::GD;
  if (text == "ADAM" || text == "adam") return Method::ADAM;
  throw ConfigError("unknown optimizer method: " + text);
}

void OptimizerConfig::validate() const {
  if (!(step_size > 0.0)) throw ConfigError("optimizer: step_size must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
    throw ConfigError("optimizer: betas must lie in [0, 1)");
  if (!(epsilon > 0.0)) throw ConfigError("optimizer: epsilon must be positive");
  if (!(grad_tol > 0.0)) throw ConfigError("optimizer: grad_tol must be positive");
}

namespace {

double checked_norm(const Evaluation& ev, const ParamTable& params, std::size_t iter) {
  if (!std::isfinite(ev.value)) throw NumericAbort("optimizer: non-finite loss", iter);
  double s = 0.0;
  for (const auto& [key, row] : ev.gradient) {
    auto it = params.find(key);
    if (it == params.end()) throw KeyError("optimizer: gradient for unknown parameter row " + key);
    if (it->second.size() != row.size()) throw DomainError("optimizer: gradient row width mismatch at " + key);
    for (double g : row) {
      if (!std::isfinite(g)) throw NumericAbort("optimizer: non-finite gradient", iter);
      s += g * g;
    }
  }
  return std::sqrt(s);
}

void axpy(ParamTable& x, double a, const ParamTable& g) {
  for (const auto& [key, row] : g) {
    auto& xr = x.at(key);
    for (std::size_t i = 0; i < row.size(); ++i) xr[i] += a * row[i];
  }
}

}  // namespace

OptimResult optimize(const Objective& fn, ParamTable x0, const OptimizerConfig& cfg, const Observer& observer) {
  cfg.validate();
  OptimResult res;
  res.params = std::move(x0);
  Evaluation ev = fn(res.params);
  ParamTable m, v;
  double step = cfg.step_size;
  for (std::size_t iter = 0;; ++iter) {
    const double gnorm = checked_norm(ev, res.params, iter);
    TracePoint tp{iter, ev.value, gnorm};
    res.trace.push_back(tp);
    if (observer) observer(tp, res.params);
    res.value = ev.value;
    res.grad_norm = gnorm;
    res.iterations = iter;
    if (gnorm <= cfg.grad_tol) {
      res.converged = true;
      break;
    }
    if (iter == cfg.max_iters) break;

    if (cfg.method == Method::GD && cfg.line_search) {
      step = std::min(cfg.step_size, 2.0 * step);
      for (int tries = 0;; ++tries) {
        ParamTable trial = res.params;
        axpy(trial, -step, ev.gradient);
        Evaluation next = fn(trial);
        if ((std::isfinite(next.value) && next.value <= ev.value - 1e-4 * step * gnorm * gnorm) || tries == 60) {
          res.params = std::move(trial);
          ev = std::move(next);
          break;
        }
        step *= 0.5;
      }
      continue;
    }
    if (cfg.method == Method::GD) {
      axpy(res.params, -cfg.step_size, ev.gradient);
    } else {
      const double t = static_cast<double>(iter + 1);
      const double c1 = 1.0 - std::pow(cfg.beta1, t);
      const double c2 = 1.0 - std::pow(cfg.beta2, t);
      for (const auto& [key, g] : ev.gradient) {
        auto& mr = m.try_emplace(key, g.size(), 0.0).first->second;
        auto& vr = v.try_emplace(key, g.size(), 0.0).first->second;
        auto& xr = res.params.at(key);
        for (std::size_t i = 0; i < g.size(); ++i) {
          mr[i] = cfg.beta1 * mr[i] + (1.0 - cfg.beta1) * g[i];
          vr[i] = cfg.beta2 * vr[i] + (1.0 - cfg.beta2) * g[i] * g[i];
          xr[i] -= cfg.step_size * (mr[i] / c1) / (std::sqrt(vr[i] / c2) + cfg.epsilon);
        }
      }
    }
    ev = fn(res.params);
  }
  return res;
}

}  // namespace align::optim
