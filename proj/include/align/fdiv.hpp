#pragma once

#include <functional>
#include <string>

namespace align::adversarial {

enum class FDivFamily { AIRL, GAIL, FAIRL, ALPHA };

std::string to_string(FDivFamily family);
FDivFamily parse_family(const std::string& text);

/// A convex generator f on (0, inf) together with its convex conjugate
/// f*(t) = sup_u {u t - f(u)}, the conjugate's derivative (needed by critic
/// gradients), and the open interval on which f* is finite.
struct FDivSpec {
  FDivFamily family = FDivFamily::FAIRL;
  double alpha = 0.5;

  std::function<double(double)> f;
  std::function<double(double)> f_prime;
  std::function<double(double)> f_star;
  std::function<double(double)> f_star_prime;

  double domain_lo = 0.0;  // open bounds; +-inf when unbounded
  double domain_hi = 0.0;

  double f_at_zero = 0.0;     // lim_{u->0} f(u), may be +inf
  double slope_at_inf = 0.0;  // lim_{u->inf} f(u)/u, may be +inf

  bool in_domain(double t) const { return t > domain_lo && t < domain_hi; }
  /// Nearest point of the domain shrunk by `margin` on each finite side.
  double clamp(double t, double margin = 1e-9) const;
};

/// Closed forms:
///   AIRL  f = -log u,                          f*(t) = -1 - log(-t),          t < 0
///   GAIL  f = -(u+1) log((1+u)/2) + u log u,   f*(t) = -log(2 - e^t),         t < log 2
///   FAIRL f = u log u,                         f*(t) = exp(t - 1)
///   ALPHA f = (u^(1-a) - (1-a) u - a) / (a (a-1)),
///         f*(t) = ((1 - a t)^((a-1)/a) - 1) / (1 - a),  1 - a t > 0
/// ALPHA requires a not in {0, 1}.
FDivSpec make_fdiv(FDivFamily family, double alpha = 0.5);

/// f*(t); throws DomainError outside the conjugate domain.
double f_conjugate(const FDivSpec& spec, double t);

}  // namespace align::adversarial
