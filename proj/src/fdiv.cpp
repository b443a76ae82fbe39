#include "align/fdiv.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>

#include "align/errors.hpp"

namespace align::adversarial {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();

double xlogx(double u) { return u > 0.0 ? u * std::log(u) : 0.0; }
}  // namespace

std::string to_string(FDivFamily family) {
  switch (family) {
    case FDivFamily::AIRL: return "AIRL";
    case FDivFamily::GAIL: return "GAIL";
    case FDivFamily::FAIRL: return "FAIRL";
    case FDivFamily::ALPHA: return "ALPHA";
  }
  return "?";
}

FDivFamily parse_family(const std::string& text) {
  std::string t = text;
  std::transform(t.begin(), t.end(), t.begin(), [](unsigned char c) { return std::toupper(c); });
  if (t == "AIRL") return FDivFamily::AIRL;
  if (t == "GAIL") return FDivFamily::GAIL;
  if (t == "FAIRL") return FDivFamily::FAIRL;
  if (t == "ALPHA" || t == "ALPHA-IRL") return FDivFamily::ALPHA;
  throw DomainError("unknown f-divergence family '" + text + "'");
}

double FDivSpec::clamp(double t, double margin) const {
  const double lo = std::isfinite(domain_lo) ? domain_lo + margin : domain_lo;
  const double hi = std::isfinite(domain_hi) ? domain_hi - margin : domain_hi;
  return std::clamp(t, lo, hi);
}

FDivSpec make_fdiv(FDivFamily family, double alpha) {
  FDivSpec s;
  s.family = family;
  s.alpha = alpha;
  switch (family) {
    case FDivFamily::AIRL:
      s.f = [](double u) { return -std::log(u); };
      s.f_prime = [](double u) { return -1.0 / u; };
      s.f_star = [](double t) { return -1.0 - std::log(-t); };
      s.f_star_prime = [](double t) { return -1.0 / t; };
      s.domain_lo = -kInf;
      s.domain_hi = 0.0;
      s.f_at_zero = kInf;
      s.slope_at_inf = 0.0;
      break;
    case FDivFamily::GAIL:
      s.f = [](double u) { return -(u + 1.0) * std::log((1.0 + u) / 2.0) + xlogx(u); };
      s.f_prime = [](double u) { return std::log(2.0 * u / (1.0 + u)); };
      s.f_star = [](double t) { return -std::log(2.0 - std::exp(t)); };
      s.f_star_prime = [](double t) {
        const double e = std::exp(t);
        return e / (2.0 - e);
      };
      s.domain_lo = -kInf;
      s.domain_hi = std::log(2.0);
      s.f_at_zero = std::log(2.0);
      s.slope_at_inf = std::log(2.0);
      break;
    case FDivFamily::FAIRL:
      s.f = [](double u) { return xlogx(u); };
      s.f_prime = [](double u) { return std::log(u) + 1.0; };
      s.f_star = [](double t) { return std::exp(t - 1.0); };
      s.f_star_prime = [](double t) { return std::exp(t - 1.0); };
      s.domain_lo = -kInf;
      s.domain_hi = kInf;
      s.f_at_zero = 0.0;
      s.slope_at_inf = kInf;
      break;
    case FDivFamily::ALPHA: {
      if (!std::isfinite(alpha) || alpha == 0.0 || alpha == 1.0)
        throw DomainError("alpha-divergence requires alpha not in {0, 1}");
      const double a = alpha;
      s.f = [a](double u) { return (std::pow(u, 1.0 - a) - (1.0 - a) * u - a) / (a * (a - 1.0)); };
      s.f_prime = [a](double u) { return (1.0 - std::pow(u, -a)) / a; };
      s.f_star = [a](double t) { return (std::pow(1.0 - a * t, (a - 1.0) / a) - 1.0) / (1.0 - a); };
      s.f_star_prime = [a](double t) { return std::pow(1.0 - a * t, -1.0 / a); };
      if (a > 0.0) {
        s.domain_lo = -kInf;
        s.domain_hi = 1.0 / a;
      } else {
        s.domain_lo = 1.0 / a;
        s.domain_hi = kInf;
      }
      s.f_at_zero = a < 1.0 ? 1.0 / (1.0 - a) : kInf;
      s.slope_at_inf = a > 0.0 ? 1.0 / a : kInf;
      break;
    }
  }
  return s;
}

double f_conjugate(const FDivSpec& spec, double t) {
  if (!spec.in_domain(t))
    throw DomainError("f_conjugate: t = " + std::to_string(t) + " outside the domain of " + to_string(spec.family));
  return spec.f_star(t);
}

}  // namespace align::adversarial
