#include "align/param_table.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>

#include "align/errors.hpp"

namespace align {

std::vector<double> flatten(const ParamTable& table) {
  std::vector<double> flat;
  flat.reserve(param_count(table));
  for (const auto& [key, row] : table) flat.insert(flat.end(), row.begin(), row.end());
  return flat;
}

ParamTable unflatten(const ParamTable& shape, const std::vector<double>& flat) {
  if (flat.size() != param_count(shape)) throw DomainError("unflatten: size mismatch");
  ParamTable out;
  std::size_t offset = 0;
  for (const auto& [key, row] : shape) {
    out.emplace(key, std::vector<double>(flat.begin() + static_cast<std::ptrdiff_t>(offset),
                                         flat.begin() + static_cast<std::ptrdiff_t>(offset + row.size())));
    offset += row.size();
  }
  return out;
}

ParamTable zeros_like(const ParamTable& shape) {
  ParamTable out;
  for (const auto& [key, row] : shape) out.emplace(key, std::vector<double>(row.size(), 0.0));
  return out;
}

std::size_t param_count(const ParamTable& table) {
  std::size_t n = 0;
  for (const auto& [key, row] : table) n += row.size();
  return n;
}

namespace {

// Visits aligned coordinate pairs over the union of keys.
template <typename F>
void for_each_pair(const ParamTable& a, const ParamTable& b, F&& fn) {
  std::set<std::string> keys;
  for (const auto& [k, r] : a) keys.insert(k);
  for (const auto& [k, r] : b) keys.insert(k);
  static const std::vector<double> empty;
  for (const auto& key : keys) {
    auto ia = a.find(key);
    auto ib = b.find(key);
    const auto& ra = ia == a.end() ? empty : ia->second;
    const auto& rb = ib == b.end() ? empty : ib->second;
    const std::size_t n = std::max(ra.size(), rb.size());
    for (std::size_t i = 0; i < n; ++i) {
      fn(i < ra.size() ? ra[i] : 0.0, i < rb.size() ? rb[i] : 0.0);
    }
  }
}

}  // namespace

double cosine_similarity(const ParamTable& a, const ParamTable& b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for_each_pair(a, b, [&](double x, double y) {
    dot += x * y;
    na += x * x;
    nb += y * y;
  });
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / std::sqrt(na * nb);
}

double l2_norm(const ParamTable& table) {
  double s = 0.0;
  for (const auto& [k, row] : table)
    for (double v : row) s += v * v;
  return std::sqrt(s);
}

double relative_error(const ParamTable& a, const ParamTable& b, double floor) {
  double diff = 0.0;
  for_each_pair(a, b, [&](double x, double y) { diff += (x - y) * (x - y); });
  const double scale = std::max({l2_norm(a), l2_norm(b), floor});
  return std::sqrt(diff) / scale;
}

unsigned long long fnv1a64(const std::string& text) {
  unsigned long long h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(unsigned long long value) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", value);
  return buf;
}

std::string format_real(double value) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", value);
  return buf;
}

}  // namespace align
