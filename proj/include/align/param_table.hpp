#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

namespace align {

/// Row-keyed parameter storage shared by policies (one row of |A| logits per
/// context), discriminators and critics (one scalar per key) and gradients of
/// all of them. std::map keeps iteration order canonical.
using ParamTable = std::map<std::string, std::vector<double>>;

/// Concatenate rows in key order.
std::vector<double> flatten(const ParamTable& table);

/// Inverse of flatten; `shape` supplies keys and row widths.
ParamTable unflatten(const ParamTable& shape, const std::vector<double>& flat);

/// Zero table with the same keys and widths.
ParamTable zeros_like(const ParamTable& shape);

std::size_t param_count(const ParamTable& table);

/// Cosine similarity over the union of keys (missing rows count as zero).
double cosine_similarity(const ParamTable& a, const ParamTable& b);

double l2_norm(const ParamTable& table);

/// ||a - b||_2 / max(||a||_2, ||b||_2, floor).
double relative_error(const ParamTable& a, const ParamTable& b, double floor = 1e-12);

/// 64-bit FNV-1a; used for vocab and config fingerprints.
unsigned long long fnv1a64(const std::string& text);

std::string hex64(unsigned long long value);

/// Shortest round-trippable decimal text (17 significant digits).
std::string format_real(double value);

}  // namespace align
