#include "crk/filter.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <stdexcept>

namespace crk {

double knockoff_threshold(std::span<const double> w, double q, int offset) {
  if (!(q > 0.0 && q < 1.0)) throw std::invalid_argument("q must lie in (0, 1)");
  if (offset != 0 && offset != 1) throw std::invalid_argument("offset must be 0 or 1");
  std::vector<double> candidates;
  for (double v : w) {
    if (std::isnan(v)) throw std::invalid_argument("W contains NaN");
    if (v != 0.0) candidates.push_back(std::abs(v));
  }
  std::sort(candidates.begin(), candidates.end());
  candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());
  for (double t : candidates) {
    std::size_t neg = 0, pos = 0;
    for (double v : w) {
      if (v <= -t) ++neg;
      if (v >= t) ++pos;
    }
    if ((offset + static_cast<double>(neg)) / static_cast<double>(std::max<std::size_t>(1, pos)) <= q) return t;
  }
  return std::numeric_limits<double>::infinity();
}

SelectionResult select_features(std::span<const double> w, double q, int offset) {
  SelectionResult r;
  r.q = q;
  r.offset = offset;
  r.threshold = knockoff_threshold(w, q, offset);
  for (std::size_t j = 0; j < w.size(); ++j)
    if (w[j] >= r.threshold) r.selected.push_back(static_cast<int>(j));
  return r;
}

SelectionQuality evaluate_selection(std::span<const int> selected, std::span<const int> true_active) {
  const std::set<int> s(selected.begin(), selected.end()), t(true_active.begin(), true_active.end());
  std::size_t hits = 0;
  for (int j : s) hits += t.count(j);
  SelectionQuality out;
  out.fdp = static_cast<double>(s.size() - hits) / static_cast<double>(std::max<std::size_t>(1, s.size()));
  out.power = static_cast<double>(hits) / static_cast<double>(std::max<std::size_t>(1, t.size()));
  return out;
}

}  // namespace crk
