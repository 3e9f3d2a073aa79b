#pragma once

#include <Eigen/Dense>

#include <span>
#include <vector>

namespace crk {

struct SelectionResult {
  std::vector<int> selected;  // 0-based feature indices, ascending
  double threshold = 0.0;     // +inf when nothing qualifies
  double q = 0.2;
  int offset = 1;
};

/// Knockoff (offset 0) / knockoff+ (offset 1) threshold:
///   min{ t in {|W_j| : W_j != 0} : (offset + #{W_j <= -t}) / max(1, #{W_j >= t}) <= q },
/// or +inf if no candidate qualifies. Throws std::invalid_argument for q
/// outside (0,1) or offset not in {0,1}.
double knockoff_threshold(std::span<const double> w, double q, int offset = 1);

SelectionResult select_features(std::span<const double> w, double q, int offset = 1);

inline SelectionResult select_features(const Eigen::VectorXd& w, double q, int offset = 1) {
  return select_features(std::span<const double>(w.data(), static_cast<std::size_t>(w.size())), q, offset);
}

struct SelectionQuality {
  double fdp = 0.0;
  double power = 0.0;
};

/// fdp = |S \ T| / max(1, |S|), power = |S n T| / max(1, |T|).
SelectionQuality evaluate_selection(std::span<const int> selected, std::span<const int> true_active);

}  // namespace crk
