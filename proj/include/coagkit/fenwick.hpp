#pragma once

#include <cstddef>
#include <vector>

namespace coagkit {

/// Binary indexed tree over non-negative doubles: point update, prefix
/// sums and proportional sampling in O(log n).
class Fenwick {
 public:
  Fenwick() = default;
  explicit Fenwick(const std::vector<double>& values) { assign(values); }

  void assign(const std::vector<double>& values) {
    values_ = values;
    tree_.assign(values.size() + 1, 0.0);
    for (std::size_t i = 0; i < values.size(); ++i) {
      const std::size_t k = i + 1;
      tree_[k] += values[i];
      const std::size_t parent = k + (k & (~k + 1));
      if (parent < tree_.size()) tree_[parent] += tree_[k];
    }
    top_ = 1;
    while (top_ * 2 <= values.size()) top_ *= 2;
  }

  std::size_t size() const noexcept { return values_.size(); }
  double value(std::size_t i) const { return values_[i]; }

  void set(std::size_t i, double v) {
    const double delta = v - values_[i];
    values_[i] = v;
    for (std::size_t k = i + 1; k < tree_.size(); k += k & (~k + 1)) tree_[k] += delta;
  }

  /// Sum of values[0..i).
  double prefix(std::size_t i) const {
    double s = 0;
    for (std::size_t k = i; k > 0; k -= k & (~k + 1)) s += tree_[k];
    return s;
  }

  double total() const { return prefix(values_.size()); }

  /// Smallest index i with prefix(i+1) > u, skipping zero entries; u is
  /// clamped into [0, total).
  std::size_t find(double u) const {
    std::size_t pos = 0;
    for (std::size_t step = top_; step > 0; step >>= 1) {
      const std::size_t next = pos + step;
      if (next < tree_.size() && tree_[next] <= u) {
        pos = next;
        u -= tree_[next];
      }
    }
    // Rounding can land on a zero entry or past the end; step to the
    // nearest positive entry.
    std::size_t i = pos < values_.size() ? pos : values_.size() - 1;
    while (i < values_.size() && values_[i] <= 0) ++i;
    if (i == values_.size()) {
      i = pos < values_.size() ? pos : values_.size() - 1;
      while (i > 0 && values_[i] <= 0) --i;
    }
    return i;
  }

 private:
  std::vector<double> values_;
  std::vector<double> tree_;
  std::size_t top_ = 1;
};

} // namespace coagkit
