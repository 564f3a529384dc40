#pragma once

#include <cstddef>
#include <span>

#include "dine/tensor.hpp"

namespace dine {

/// Per-sample teacher probabilities, indexed by target sample id (row index).
/// The row count is fixed at construction.
class MemoryBank {
 public:
  MemoryBank() = default;
  explicit MemoryBank(Tensor rows) : rows_(std::move(rows)) {
    require_matrix(rows_, "MemoryBank");
    for (std::size_t i = 0; i < rows_.rows(); ++i) require_probability(rows_.row(i));
  }

  std::size_t size() const { return rows_.rows(); }
  std::size_t num_classes() const { return rows_.cols(); }
  std::size_t epoch() const { return epoch_; }

  const Tensor& rows() const { return rows_; }
  std::span<const double> row(std::size_t id) const {
    if (id >= size()) throw LookupError("sample id " + std::to_string(id) + " not in memory bank");
    return rows_.row(id);
  }

  /// Teacher rows for a batch of sample ids.
  Tensor gather(std::span<const std::size_t> ids) const { return gather_rows(rows_, ids); }

  /// Replaces all rows (same shape) and advances the epoch counter.
  void replace(Tensor rows) {
    rows.require_same_shape(rows_, "MemoryBank::replace");
    rows_ = std::move(rows);
    ++epoch_;
  }

  friend bool operator==(const MemoryBank&, const MemoryBank&) = default;

 private:
  Tensor rows_;
  std::size_t epoch_ = 0;
};

}  // namespace dine
