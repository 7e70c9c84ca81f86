#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "stenet/tensor.hpp"

namespace stenet {

/// Ragged per-row index lists in CSR form. Used both as a sparse candidate
/// mask (row r may attend to the listed columns) and as a top-k index matrix
/// (row r selected the listed entries, in rank order).
class IndexLists {
 public:
  IndexLists() : offsets_{0} {}

  IndexLists(std::size_t domain, const std::vector<std::vector<std::size_t>>& rows)
      : domain_(domain), offsets_{0} {
    for (const auto& r : rows) {
      for (auto c : r) {
        if (c >= domain) {
          throw IndexError("index " + std::to_string(c) + " outside domain " +
                           std::to_string(domain));
        }
        indices_.push_back(c);
      }
      offsets_.push_back(indices_.size());
    }
  }

  /// Every row lists all of [0, domain).
  static IndexLists full(std::size_t rows, std::size_t domain) {
    IndexLists out;
    out.domain_ = domain;
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < domain; ++c) out.indices_.push_back(c);
      out.offsets_.push_back(out.indices_.size());
    }
    return out;
  }

  std::size_t rows() const { return offsets_.size() - 1; }
  std::size_t domain() const { return domain_; }
  std::size_t nnz() const { return indices_.size(); }

  std::span<const std::size_t> row(std::size_t r) const {
    if (r >= rows()) throw IndexError("row " + std::to_string(r) + " out of range");
    return {indices_.data() + offsets_[r], offsets_[r + 1] - offsets_[r]};
  }
  std::size_t row_size(std::size_t r) const { return offsets_[r + 1] - offsets_[r]; }

  bool uniform() const {
    for (std::size_t r = 1; r < rows(); ++r) {
      if (row_size(r) != row_size(0)) return false;
    }
    return true;
  }

  /// Common row length; throws if rows are ragged.
  std::size_t width() const {
    if (rows() == 0) return 0;
    if (!uniform()) throw ShapeError("index lists are ragged");
    return row_size(0);
  }

  bool contains(std::size_t r, std::size_t c) const {
    auto rr = row(r);
    return std::find(rr.begin(), rr.end(), c) != rr.end();
  }

  /// Row-major dense boolean membership matrix.
  std::vector<bool> to_dense() const {
    std::vector<bool> m(rows() * domain_, false);
    for (std::size_t r = 0; r < rows(); ++r) {
      for (auto c : row(r)) m[r * domain_ + c] = true;
    }
    return m;
  }

  std::vector<std::vector<std::size_t>> to_nested() const {
    std::vector<std::vector<std::size_t>> out(rows());
    for (std::size_t r = 0; r < rows(); ++r) {
      auto rr = row(r);
      out[r].assign(rr.begin(), rr.end());
    }
    return out;
  }

  bool operator==(const IndexLists&) const = default;

 private:
  std::size_t domain_ = 0;
  std::vector<std::size_t> offsets_;
  std::vector<std::size_t> indices_;
};

using SparseMask = IndexLists;
using IndexMatrix = IndexLists;

}  // namespace stenet
