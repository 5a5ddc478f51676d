#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "gmmd/gram.hpp"

namespace gmmd {

/// A set of equal-length real vectors stored as a dense row-major matrix.
class VectorSet {
 public:
  VectorSet() = default;
  explicit VectorSet(std::size_t dim) : dim_(dim) {}
  VectorSet(std::size_t rows, std::size_t dim, std::vector<double> data);

  static VectorSet from_rows(std::span<const std::vector<double>> rows);
  static VectorSet from_gram_vectors(std::span<const GramVector> vectors);

  /// Appends a row; the first row fixes the dimension of an empty set.
  void push_back(std::span<const double> row);

  std::size_t size() const { return rows_; }
  std::size_t dim() const { return dim_; }
  bool empty() const { return rows_ == 0; }
  std::span<const double> row(std::size_t i) const {
    return {data_.data() + i * dim_, dim_};
  }
  std::span<const double> data() const { return data_; }

  std::vector<GramVector> to_gram_vectors(std::size_t source_dim) const;

  friend bool operator==(const VectorSet&, const VectorSet&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t dim_ = 0;
  std::vector<double> data_;
};

}  // namespace gmmd
