#include "gmmd/vector_set.hpp"

#include <string>

#include "gmmd/error.hpp"

namespace gmmd {

VectorSet::VectorSet(std::size_t rows, std::size_t dim, std::vector<double> data)
    : rows_(rows), dim_(dim), data_(std::move(data)) {
  if (data_.size() != rows_ * dim_) {
    throw InputError("vector set storage holds " + std::to_string(data_.size()) +
                     " values, expected " + std::to_string(rows_ * dim_));
  }
}

VectorSet VectorSet::from_rows(std::span<const std::vector<double>> rows) {
  VectorSet s;
  for (const auto& r : rows) s.push_back(r);
  return s;
}

VectorSet VectorSet::from_gram_vectors(std::span<const GramVector> vectors) {
  VectorSet s;
  for (const auto& v : vectors) s.push_back(v.values);
  return s;
}

void VectorSet::push_back(std::span<const double> row) {
  if (rows_ == 0 && data_.empty() && dim_ == 0) dim_ = row.size();
  if (row.size() != dim_) {
    throw InputError("vector of length " + std::to_string(row.size()) +
                     " added to a set of dimension " + std::to_string(dim_));
  }
  data_.insert(data_.end(), row.begin(), row.end());
  ++rows_;
}

std::vector<GramVector> VectorSet::to_gram_vectors(std::size_t source_dim) const {
  std::vector<GramVector> out;
  out.reserve(rows_);
  for (std::size_t i = 0; i < rows_; ++i) {
    auto r = row(i);
    out.push_back(GramVector{source_dim, std::vector<double>(r.begin(), r.end())});
  }
  return out;
}

}  // namespace gmmd
