#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace gmmd::onnx {

enum class DType { Float, Int64 };

/// Dense tensor used by the interpreter. Floating-point data is held as
/// float32, integer data (shapes, indices) as int64.
struct Tensor {
  DType dtype = DType::Float;
  std::vector<std::int64_t> shape;
  std::vector<float> f;
  std::vector<std::int64_t> i;

  static Tensor floats(std::vector<std::int64_t> shape, std::vector<float> values);
  static Tensor ints(std::vector<std::int64_t> shape, std::vector<std::int64_t> values);

  std::size_t size() const;
  std::size_t rank() const { return shape.size(); }
};

/// A loaded ONNX graph evaluated by a small reference interpreter. Covers the
/// operator subset used by convolutional and transformer image encoders;
/// anything else raises InferenceError naming the operator.
class Graph {
 public:
  static Graph load(const std::filesystem::path& path);
  static Graph from_bytes(const std::string& bytes, const std::filesystem::path& base_dir = {});

  Graph(Graph&&) noexcept;
  Graph& operator=(Graph&&) noexcept;
  ~Graph();

  const std::string& input_name() const;
  /// Static input shape; unknown dimensions are reported as -1.
  const std::vector<std::int64_t>& input_shape() const;
  std::vector<std::string> output_names() const;
  bool has_value(const std::string& name) const;

  /// Evaluates only the nodes needed for `wanted`. Const: safe to call from
  /// several threads on the same graph.
  std::map<std::string, Tensor> run(const Tensor& input, std::span<const std::string> wanted) const;

 private:
  struct Impl;
  explicit Graph(std::unique_ptr<Impl> impl);
  std::unique_ptr<Impl> impl_;
};

}  // namespace gmmd::onnx
