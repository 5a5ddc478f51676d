#include "gmmd/onnx_graph.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <functional>
#include <limits>
#include <numeric>
#include <set>
#include <unordered_map>

#include "gmmd/error.hpp"
#include "onnx.pb.h"

namespace gmmd::onnx {

using Shape = std::vector<std::int64_t>;

namespace {

std::size_t numel(const Shape& s) {
  std::size_t n = 1;
  for (auto d : s) n *= static_cast<std::size_t>(d);
  return n;
}

Shape strides_of(const Shape& s) {
  Shape st(s.size(), 1);
  for (std::size_t k = s.size(); k-- > 1;) st[k - 1] = st[k] * s[k];
  return st;
}

std::int64_t normalize_axis(std::int64_t axis, std::size_t rank) {
  const auto r = static_cast<std::int64_t>(rank);
  if (axis < -r || axis >= r) throw InferenceError("axis " + std::to_string(axis) + " out of range");
  return axis < 0 ? axis + r : axis;
}

}  // namespace

Tensor Tensor::floats(Shape shape, std::vector<float> values) {
  Tensor t;
  t.dtype = DType::Float;
  t.shape = std::move(shape);
  t.f = std::move(values);
  if (t.f.size() != numel(t.shape)) throw InferenceError("tensor value count does not match its shape");
  return t;
}

Tensor Tensor::ints(Shape shape, std::vector<std::int64_t> values) {
  Tensor t;
  t.dtype = DType::Int64;
  t.shape = std::move(shape);
  t.i = std::move(values);
  if (t.i.size() != numel(t.shape)) throw InferenceError("tensor value count does not match its shape");
  return t;
}

std::size_t Tensor::size() const { return numel(shape); }

namespace {

using ::onnx::AttributeProto;
using ::onnx::NodeProto;
using ::onnx::TensorProto;

float half_to_float(std::uint16_t h) {
  const std::uint32_t sign = (h & 0x8000u) << 16;
  std::uint32_t exp = (h >> 10) & 0x1f;
  std::uint32_t mant = h & 0x3ff;
  std::uint32_t bits;
  if (exp == 0) {
    if (mant == 0) {
      bits = sign;
    } else {
      exp = 127 - 15 + 1;
      while ((mant & 0x400u) == 0) {
        mant <<= 1;
        --exp;
      }
      bits = sign | (exp << 23) | ((mant & 0x3ffu) << 13);
    }
  } else if (exp == 31) {
    bits = sign | 0x7f800000u | (mant << 13);
  } else {
    bits = sign | ((exp + 127 - 15) << 23) | (mant << 13);
  }
  float out;
  std::memcpy(&out, &bits, sizeof out);
  return out;
}

template <typename T>
std::vector<T> raw_as(const std::string& raw, std::size_t n) {
  if (raw.size() != n * sizeof(T)) throw InferenceError("raw tensor data has the wrong byte length");
  std::vector<T> out(n);
  std::memcpy(out.data(), raw.data(), raw.size());
  return out;
}

std::string read_external(const TensorProto& t, const std::filesystem::path& base) {
  std::string location;
  std::size_t offset = 0;
  std::size_t length = std::string::npos;
  for (const auto& kv : t.external_data()) {
    if (kv.key() == "location") location = kv.value();
    if (kv.key() == "offset") offset = std::stoull(kv.value());
    if (kv.key() == "length") length = std::stoull(kv.value());
  }
  std::ifstream in(base / location, std::ios::binary);
  if (!in) throw InferenceError("cannot open external tensor data " + (base / location).string());
  in.seekg(0, std::ios::end);
  const auto size = static_cast<std::size_t>(in.tellg());
  if (length == std::string::npos) length = size - offset;
  if (offset + length > size) throw InferenceError("external tensor data is truncated");
  std::string data(length, '\0');
  in.seekg(static_cast<std::streamoff>(offset));
  in.read(data.data(), static_cast<std::streamsize>(length));
  return data;
}

Tensor from_proto(const TensorProto& t, const std::filesystem::path& base) {
  Shape shape(t.dims().begin(), t.dims().end());
  const std::size_t n = numel(shape);
  std::string external;
  if (t.data_location() == TensorProto::EXTERNAL) external = read_external(t, base);
  const std::string& raw = t.data_location() == TensorProto::EXTERNAL ? external : t.raw_data();
  const bool has_raw = !raw.empty() || t.data_location() == TensorProto::EXTERNAL;

  switch (t.data_type()) {
    case TensorProto::FLOAT:
      if (has_raw) return Tensor::floats(shape, raw_as<float>(raw, n));
      return Tensor::floats(shape, {t.float_data().begin(), t.float_data().end()});
    case TensorProto::DOUBLE: {
      std::vector<double> d = has_raw ? raw_as<double>(raw, n)
                                      : std::vector<double>(t.double_data().begin(), t.double_data().end());
      return Tensor::floats(shape, {d.begin(), d.end()});
    }
    case TensorProto::FLOAT16: {
      std::vector<std::uint16_t> h;
      if (has_raw) {
        h = raw_as<std::uint16_t>(raw, n);
      } else {
        for (auto v : t.int32_data()) h.push_back(static_cast<std::uint16_t>(v));
      }
      std::vector<float> f(h.size());
      std::transform(h.begin(), h.end(), f.begin(), half_to_float);
      return Tensor::floats(shape, std::move(f));
    }
    case TensorProto::INT64:
      if (has_raw) return Tensor::ints(shape, raw_as<std::int64_t>(raw, n));
      return Tensor::ints(shape, {t.int64_data().begin(), t.int64_data().end()});
    case TensorProto::INT32: {
      std::vector<std::int32_t> v = has_raw ? raw_as<std::int32_t>(raw, n)
                                            : std::vector<std::int32_t>(t.int32_data().begin(), t.int32_data().end());
      return Tensor::ints(shape, {v.begin(), v.end()});
    }
    case TensorProto::BOOL:
    case TensorProto::UINT8:
    case TensorProto::INT8: {
      std::vector<std::int64_t> v(n);
      if (has_raw) {
        if (raw.size() != n) throw InferenceError("raw tensor data has the wrong byte length");
        for (std::size_t k = 0; k < n; ++k) {
          v[k] = t.data_type() == TensorProto::INT8 ? static_cast<std::int8_t>(raw[k])
                                                     : static_cast<std::uint8_t>(raw[k]);
        }
      } else {
        if (static_cast<std::size_t>(t.int32_data_size()) != n) {
          throw InferenceError("tensor value count does not match its shape");
        }
        std::copy(t.int32_data().begin(), t.int32_data().end(), v.begin());
      }
      return Tensor::ints(shape, std::move(v));
    }
    default:
      throw InferenceError("unsupported tensor element type " + std::to_string(t.data_type()) + " in '" +
                           t.name() + "'");
  }
}

// ---------------------------------------------------------------------------
// Node evaluation context

struct Ctx {
  const NodeProto& node;
  std::vector<const Tensor*> in;
  int opset;
  const std::filesystem::path& base;

  const AttributeProto* attr(const std::string& name) const {
    for (const auto& a : node.attribute()) {
      if (a.name() == name) return &a;
    }
    return nullptr;
  }
  std::int64_t attr_int(const std::string& name, std::int64_t fallback) const {
    const auto* a = attr(name);
    return a ? a->i() : fallback;
  }
  float attr_float(const std::string& name, float fallback) const {
    const auto* a = attr(name);
    return a ? a->f() : fallback;
  }
  std::string attr_string(const std::string& name, const std::string& fallback) const {
    const auto* a = attr(name);
    return a ? a->s() : fallback;
  }
  Shape attr_ints(const std::string& name) const {
    const auto* a = attr(name);
    return a ? Shape(a->ints().begin(), a->ints().end()) : Shape{};
  }
  bool has_input(std::size_t k) const { return k < in.size() && in[k] != nullptr; }
  const Tensor& input(std::size_t k) const {
    if (!has_input(k)) {
      throw InferenceError(node.op_type() + " node '" + node.name() + "' is missing input " + std::to_string(k));
    }
    return *in[k];
  }
  const Tensor& float_input(std::size_t k) const {
    const Tensor& t = input(k);
    if (t.dtype != DType::Float) throw InferenceError(node.op_type() + " expects a floating-point input");
    return t;
  }
  Shape int_values(std::size_t k) const {
    const Tensor& t = input(k);
    if (t.dtype == DType::Int64) return t.i;
    Shape out;
    for (float v : t.f) out.push_back(static_cast<std::int64_t>(v));
    return out;
  }
};

using Outputs = std::vector<Tensor>;
using OpFn = std::function<Outputs(const Ctx&)>;

// ---------------------------------------------------------------------------
// Broadcasting

Shape broadcast_shape(const Shape& a, const Shape& b) {
  const std::size_t r = std::max(a.size(), b.size());
  Shape out(r);
  for (std::size_t k = 0; k < r; ++k) {
    const std::int64_t da = k + a.size() >= r ? a[k + a.size() - r] : 1;
    const std::int64_t db = k + b.size() >= r ? b[k + b.size() - r] : 1;
    if (da != db && da != 1 && db != 1) throw InferenceError("shapes are not broadcastable");
    out[k] = da == 1 ? db : da;
  }
  return out;
}

// Strides of `s` viewed in `out`'s rank, 0 along broadcast dimensions.
Shape broadcast_strides(const Shape& s, const Shape& out) {
  Shape st(out.size(), 0);
  const Shape own = strides_of(s);
  const std::size_t off = out.size() - s.size();
  for (std::size_t k = 0; k < s.size(); ++k) st[k + off] = s[k] == 1 ? 0 : own[k];
  return st;
}

// Calls f(out_index, offsets...) for every element of `out`.
template <std::size_t N, typename F>
void for_each_broadcast(const Shape& out, const std::array<Shape, N>& strides, F f) {
  const std::size_t total = numel(out);
  const std::size_t r = out.size();
  Shape idx(r, 0);
  std::array<std::int64_t, N> off{};
  for (std::size_t k = 0; k < total; ++k) {
    f(k, off);
    for (std::size_t d = r; d-- > 0;) {
      ++idx[d];
      for (std::size_t t = 0; t < N; ++t) off[t] += strides[t][d];
      if (idx[d] < out[d]) break;
      for (std::size_t t = 0; t < N; ++t) off[t] -= strides[t][d] * out[d];
      idx[d] = 0;
    }
  }
}

template <typename T, typename F>
std::vector<T> broadcast_binary(const std::vector<T>& a, const Shape& sa, const std::vector<T>& b, const Shape& sb,
                                const Shape& out, F f) {
  std::vector<T> r(numel(out));
  if (sa == sb) {
    for (std::size_t k = 0; k < r.size(); ++k) r[k] = f(a[k], b[k]);
    return r;
  }
  if (b.size() == 1 && sa == out) {
    for (std::size_t k = 0; k < r.size(); ++k) r[k] = f(a[k], b[0]);
    return r;
  }
  std::array<Shape, 2> st{broadcast_strides(sa, out), broadcast_strides(sb, out)};
  for_each_broadcast<2>(out, st, [&](std::size_t k, const std::array<std::int64_t, 2>& o) {
    r[k] = f(a[static_cast<std::size_t>(o[0])], b[static_cast<std::size_t>(o[1])]);
  });
  return r;
}

template <typename FF, typename FI>
OpFn binary(FF ff, FI fi) {
  return [ff, fi](const Ctx& c) -> Outputs {
    const Tensor& a = c.input(0);
    const Tensor& b = c.input(1);
    const Shape out = broadcast_shape(a.shape, b.shape);
    if (a.dtype == DType::Float || b.dtype == DType::Float) {
      auto as_float = [](const Tensor& t) {
        return t.dtype == DType::Float ? t.f : std::vector<float>(t.i.begin(), t.i.end());
      };
      return {Tensor::floats(out, broadcast_binary(as_float(a), a.shape, as_float(b), b.shape, out, ff))};
    }
    return {Tensor::ints(out, broadcast_binary(a.i, a.shape, b.i, b.shape, out, fi))};
  };
}

template <typename F>
OpFn unary(F f) {
  return [f](const Ctx& c) -> Outputs {
    Tensor t = c.float_input(0);
    for (auto& v : t.f) v = static_cast<float>(f(static_cast<double>(v)));
    return {std::move(t)};
  };
}

Outputs op_equal(const Ctx& c) {
  const Tensor& a = c.input(0);
  const Tensor& b = c.input(1);
  const Shape out = broadcast_shape(a.shape, b.shape);
  if (a.dtype == DType::Float) {
    auto r = broadcast_binary(a.f, a.shape, b.f, b.shape, out, [](float x, float y) { return x == y ? 1.0f : 0.0f; });
    return {Tensor::ints(out, {r.begin(), r.end()})};
  }
  return {Tensor::ints(out, broadcast_binary(a.i, a.shape, b.i, b.shape, out,
                                             [](std::int64_t x, std::int64_t y) -> std::int64_t { return x == y; }))};
}

Outputs op_where(const Ctx& c) {
  const Tensor& cond = c.input(0);
  const Tensor& x = c.input(1);
  const Tensor& y = c.input(2);
  if (cond.dtype != DType::Int64) throw InferenceError("Where expects a boolean condition");
  const Shape out = broadcast_shape(broadcast_shape(cond.shape, x.shape), y.shape);
  std::array<Shape, 3> st{broadcast_strides(cond.shape, out), broadcast_strides(x.shape, out),
                          broadcast_strides(y.shape, out)};
  Tensor r;
  r.dtype = x.dtype;
  r.shape = out;
  if (x.dtype == DType::Float) {
    r.f.resize(numel(out));
  } else {
    r.i.resize(numel(out));
  }
  for_each_broadcast<3>(out, st, [&](std::size_t k, const std::array<std::int64_t, 3>& o) {
    const bool pick = cond.i[static_cast<std::size_t>(o[0])] != 0;
    if (x.dtype == DType::Float) {
      r.f[k] = pick ? x.f[static_cast<std::size_t>(o[1])] : y.f[static_cast<std::size_t>(o[2])];
    } else {
      r.i[k] = pick ? x.i[static_cast<std::size_t>(o[1])] : y.i[static_cast<std::size_t>(o[2])];
    }
  });
  return {std::move(r)};
}

// ---------------------------------------------------------------------------
// Convolution and pooling (2-D, NCHW)

struct Window {
  std::int64_t kh, kw, sh, sw, dh, dw, pt, pl, pb, pr;
};

Window window_params(const Ctx& c, std::int64_t kh, std::int64_t kw, std::int64_t h, std::int64_t w) {
  Window win{kh, kw, 1, 1, 1, 1, 0, 0, 0, 0};
  const Shape strides = c.attr_ints("strides");
  if (!strides.empty()) {
    win.sh = strides.at(0);
    win.sw = strides.at(1);
  }
  const Shape dil = c.attr_ints("dilations");
  if (!dil.empty()) {
    win.dh = dil.at(0);
    win.dw = dil.at(1);
  }
  const std::string auto_pad = c.attr_string("auto_pad", "NOTSET");
  if (auto_pad == "SAME_UPPER" || auto_pad == "SAME_LOWER") {
    auto same = [&](std::int64_t in, std::int64_t k, std::int64_t s, std::int64_t d, std::int64_t& lo,
                    std::int64_t& hi) {
      const std::int64_t out = (in + s - 1) / s;
      const std::int64_t total = std::max<std::int64_t>(0, (out - 1) * s + (k - 1) * d + 1 - in);
      lo = auto_pad == "SAME_UPPER" ? total / 2 : total - total / 2;
      hi = total - lo;
    };
    same(h, kh, win.sh, win.dh, win.pt, win.pb);
    same(w, kw, win.sw, win.dw, win.pl, win.pr);
  } else if (auto_pad == "NOTSET") {
    const Shape pads = c.attr_ints("pads");
    if (!pads.empty()) {
      win.pt = pads.at(0);
      win.pl = pads.at(1);
      win.pb = pads.at(2);
      win.pr = pads.at(3);
    }
  }
  return win;
}

std::int64_t pooled_extent(std::int64_t in, std::int64_t k, std::int64_t s, std::int64_t d, std::int64_t lo,
                           std::int64_t hi, bool ceil_mode) {
  const std::int64_t span = in + lo + hi - ((k - 1) * d + 1);
  if (span < 0) throw InferenceError("window larger than padded input");
  std::int64_t out = (ceil_mode ? (span + s - 1) / s : span / s) + 1;
  if (ceil_mode && (out - 1) * s >= in + lo) --out;
  return out;
}

void require_rank4(const Tensor& t, const char* op) {
  if (t.rank() != 4) throw InferenceError(std::string(op) + " supports 4-D NCHW inputs only");
}

Outputs op_conv(const Ctx& c) {
  const Tensor& x = c.float_input(0);
  const Tensor& wt = c.float_input(1);
  require_rank4(x, "Conv");
  require_rank4(wt, "Conv");
  const std::int64_t n = x.shape[0], ch = x.shape[1], h = x.shape[2], w = x.shape[3];
  const std::int64_t m = wt.shape[0], cg = wt.shape[1], kh = wt.shape[2], kw = wt.shape[3];
  const std::int64_t group = c.attr_int("group", 1);
  if (cg * group != ch || m % group != 0) throw InferenceError("Conv channel/group mismatch");
  const Window win = window_params(c, kh, kw, h, w);
  const std::int64_t oh = pooled_extent(h, kh, win.sh, win.dh, win.pt, win.pb, false);
  const std::int64_t ow = pooled_extent(w, kw, win.sw, win.dw, win.pl, win.pr, false);
  const float* bias = c.has_input(2) ? c.float_input(2).f.data() : nullptr;
  const std::int64_t mg = m / group;

  std::vector<float> out(static_cast<std::size_t>(n * m * oh * ow));
  std::vector<double> plane(static_cast<std::size_t>(oh * ow));
  for (std::int64_t b = 0; b < n; ++b) {
    for (std::int64_t oc = 0; oc < m; ++oc) {
      std::fill(plane.begin(), plane.end(), bias ? static_cast<double>(bias[oc]) : 0.0);
      const std::int64_t g = oc / mg;
      for (std::int64_t icg = 0; icg < cg; ++icg) {
        const std::int64_t ic = g * cg + icg;
        const float* src = x.f.data() + ((b * ch + ic) * h) * w;
        for (std::int64_t ky = 0; ky < kh; ++ky) {
          for (std::int64_t kx = 0; kx < kw; ++kx) {
            const double wv = wt.f[static_cast<std::size_t>(((oc * cg + icg) * kh + ky) * kw + kx)];
            if (wv == 0.0) continue;
            for (std::int64_t y = 0; y < oh; ++y) {
              const std::int64_t iy = y * win.sh - win.pt + ky * win.dh;
              if (iy < 0 || iy >= h) continue;
              const float* row = src + iy * w;
              double* dst = plane.data() + y * ow;
              for (std::int64_t xo = 0; xo < ow; ++xo) {
                const std::int64_t ix = xo * win.sw - win.pl + kx * win.dw;
                if (ix >= 0 && ix < w) dst[xo] += wv * row[ix];
              }
            }
          }
        }
      }
      float* dst = out.data() + ((b * m + oc) * oh) * ow;
      for (std::size_t k = 0; k < plane.size(); ++k) dst[k] = static_cast<float>(plane[k]);
    }
  }
  return {Tensor::floats({n, m, oh, ow}, std::move(out))};
}

template <bool IsMax>
Outputs op_pool(const Ctx& c) {
  const Tensor& x = c.float_input(0);
  require_rank4(x, IsMax ? "MaxPool" : "AveragePool");
  const Shape ks = c.attr_ints("kernel_shape");
  if (ks.size() != 2) throw InferenceError("pooling needs a 2-D kernel_shape");
  const std::int64_t n = x.shape[0], ch = x.shape[1], h = x.shape[2], w = x.shape[3];
  const Window win = window_params(c, ks[0], ks[1], h, w);
  const bool ceil_mode = c.attr_int("ceil_mode", 0) != 0;
  const bool include_pad = c.attr_int("count_include_pad", 0) != 0;
  const std::int64_t oh = pooled_extent(h, ks[0], win.sh, win.dh, win.pt, win.pb, ceil_mode);
  const std::int64_t ow = pooled_extent(w, ks[1], win.sw, win.dw, win.pl, win.pr, ceil_mode);
  std::vector<float> out(static_cast<std::size_t>(n * ch * oh * ow));
  for (std::int64_t p = 0; p < n * ch; ++p) {
    const float* src = x.f.data() + p * h * w;
    for (std::int64_t y = 0; y < oh; ++y) {
      for (std::int64_t xo = 0; xo < ow; ++xo) {
        double acc = IsMax ? -std::numeric_limits<double>::infinity() : 0.0;
        std::int64_t count = 0, padded = 0;
        for (std::int64_t ky = 0; ky < ks[0]; ++ky) {
          const std::int64_t iy = y * win.sh - win.pt + ky * win.dh;
          for (std::int64_t kx = 0; kx < ks[1]; ++kx) {
            const std::int64_t ix = xo * win.sw - win.pl + kx * win.dw;
            if (iy < 0 || iy >= h || ix < 0 || ix >= w) {
              if (iy < h + win.pb && ix < w + win.pr) ++padded;
              continue;
            }
            const double v = src[iy * w + ix];
            if constexpr (IsMax) {
              acc = std::max(acc, v);
            } else {
              acc += v;
            }
            ++count;
          }
        }
        if constexpr (!IsMax) acc /= static_cast<double>(include_pad ? count + padded : count);
        out[static_cast<std::size_t>((p * oh + y) * ow + xo)] = static_cast<float>(acc);
      }
    }
  }
  return {Tensor::floats({n, ch, oh, ow}, std::move(out))};
}

Outputs op_global_average_pool(const Ctx& c) {
  const Tensor& x = c.float_input(0);
  if (x.rank() < 3) throw InferenceError("GlobalAveragePool needs a spatial input");
  const std::size_t planes = static_cast<std::size_t>(x.shape[0] * x.shape[1]);
  const std::size_t area = x.size() / planes;
  std::vector<float> out(planes);
  for (std::size_t p = 0; p < planes; ++p) {
    double acc = 0.0;
    for (std::size_t k = 0; k < area; ++k) acc += x.f[p * area + k];
    out[p] = static_cast<float>(acc / static_cast<double>(area));
  }
  Shape shape(x.rank(), 1);
  shape[0] = x.shape[0];
  shape[1] = x.shape[1];
  return {Tensor::floats(shape, std::move(out))};
}

// ---------------------------------------------------------------------------
// Normalization

Outputs op_batch_norm(const Ctx& c) {
  Tensor x = c.float_input(0);
  const auto& scale = c.float_input(1).f;
  const auto& bias = c.float_input(2).f;
  const auto& mean = c.float_input(3).f;
  const auto& var = c.float_input(4).f;
  const double eps = c.attr_float("epsilon", 1e-5f);
  const std::size_t n = static_cast<std::size_t>(x.shape.at(0));
  const std::size_t ch = static_cast<std::size_t>(x.shape.at(1));
  const std::size_t area = x.size() / (n * ch);
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t k = 0; k < ch; ++k) {
      const double inv = scale[k] / std::sqrt(static_cast<double>(var[k]) + eps);
      float* p = x.f.data() + (b * ch + k) * area;
      for (std::size_t q = 0; q < area; ++q) p[q] = static_cast<float>((p[q] - mean[k]) * inv + bias[k]);
    }
  }
  return {std::move(x)};
}

// Normalizes `count` contiguous blocks of length `len` to zero mean, unit variance.
void normalize_blocks(float* data, std::size_t count, std::size_t len, double eps) {
  for (std::size_t b = 0; b < count; ++b) {
    float* p = data + b * len;
    double mean = 0.0;
    for (std::size_t k = 0; k < len; ++k) mean += p[k];
    mean /= static_cast<double>(len);
    double var = 0.0;
    for (std::size_t k = 0; k < len; ++k) var += (p[k] - mean) * (p[k] - mean);
    var /= static_cast<double>(len);
    const double inv = 1.0 / std::sqrt(var + eps);
    for (std::size_t k = 0; k < len; ++k) p[k] = static_cast<float>((p[k] - mean) * inv);
  }
}

Outputs op_instance_norm(const Ctx& c) {
  Tensor x = c.float_input(0);
  const auto& scale = c.float_input(1).f;
  const auto& bias = c.float_input(2).f;
  const std::size_t n = static_cast<std::size_t>(x.shape.at(0));
  const std::size_t ch = static_cast<std::size_t>(x.shape.at(1));
  const std::size_t area = x.size() / (n * ch);
  normalize_blocks(x.f.data(), n * ch, area, c.attr_float("epsilon", 1e-5f));
  for (std::size_t p = 0; p < n * ch; ++p) {
    for (std::size_t q = 0; q < area; ++q) x.f[p * area + q] = x.f[p * area + q] * scale[p % ch] + bias[p % ch];
  }
  return {std::move(x)};
}

Outputs op_group_norm(const Ctx& c) {
  Tensor x = c.float_input(0);
  const auto& scale = c.float_input(1).f;
  const auto& bias = c.float_input(2).f;
  const std::size_t groups = static_cast<std::size_t>(c.attr_int("num_groups", 0));
  const std::size_t n = static_cast<std::size_t>(x.shape.at(0));
  const std::size_t ch = static_cast<std::size_t>(x.shape.at(1));
  if (groups == 0 || ch % groups != 0) throw InferenceError("GroupNormalization: bad num_groups");
  const std::size_t area = x.size() / (n * ch);
  normalize_blocks(x.f.data(), n * groups, area * (ch / groups), c.attr_float("epsilon", 1e-5f));
  const bool per_channel = scale.size() == ch;
  for (std::size_t p = 0; p < n * ch; ++p) {
    const std::size_t k = per_channel ? p % ch : (p % ch) / (ch / groups);
    for (std::size_t q = 0; q < area; ++q) x.f[p * area + q] = x.f[p * area + q] * scale[k] + bias[k];
  }
  return {std::move(x)};
}

Outputs op_layer_norm(const Ctx& c) {
  Tensor x = c.float_input(0);
  const std::size_t axis = static_cast<std::size_t>(normalize_axis(c.attr_int("axis", -1), x.rank()));
  std::size_t len = 1;
  for (std::size_t k = axis; k < x.rank(); ++k) len *= static_cast<std::size_t>(x.shape[k]);
  normalize_blocks(x.f.data(), x.size() / len, len, c.attr_float("epsilon", 1e-5f));
  const auto& scale = c.float_input(1).f;
  const std::vector<float>* bias = c.has_input(2) ? &c.float_input(2).f : nullptr;
  for (std::size_t k = 0; k < x.size(); ++k) {
    const std::size_t j = k % len;
    const float s = scale.size() == 1 ? scale[0] : scale[j];
    const float b = bias ? (bias->size() == 1 ? (*bias)[0] : (*bias)[j]) : 0.0f;
    x.f[k] = x.f[k] * s + b;
  }
  return {std::move(x)};
}

Outputs op_softmax(const Ctx& c) {
  Tensor x = c.float_input(0);
  const std::int64_t default_axis = c.opset >= 13 ? -1 : 1;
  const std::size_t axis = static_cast<std::size_t>(normalize_axis(c.attr_int("axis", default_axis), x.rank()));
  std::size_t outer = 1, len = 1, inner = 1;
  for (std::size_t k = 0; k < axis; ++k) outer *= static_cast<std::size_t>(x.shape[k]);
  if (c.opset >= 13) {
    len = static_cast<std::size_t>(x.shape[axis]);
    for (std::size_t k = axis + 1; k < x.rank(); ++k) inner *= static_cast<std::size_t>(x.shape[k]);
  } else {
    len = x.size() / outer;
  }
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      float* p = x.f.data() + o * len * inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < len; ++k) mx = std::max(mx, static_cast<double>(p[k * inner]));
      double total = 0.0;
      for (std::size_t k = 0; k < len; ++k) total += std::exp(p[k * inner] - mx);
      for (std::size_t k = 0; k < len; ++k) p[k * inner] = static_cast<float>(std::exp(p[k * inner] - mx) / total);
    }
  }
  return {std::move(x)};
}

// ---------------------------------------------------------------------------
// Linear algebra

Outputs op_matmul(const Ctx& c) {
  Tensor a = c.float_input(0);
  Tensor b = c.float_input(1);
  const bool a_vec = a.rank() == 1, b_vec = b.rank() == 1;
  if (a_vec) a.shape.insert(a.shape.begin(), 1);
  if (b_vec) b.shape.push_back(1);
  const std::int64_t m = a.shape[a.rank() - 2], k = a.shape[a.rank() - 1];
  const std::int64_t k2 = b.shape[b.rank() - 2], n = b.shape[b.rank() - 1];
  if (k != k2) throw InferenceError("MatMul inner dimensions differ");
  const Shape batch_a(a.shape.begin(), a.shape.end() - 2);
  const Shape batch_b(b.shape.begin(), b.shape.end() - 2);
  const Shape batch = broadcast_shape(batch_a, batch_b);
  const std::size_t batches = numel(batch);
  std::vector<float> out(batches * static_cast<std::size_t>(m * n));
  std::array<Shape, 2> st{broadcast_strides(batch_a, batch), broadcast_strides(batch_b, batch)};
  std::vector<double> row(static_cast<std::size_t>(n));
  for_each_broadcast<2>(batch, st, [&](std::size_t bi, const std::array<std::int64_t, 2>& o) {
    const float* pa = a.f.data() + o[0] * m * k;
    const float* pb = b.f.data() + o[1] * k * n;
    float* po = out.data() + bi * static_cast<std::size_t>(m * n);
    for (std::int64_t i = 0; i < m; ++i) {
      std::fill(row.begin(), row.end(), 0.0);
      for (std::int64_t q = 0; q < k; ++q) {
        const double av = pa[i * k + q];
        const float* brow = pb + q * n;
        for (std::int64_t j = 0; j < n; ++j) row[static_cast<std::size_t>(j)] += av * brow[j];
      }
      for (std::int64_t j = 0; j < n; ++j) po[i * n + j] = static_cast<float>(row[static_cast<std::size_t>(j)]);
    }
  });
  Shape shape = batch;
  if (!a_vec) shape.push_back(m);
  if (!b_vec) shape.push_back(n);
  return {Tensor::floats(shape, std::move(out))};
}

Outputs op_gemm(const Ctx& c) {
  const Tensor& a = c.float_input(0);
  const Tensor& b = c.float_input(1);
  if (a.rank() != 2 || b.rank() != 2) throw InferenceError("Gemm expects 2-D inputs");
  const bool ta = c.attr_int("transA", 0) != 0, tb = c.attr_int("transB", 0) != 0;
  const double alpha = c.attr_float("alpha", 1.0f), beta = c.attr_float("beta", 1.0f);
  const std::int64_t m = ta ? a.shape[1] : a.shape[0], k = ta ? a.shape[0] : a.shape[1];
  const std::int64_t n = tb ? b.shape[0] : b.shape[1];
  if ((tb ? b.shape[1] : b.shape[0]) != k) throw InferenceError("Gemm inner dimensions differ");
  std::vector<float> bias;
  if (c.has_input(2)) {
    const Tensor& ct = c.float_input(2);
    bias = broadcast_binary(ct.f, ct.shape, std::vector<float>{0.0f}, Shape{}, Shape{m, n},
                            [](float x, float) { return x; });
  }
  std::vector<float> out(static_cast<std::size_t>(m * n));
  for (std::int64_t i = 0; i < m; ++i) {
    for (std::int64_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::int64_t q = 0; q < k; ++q) {
        const double av = ta ? a.f[q * m + i] : a.f[i * k + q];
        const double bv = tb ? b.f[j * k + q] : b.f[q * n + j];
        acc += av * bv;
      }
      const double cv = bias.empty() ? 0.0 : bias[static_cast<std::size_t>(i * n + j)];
      out[static_cast<std::size_t>(i * n + j)] = static_cast<float>(alpha * acc + beta * cv);
    }
  }
  return {Tensor::floats({m, n}, std::move(out))};
}

// ---------------------------------------------------------------------------
// Shape manipulation

Tensor with_shape(Tensor t, Shape shape) {
  if (numel(shape) != t.size()) throw InferenceError("reshape changes the element count");
  t.shape = std::move(shape);
  return t;
}

Outputs op_reshape(const Ctx& c) {
  const Tensor& x = c.input(0);
  Shape shape = c.opset >= 5 ? c.int_values(1) : c.attr_ints("shape");
  const bool allow_zero = c.attr_int("allowzero", 0) != 0;
  std::int64_t known = 1;
  std::size_t infer = shape.size();
  for (std::size_t k = 0; k < shape.size(); ++k) {
    if (shape[k] == 0 && !allow_zero) shape[k] = x.shape.at(k);
    if (shape[k] == -1) {
      infer = k;
    } else {
      known *= shape[k];
    }
  }
  if (infer < shape.size()) shape[infer] = known == 0 ? 0 : static_cast<std::int64_t>(x.size()) / known;
  return {with_shape(x, shape)};
}

Outputs op_flatten(const Ctx& c) {
  const Tensor& x = c.input(0);
  const auto axis = static_cast<std::size_t>(
      x.rank() == 0 ? 0 : (c.attr_int("axis", 1) == static_cast<std::int64_t>(x.rank())
                               ? x.rank()
                               : normalize_axis(c.attr_int("axis", 1), x.rank())));
  std::int64_t outer = 1;
  for (std::size_t k = 0; k < axis; ++k) outer *= x.shape[k];
  return {with_shape(x, {outer, static_cast<std::int64_t>(x.size()) / std::max<std::int64_t>(outer, 1)})};
}

template <typename T>
std::vector<T> transpose_values(const std::vector<T>& v, const Shape& shape, const Shape& perm) {
  Shape out_shape(shape.size());
  for (std::size_t k = 0; k < perm.size(); ++k) out_shape[k] = shape[static_cast<std::size_t>(perm[k])];
  const Shape in_st = strides_of(shape);
  Shape st(perm.size());
  for (std::size_t k = 0; k < perm.size(); ++k) st[k] = in_st[static_cast<std::size_t>(perm[k])];
  std::vector<T> out(v.size());
  for_each_broadcast<1>(out_shape, std::array<Shape, 1>{st}, [&](std::size_t k, const std::array<std::int64_t, 1>& o) {
    out[k] = v[static_cast<std::size_t>(o[0])];
  });
  return out;
}

Outputs op_transpose(const Ctx& c) {
  const Tensor& x = c.input(0);
  Shape perm = c.attr_ints("perm");
  if (perm.empty()) {
    perm.resize(x.rank());
    std::iota(perm.rbegin(), perm.rend(), 0);
  }
  if (perm.size() != x.rank()) throw InferenceError("Transpose perm has the wrong length");
  Tensor out;
  out.dtype = x.dtype;
  for (auto p : perm) out.shape.push_back(x.shape[static_cast<std::size_t>(p)]);
  if (x.dtype == DType::Float) {
    out.f = transpose_values(x.f, x.shape, perm);
  } else {
    out.i = transpose_values(x.i, x.shape, perm);
  }
  return {std::move(out)};
}

Outputs op_concat(const Ctx& c) {
  const Tensor& first = c.input(0);
  const auto axis = static_cast<std::size_t>(normalize_axis(c.attr_int("axis", 0), first.rank()));
  Shape shape = first.shape;
  shape[axis] = 0;
  std::vector<const Tensor*> parts;
  for (std::size_t k = 0; k < c.in.size(); ++k) {
    if (!c.has_input(k)) continue;
    const Tensor& t = *c.in[k];
    if (t.rank() != first.rank()) throw InferenceError("Concat inputs differ in rank");
    shape[axis] += t.shape[axis];
    parts.push_back(&t);
  }
  const bool as_float = std::any_of(parts.begin(), parts.end(), [](auto* t) { return t->dtype == DType::Float; });
  std::size_t outer = 1;
  for (std::size_t k = 0; k < axis; ++k) outer *= static_cast<std::size_t>(shape[k]);
  Tensor out;
  out.dtype = as_float ? DType::Float : DType::Int64;
  out.shape = shape;
  for (std::size_t o = 0; o < outer; ++o) {
    for (const Tensor* t : parts) {
      const std::size_t chunk = t->size() / outer;
      if (as_float) {
        if (t->dtype == DType::Float) {
          out.f.insert(out.f.end(), t->f.begin() + o * chunk, t->f.begin() + (o + 1) * chunk);
        } else {
          out.f.insert(out.f.end(), t->i.begin() + o * chunk, t->i.begin() + (o + 1) * chunk);
        }
      } else {
        out.i.insert(out.i.end(), t->i.begin() + o * chunk, t->i.begin() + (o + 1) * chunk);
      }
    }
  }
  return {std::move(out)};
}

Outputs op_split(const Ctx& c) {
  const Tensor& x = c.input(0);
  const auto axis = static_cast<std::size_t>(normalize_axis(c.attr_int("axis", 0), x.rank()));
  Shape sizes = c.has_input(1) ? c.int_values(1) : c.attr_ints("split");
  const auto parts = static_cast<std::size_t>(c.node.output_size());
  if (sizes.empty()) {
    const std::int64_t chunk = (x.shape[axis] + static_cast<std::int64_t>(parts) - 1) / static_cast<std::int64_t>(parts);
    std::int64_t left = x.shape[axis];
    for (std::size_t k = 0; k < parts; ++k) {
      sizes.push_back(std::min(chunk, left));
      left -= sizes.back();
    }
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t k = 0; k < axis; ++k) outer *= static_cast<std::size_t>(x.shape[k]);
  for (std::size_t k = axis + 1; k < x.rank(); ++k) inner *= static_cast<std::size_t>(x.shape[k]);
  Outputs outs;
  std::size_t start = 0;
  for (auto len : sizes) {
    Tensor t;
    t.dtype = x.dtype;
    t.shape = x.shape;
    t.shape[axis] = len;
    for (std::size_t o = 0; o < outer; ++o) {
      const std::size_t from = (o * static_cast<std::size_t>(x.shape[axis]) + start) * inner;
      const std::size_t count = static_cast<std::size_t>(len) * inner;
      if (x.dtype == DType::Float) {
        t.f.insert(t.f.end(), x.f.begin() + from, x.f.begin() + from + count);
      } else {
        t.i.insert(t.i.end(), x.i.begin() + from, x.i.begin() + from + count);
      }
    }
    start += static_cast<std::size_t>(len);
    outs.push_back(std::move(t));
  }
  return outs;
}

Shape axes_input(const Ctx& c) { return c.has_input(1) ? c.int_values(1) : c.attr_ints("axes"); }

Outputs op_unsqueeze(const Ctx& c) {
  const Tensor& x = c.input(0);
  Shape axes = axes_input(c);
  const std::size_t rank = x.rank() + axes.size();
  for (auto& a : axes) a = normalize_axis(a, rank);
  std::sort(axes.begin(), axes.end());
  Shape shape = x.shape;
  for (auto a : axes) shape.insert(shape.begin() + a, 1);
  return {with_shape(x, shape)};
}

Outputs op_squeeze(const Ctx& c) {
  const Tensor& x = c.input(0);
  Shape axes = axes_input(c);
  std::set<std::int64_t> drop;
  for (auto a : axes) drop.insert(normalize_axis(a, x.rank()));
  Shape shape;
  for (std::size_t k = 0; k < x.rank(); ++k) {
    const bool squeeze = axes.empty() ? x.shape[k] == 1 : drop.count(static_cast<std::int64_t>(k)) > 0;
    if (squeeze && x.shape[k] != 1) throw InferenceError("Squeeze on a dimension that is not 1");
    if (!squeeze) shape.push_back(x.shape[k]);
  }
  return {with_shape(x, shape)};
}

Outputs op_shape(const Ctx& c) {
  const Tensor& x = c.input(0);
  const auto r = static_cast<std::int64_t>(x.rank());
  auto clampi = [r](std::int64_t v) { return std::clamp(v < 0 ? v + r : v, std::int64_t{0}, r); };
  const std::int64_t start = clampi(c.attr_int("start", 0));
  const std::int64_t end = c.attr(std::string("end")) ? clampi(c.attr_int("end", r)) : r;
  Shape dims(x.shape.begin() + start, x.shape.begin() + std::max(start, end));
  const auto n = static_cast<std::int64_t>(dims.size());
  return {Tensor::ints({n}, dims)};
}

Outputs op_gather(const Ctx& c) {
  const Tensor& x = c.input(0);
  const Tensor& idx = c.input(1);
  const auto axis = static_cast<std::size_t>(normalize_axis(c.attr_int("axis", 0), x.rank()));
  const Shape indices = c.int_values(1);
  std::size_t outer = 1, inner = 1;
  for (std::size_t k = 0; k < axis; ++k) outer *= static_cast<std::size_t>(x.shape[k]);
  for (std::size_t k = axis + 1; k < x.rank(); ++k) inner *= static_cast<std::size_t>(x.shape[k]);
  const std::int64_t extent = x.shape[axis];
  Tensor out;
  out.dtype = x.dtype;
  out.shape.assign(x.shape.begin(), x.shape.begin() + static_cast<std::ptrdiff_t>(axis));
  out.shape.insert(out.shape.end(), idx.shape.begin(), idx.shape.end());
  out.shape.insert(out.shape.end(), x.shape.begin() + static_cast<std::ptrdiff_t>(axis) + 1, x.shape.end());
  for (std::size_t o = 0; o < outer; ++o) {
    for (auto raw : indices) {
      const std::int64_t j = raw < 0 ? raw + extent : raw;
      if (j < 0 || j >= extent) throw InferenceError("Gather index out of range");
      const std::size_t from = (o * static_cast<std::size_t>(extent) + static_cast<std::size_t>(j)) * inner;
      if (x.dtype == DType::Float) {
        out.f.insert(out.f.end(), x.f.begin() + from, x.f.begin() + from + inner);
      } else {
        out.i.insert(out.i.end(), x.i.begin() + from, x.i.begin() + from + inner);
      }
    }
  }
  return {std::move(out)};
}

Outputs op_slice(const Ctx& c) {
  const Tensor& x = c.input(0);
  Shape starts, ends, axes, steps;
  if (c.opset >= 10) {
    starts = c.int_values(1);
    ends = c.int_values(2);
    if (c.has_input(3)) axes = c.int_values(3);
    if (c.has_input(4)) steps = c.int_values(4);
  } else {
    starts = c.attr_ints("starts");
    ends = c.attr_ints("ends");
    axes = c.attr_ints("axes");
  }
  if (axes.empty()) {
    axes.resize(starts.size());
    std::iota(axes.begin(), axes.end(), 0);
  }
  if (steps.empty()) steps.assign(starts.size(), 1);
  const std::size_t r = x.rank();
  Shape begin(r, 0), step(r, 1), out_shape = x.shape;
  for (std::size_t k = 0; k < axes.size(); ++k) {
    const auto a = static_cast<std::size_t>(normalize_axis(axes[k], r));
    const std::int64_t dim = x.shape[a];
    const std::int64_t s = steps[k];
    if (s == 0) throw InferenceError("Slice step must not be 0");
    std::int64_t b = starts[k] < 0 ? starts[k] + dim : starts[k];
    std::int64_t e = ends[k] < 0 ? ends[k] + dim : ends[k];
    if (s > 0) {
      b = std::clamp<std::int64_t>(b, 0, dim);
      e = std::clamp<std::int64_t>(e, 0, dim);
      out_shape[a] = e > b ? (e - b + s - 1) / s : 0;
    } else {
      b = std::clamp<std::int64_t>(b, 0, dim - 1);
      e = std::clamp<std::int64_t>(e, -1, dim - 1);
      out_shape[a] = b > e ? (b - e - s - 1) / (-s) : 0;
    }
    begin[a] = b;
    step[a] = s;
  }
  const Shape in_st = strides_of(x.shape);
  Shape st(r);
  std::int64_t base = 0;
  for (std::size_t k = 0; k < r; ++k) {
    st[k] = in_st[k] * step[k];
    base += begin[k] * in_st[k];
  }
  Tensor out;
  out.dtype = x.dtype;
  out.shape = out_shape;
  const std::size_t total = numel(out_shape);
  if (x.dtype == DType::Float) {
    out.f.resize(total);
  } else {
    out.i.resize(total);
  }
  if (total > 0) {
    for_each_broadcast<1>(out_shape, std::array<Shape, 1>{st}, [&](std::size_t k, const std::array<std::int64_t, 1>& o) {
      const auto src = static_cast<std::size_t>(base + o[0]);
      if (x.dtype == DType::Float) {
        out.f[k] = x.f[src];
      } else {
        out.i[k] = x.i[src];
      }
    });
  }
  return {std::move(out)};
}

Outputs op_expand(const Ctx& c) {
  const Tensor& x = c.input(0);
  const Shape target = broadcast_shape(x.shape, c.int_values(1));
  if (x.dtype == DType::Float) {
    return {Tensor::floats(target, broadcast_binary(x.f, x.shape, std::vector<float>(numel(target)), target, target,
                                                    [](float a, float) { return a; }))};
  }
  return {Tensor::ints(target, broadcast_binary(x.i, x.shape, std::vector<std::int64_t>(numel(target)), target, target,
                                                [](std::int64_t a, std::int64_t) { return a; }))};
}

bool is_float_type(std::int64_t t) {
  return t == TensorProto::FLOAT || t == TensorProto::DOUBLE || t == TensorProto::FLOAT16 ||
         t == TensorProto::BFLOAT16;
}

Outputs op_cast(const Ctx& c) {
  const Tensor& x = c.input(0);
  const std::int64_t to = c.attr_int("to", TensorProto::FLOAT);
  if (is_float_type(to)) {
    if (x.dtype == DType::Float) return {x};
    return {Tensor::floats(x.shape, {x.i.begin(), x.i.end()})};
  }
  std::vector<std::int64_t> v(x.size());
  for (std::size_t k = 0; k < v.size(); ++k) {
    const double d = x.dtype == DType::Float ? x.f[k] : static_cast<double>(x.i[k]);
    v[k] = to == TensorProto::BOOL ? (d != 0.0) : static_cast<std::int64_t>(d);
  }
  return {Tensor::ints(x.shape, std::move(v))};
}

Outputs op_constant_of_shape(const Ctx& c) {
  const Shape shape = c.int_values(0);
  const auto* value = c.attr("value");
  if (value) {
    Tensor v = from_proto(value->t(), c.base);
    if (v.dtype == DType::Int64) return {Tensor::ints(shape, std::vector<std::int64_t>(numel(shape), v.i.at(0)))};
    return {Tensor::floats(shape, std::vector<float>(numel(shape), v.f.at(0)))};
  }
  return {Tensor::floats(shape, std::vector<float>(numel(shape), 0.0f))};
}

Outputs op_constant(const Ctx& c) {
  if (const auto* a = c.attr("value")) return {from_proto(a->t(), c.base)};
  if (const auto* a = c.attr("value_float")) return {Tensor::floats({}, {a->f()})};
  if (const auto* a = c.attr("value_floats")) {
    return {Tensor::floats({a->floats_size()}, {a->floats().begin(), a->floats().end()})};
  }
  if (const auto* a = c.attr("value_int")) return {Tensor::ints({}, {a->i()})};
  if (const auto* a = c.attr("value_ints")) return {Tensor::ints({a->ints_size()}, {a->ints().begin(), a->ints().end()})};
  throw InferenceError("Constant node '" + c.node.name() + "' has no supported value attribute");
}

Outputs op_range(const Ctx& c) {
  const Tensor& start = c.input(0);
  if (start.dtype == DType::Int64) {
    const std::int64_t s = c.int_values(0).at(0), l = c.int_values(1).at(0), d = c.int_values(2).at(0);
    std::vector<std::int64_t> v;
    for (std::int64_t x = s; d > 0 ? x < l : x > l; x += d) v.push_back(x);
    const auto n = static_cast<std::int64_t>(v.size());
    return {Tensor::ints({n}, std::move(v))};
  }
  const double s = start.f.at(0), l = c.float_input(1).f.at(0), d = c.float_input(2).f.at(0);
  const auto n = static_cast<std::int64_t>(std::max(0.0, std::ceil((l - s) / d)));
  std::vector<float> v(static_cast<std::size_t>(n));
  for (std::int64_t k = 0; k < n; ++k) v[static_cast<std::size_t>(k)] = static_cast<float>(s + static_cast<double>(k) * d);
  return {Tensor::floats({n}, std::move(v))};
}

Outputs op_reduce_mean(const Ctx& c) {
  const Tensor& x = c.float_input(0);
  Shape axes = c.opset >= 18 ? (c.has_input(1) ? c.int_values(1) : Shape{}) : c.attr_ints("axes");
  const bool keep = c.attr_int("keepdims", 1) != 0;
  std::vector<bool> reduce(x.rank(), axes.empty());
  for (auto a : axes) reduce[static_cast<std::size_t>(normalize_axis(a, x.rank()))] = true;
  if (axes.empty() && c.attr_int("noop_with_empty_axes", 0) != 0) return {x};
  Shape kept(x.rank());
  for (std::size_t k = 0; k < x.rank(); ++k) kept[k] = reduce[k] ? 1 : x.shape[k];
  const Shape st = broadcast_strides(kept, x.shape);
  std::vector<double> acc(numel(kept), 0.0);
  for_each_broadcast<1>(x.shape, std::array<Shape, 1>{st}, [&](std::size_t k, const std::array<std::int64_t, 1>& o) {
    acc[static_cast<std::size_t>(o[0])] += x.f[k];
  });
  const double count = static_cast<double>(x.size()) / static_cast<double>(acc.size());
  std::vector<float> out(acc.size());
  for (std::size_t k = 0; k < acc.size(); ++k) out[k] = static_cast<float>(acc[k] / count);
  Shape shape;
  for (std::size_t k = 0; k < x.rank(); ++k) {
    if (!reduce[k]) {
      shape.push_back(x.shape[k]);
    } else if (keep) {
      shape.push_back(1);
    }
  }
  return {Tensor::floats(shape, std::move(out))};
}

Outputs op_clip(const Ctx& c) {
  Tensor x = c.float_input(0);
  float lo = -std::numeric_limits<float>::infinity(), hi = std::numeric_limits<float>::infinity();
  if (c.opset >= 11) {
    if (c.has_input(1)) lo = c.float_input(1).f.at(0);
    if (c.has_input(2)) hi = c.float_input(2).f.at(0);
  } else {
    lo = c.attr_float("min", lo);
    hi = c.attr_float("max", hi);
  }
  for (auto& v : x.f) v = std::clamp(v, lo, hi);
  return {std::move(x)};
}

Outputs op_identity(const Ctx& c) { return {c.input(0)}; }

double gelu_exact(double v) { return 0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0))); }
double gelu_tanh(double v) {
  return 0.5 * v * (1.0 + std::tanh(std::sqrt(2.0 / M_PI) * (v + 0.044715 * v * v * v)));
}

const std::unordered_map<std::string, OpFn>& registry() {
  static const std::unordered_map<std::string, OpFn> ops = [] {
    std::unordered_map<std::string, OpFn> m;
    m["Conv"] = op_conv;
    m["MaxPool"] = op_pool<true>;
    m["AveragePool"] = op_pool<false>;
    m["GlobalAveragePool"] = op_global_average_pool;
    m["BatchNormalization"] = op_batch_norm;
    m["InstanceNormalization"] = op_instance_norm;
    m["GroupNormalization"] = op_group_norm;
    m["LayerNormalization"] = op_layer_norm;
    m["Softmax"] = op_softmax;
    m["MatMul"] = op_matmul;
    m["Gemm"] = op_gemm;
    m["Reshape"] = op_reshape;
    m["Flatten"] = op_flatten;
    m["Transpose"] = op_transpose;
    m["Concat"] = op_concat;
    m["Split"] = op_split;
    m["Unsqueeze"] = op_unsqueeze;
    m["Squeeze"] = op_squeeze;
    m["Shape"] = op_shape;
    m["Gather"] = op_gather;
    m["Slice"] = op_slice;
    m["Expand"] = op_expand;
    m["Cast"] = op_cast;
    m["ConstantOfShape"] = op_constant_of_shape;
    m["Constant"] = op_constant;
    m["Range"] = op_range;
    m["ReduceMean"] = op_reduce_mean;
    m["Clip"] = op_clip;
    m["Identity"] = op_identity;
    m["Dropout"] = op_identity;
    m["Equal"] = op_equal;
    m["Where"] = op_where;
    m["Add"] = binary(std::plus<float>(), std::plus<std::int64_t>());
    m["Sub"] = binary(std::minus<float>(), std::minus<std::int64_t>());
    m["Mul"] = binary(std::multiplies<float>(), std::multiplies<std::int64_t>());
    m["Div"] = binary(std::divides<float>(), [](std::int64_t a, std::int64_t b) {
      if (b == 0) throw InferenceError("integer division by zero");
      return a / b;
    });
    m["Pow"] = binary([](float a, float b) { return static_cast<float>(std::pow(static_cast<double>(a), b)); },
                      [](std::int64_t a, std::int64_t b) {
                        return static_cast<std::int64_t>(std::pow(static_cast<double>(a), static_cast<double>(b)));
                      });
    m["Max"] = binary([](float a, float b) { return std::max(a, b); },
                      [](std::int64_t a, std::int64_t b) { return std::max(a, b); });
    m["Min"] = binary([](float a, float b) { return std::min(a, b); },
                      [](std::int64_t a, std::int64_t b) { return std::min(a, b); });
    m["Relu"] = unary([](double v) { return v > 0.0 ? v : 0.0; });
    m["Sigmoid"] = unary([](double v) { return 1.0 / (1.0 + std::exp(-v)); });
    m["Tanh"] = unary([](double v) { return std::tanh(v); });
    m["Erf"] = unary([](double v) { return std::erf(v); });
    m["Sqrt"] = unary([](double v) { return std::sqrt(v); });
    m["Exp"] = unary([](double v) { return std::exp(v); });
    m["Log"] = unary([](double v) { return std::log(v); });
    m["Neg"] = unary([](double v) { return -v; });
    m["Abs"] = unary([](double v) { return std::abs(v); });
    m["Reciprocal"] = unary([](double v) { return 1.0 / v; });
    m["Floor"] = unary([](double v) { return std::floor(v); });
    m["Ceil"] = unary([](double v) { return std::ceil(v); });
    m["Softplus"] = unary([](double v) { return std::log1p(std::exp(v)); });
    m["LeakyRelu"] = [](const Ctx& c) -> Outputs {
      const double alpha = c.attr_float("alpha", 0.01f);
      return unary([alpha](double v) { return v >= 0.0 ? v : alpha * v; })(c);
    };
    m["Gelu"] = [](const Ctx& c) -> Outputs {
      if (c.attr_string("approximate", "none") == "tanh") return unary(gelu_tanh)(c);
      return unary(gelu_exact)(c);
    };
    return m;
  }();
  return ops;
}

}  // namespace

// ---------------------------------------------------------------------------

struct Graph::Impl {
  ::onnx::ModelProto model;
  std::filesystem::path base_dir;
  int opset = 0;
  std::string input;
  Shape input_shape;
  std::vector<std::string> outputs;
  std::unordered_map<std::string, Tensor> constants;
  std::set<std::string> produced;
};

Graph::Graph(std::unique_ptr<Impl> impl) : impl_(std::move(impl)) {}
Graph::Graph(Graph&&) noexcept = default;
Graph& Graph::operator=(Graph&&) noexcept = default;
Graph::~Graph() = default;

Graph Graph::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InferenceError("cannot open model file " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return from_bytes(bytes, path.parent_path());
}

Graph Graph::from_bytes(const std::string& bytes, const std::filesystem::path& base_dir) {
  auto impl = std::make_unique<Impl>();
  if (!impl->model.ParseFromString(bytes)) throw InferenceError("model file is not a valid ONNX protobuf");
  impl->base_dir = base_dir;
  for (const auto& op : impl->model.opset_import()) {
    if (op.domain().empty() || op.domain() == "ai.onnx") impl->opset = static_cast<int>(op.version());
  }
  const auto& g = impl->model.graph();
  for (const auto& init : g.initializer()) impl->constants.emplace(init.name(), from_proto(init, base_dir));
  for (const auto& vi : g.input()) {
    if (impl->constants.count(vi.name())) continue;
    if (!impl->input.empty()) throw InferenceError("models with more than one runtime input are not supported");
    impl->input = vi.name();
    for (const auto& d : vi.type().tensor_type().shape().dim()) {
      impl->input_shape.push_back(d.has_dim_value() ? d.dim_value() : -1);
    }
  }
  if (impl->input.empty()) throw InferenceError("model has no runtime input");
  for (const auto& node : g.node()) {
    if (!node.domain().empty() && node.domain() != "ai.onnx") {
      throw InferenceError("operator domain '" + node.domain() + "' is not supported (" + node.op_type() + ")");
    }
    if (!registry().count(node.op_type())) {
      throw InferenceError("unsupported ONNX operator " + node.op_type() + " in node '" + node.name() + "'");
    }
    for (const auto& o : node.output()) impl->produced.insert(o);
  }
  for (const auto& vi : g.output()) impl->outputs.push_back(vi.name());
  return Graph(std::move(impl));
}

const std::string& Graph::input_name() const { return impl_->input; }
const std::vector<std::int64_t>& Graph::input_shape() const { return impl_->input_shape; }
std::vector<std::string> Graph::output_names() const { return impl_->outputs; }

bool Graph::has_value(const std::string& name) const {
  return impl_->produced.count(name) > 0 || impl_->constants.count(name) > 0 || name == impl_->input;
}

std::map<std::string, Tensor> Graph::run(const Tensor& input, std::span<const std::string> wanted) const {
  const auto& g = impl_->model.graph();
  const auto& expected = impl_->input_shape;
  if (!expected.empty()) {
    bool ok = expected.size() == input.rank();
    for (std::size_t k = 0; ok && k < expected.size(); ++k) ok = expected[k] < 0 || expected[k] == input.shape[k];
    if (!ok) throw InferenceError("input tensor shape does not match the model input '" + impl_->input + "'");
  }
  for (const auto& w : wanted) {
    if (!has_value(w)) throw InferenceError("model has no value named '" + w + "'");
  }

  // Mark the nodes the requested values depend on.
  std::set<std::string> needed(wanted.begin(), wanted.end());
  std::vector<bool> run_node(static_cast<std::size_t>(g.node_size()), false);
  for (int k = g.node_size(); k-- > 0;) {
    const auto& node = g.node(k);
    const bool used = std::any_of(node.output().begin(), node.output().end(),
                                  [&](const std::string& o) { return needed.count(o) > 0; });
    if (!used) continue;
    run_node[static_cast<std::size_t>(k)] = true;
    for (const auto& i : node.input()) {
      if (!i.empty()) needed.insert(i);
    }
  }
  std::unordered_map<std::string, int> uses;
  for (int k = 0; k < g.node_size(); ++k) {
    if (!run_node[static_cast<std::size_t>(k)]) continue;
    for (const auto& i : g.node(k).input()) ++uses[i];
  }
  const std::set<std::string> keep(wanted.begin(), wanted.end());

  std::unordered_map<std::string, Tensor> env;
  env.emplace(impl_->input, input);
  auto lookup = [&](const std::string& name) -> const Tensor* {
    if (name.empty()) return nullptr;
    if (auto it = env.find(name); it != env.end()) return &it->second;
    if (auto it = impl_->constants.find(name); it != impl_->constants.end()) return &it->second;
    throw InferenceError("value '" + name + "' is used before it is produced");
  };

  for (int k = 0; k < g.node_size(); ++k) {
    if (!run_node[static_cast<std::size_t>(k)]) continue;
    const auto& node = g.node(k);
    Ctx ctx{node, {}, impl_->opset, impl_->base_dir};
    for (const auto& i : node.input()) ctx.in.push_back(lookup(i));
    Outputs outs;
    try {
      outs = registry().at(node.op_type())(ctx);
    } catch (const InferenceError& e) {
      throw InferenceError(node.op_type() + " node '" + node.name() + "': " + e.what());
    } catch (const std::exception& e) {
      throw InferenceError(node.op_type() + " node '" + node.name() + "': " + e.what());
    }
    for (int o = 0; o < node.output_size() && o < static_cast<int>(outs.size()); ++o) {
      if (!node.output(o).empty()) env[node.output(o)] = std::move(outs[static_cast<std::size_t>(o)]);
    }
    for (const auto& i : node.input()) {
      if (--uses[i] == 0 && !keep.count(i) && i != impl_->input) env.erase(i);
    }
  }

  std::map<std::string, Tensor> result;
  for (const auto& w : wanted) result.emplace(w, *lookup(w));
  return result;
}

}  // namespace gmmd::onnx
