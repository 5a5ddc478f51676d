#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <fstream>
#include <random>

#include <json.hpp>

#include "gmmd/anchor_model.hpp"
#include "gmmd/backbone.hpp"
#include "gmmd/error.hpp"
#include "gmmd/features.hpp"
#include "gmmd/gram_cache.hpp"
#include "gmmd/npy.hpp"
#include "gmmd/onnx_graph.hpp"
#include "onnx_builder.hpp"
#include "temp_dir.hpp"

using gmmd::ImageBuffer;
using gmmd::LabeledImage;
using nlohmann::json;

namespace {

ImageBuffer random_image(std::size_t h, std::size_t w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  ImageBuffer img(h, w);
  for (auto& v : img.data()) v = u(rng);
  return img;
}

std::vector<float> ramp(std::size_t n, float start, float step) {
  std::vector<float> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = start + step * static_cast<float>(i);
  return v;
}

void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

// 3 -> 2 channel 3x3 convolution, padding 1.
const std::vector<float> kConvWeights = ramp(2 * 3 * 3 * 3, -0.5f, 0.0625f);
const std::vector<float> kConvBias{0.25f, -0.75f};

void save_conv_fixture(const fixture::TempDir& dir) {
  fixture::OnnxBuilder b({1, 3, -1, -1});
  b.floats("w", {2, 3, 3, 3}, kConvWeights);
  b.floats("b", {2}, kConvBias);
  auto& conv = b.node("Conv", {"input", "w", "b"}, {"conv1"});
  fixture::OnnxBuilder::attr(conv, "kernel_shape", std::vector<std::int64_t>{3, 3});
  fixture::OnnxBuilder::attr(conv, "pads", std::vector<std::int64_t>{1, 1, 1, 1});
  b.node("Relu", {"conv1"}, {"relu1"});
  b.output("relu1");
  b.save(dir / "conv.onnx");
  write_text(dir / "conv.json", R"({"backboneId": "conv-fixture", "family": "cnn", "modelFile": "conv.onnx",
    "layerOutputs": {"1": "conv1", "2": "relu1"}, "preprocessing": {"resize": "none"}})");
}

// Patchify with a 2x2 stride-2 convolution, flatten to tokens and prepend a
// learned CLS token: [1, 1 + (H/2)(W/2), 4].
void save_token_fixture(const fixture::TempDir& dir, int special_tokens) {
  fixture::OnnxBuilder b({1, 3, -1, -1});
  b.floats("pw", {4, 3, 2, 2}, ramp(48, -1.0f, 0.05f));
  b.floats("cls", {1, 1, 4}, {9.0f, 8.0f, 7.0f, 6.0f});
  b.ints("flat_shape", {3}, {1, 4, -1});
  auto& conv = b.node("Conv", {"input", "pw"}, {"patches"});
  fixture::OnnxBuilder::attr(conv, "kernel_shape", std::vector<std::int64_t>{2, 2});
  fixture::OnnxBuilder::attr(conv, "strides", std::vector<std::int64_t>{2, 2});
  b.node("Reshape", {"patches", "flat_shape"}, {"flat"});
  auto& tr = b.node("Transpose", {"flat"}, {"tokens"});
  fixture::OnnxBuilder::attr(tr, "perm", std::vector<std::int64_t>{0, 2, 1});
  auto& cat = b.node("Concat", {"cls", "tokens"}, {"with_cls"});
  fixture::OnnxBuilder::attr(cat, "axis", std::int64_t{1});
  b.output("with_cls");
  b.save(dir / "vit.onnx");
  write_text(dir / "vit.json", json{{"backboneId", "vit-fixture"},
                                    {"family", "tokens"},
                                    {"modelFile", "vit.onnx"},
                                    {"layerOutputs", {{"1", "with_cls"}}},
                                    {"patchSize", 2},
                                    {"specialTokens", special_tokens}}
                                   .dump());
}

gmmd::onnx::Tensor run_single(const fixture::OnnxBuilder& b, const gmmd::onnx::Tensor& input,
                              const std::string& out) {
  const auto g = gmmd::onnx::Graph::from_bytes(b.bytes());
  const std::string wanted[] = {out};
  return g.run(input, wanted).at(out);
}

}  // namespace

TEST_CASE("preprocess examples") {
  const auto img = random_image(6, 5, 1);
  gmmd::Preprocessing identity;
  const auto in = gmmd::preprocess(img, identity);
  REQUIRE(in.height == 6);
  REQUIRE(in.width == 5);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < 6; ++y)
      for (std::size_t x = 0; x < 5; ++x) CHECK(in.chw[(c * 6 + y) * 5 + x] == img.at(y, x, c));

  gmmd::Preprocessing half;
  half.resize = gmmd::ResizePolicy::Exact;
  half.height = 8;
  half.width = 8;
  const auto small = gmmd::preprocess(ImageBuffer(16, 16, 0.375f), half);
  REQUIRE(small.chw.size() == 3 * 64);
  for (float v : small.chw) CHECK(v == doctest::Approx(0.375f).epsilon(1e-6));

  gmmd::Preprocessing signed_range;
  signed_range.mean = {0.5, 0.5, 0.5};
  signed_range.std = {0.5, 0.5, 0.5};
  const auto ones = gmmd::preprocess(ImageBuffer(2, 2, 1.0f), signed_range);
  for (float v : ones.chw) CHECK(v == 1.0f);
  const auto zeros = gmmd::preprocess(ImageBuffer(2, 2, 0.0f), signed_range);
  for (float v : zeros.chw) CHECK(v == -1.0f);
}

TEST_CASE("preprocessing json round trip and hash") {
  gmmd::Preprocessing p;
  p.resize = gmmd::ResizePolicy::ShortSide;
  p.short_side = 518;
  p.crop_height = p.crop_width = 518;
  p.mean = {0.485, 0.456, 0.406};
  p.std = {0.229, 0.224, 0.225};
  const auto q = gmmd::Preprocessing::from_json(p.to_json());
  CHECK(q.to_json() == p.to_json());
  CHECK(q.hash() == p.hash());
  CHECK(q.hash() != gmmd::Preprocessing{}.hash());

  const auto crop = gmmd::preprocess(random_image(600, 700, 2), p);
  CHECK(crop.height == 518);
  CHECK(crop.width == 518);

  gmmd::Preprocessing multiple;
  multiple.resize = gmmd::ResizePolicy::MultipleOf;
  multiple.multiple = 64;
  const auto m = gmmd::preprocess(random_image(200, 130, 3), multiple);
  CHECK(m.height == 192);
  CHECK(m.width == 128);
}

TEST_CASE("toy backbone") {
  const auto fx = gmmd::make_pixel_patch_backbone();
  CHECK(fx->spec().backbone_id == gmmd::kPixelPatchId);
  CHECK(fx->spec().layers() == std::vector<int>{1, 2, 3, 4});

  SUBCASE("constant image gives constant activations") {
    ImageBuffer gray(32, 24);
    for (std::size_t y = 0; y < 32; ++y)
      for (std::size_t x = 0; x < 24; ++x)
        for (std::size_t c = 0; c < 3; ++c) gray.at(y, x, c) = 0.25f * static_cast<float>(c + 1);
    for (int layer : {1, 2, 3, 4}) {
      const auto act = fx->extract(gray, layer);
      CHECK(act.dim() == 3);
      const std::size_t block = std::size_t{8} >> (layer - 1);
      CHECK(act.height() == 32 / block);
      CHECK(act.width() == 24 / block);
      const auto v = act.values();
      const std::size_t plane = act.positions();
      for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t p = 0; p < plane; ++p) CHECK(v[c * plane + p] == 0.25 * static_cast<double>(c + 1));
    }
  }

  SUBCASE("block means and partial edge blocks") {
    const auto img = random_image(10, 9, 4);
    const auto act = fx->extract(img, 1);
    REQUIRE(act.height() == 2);
    REQUIRE(act.width() == 2);
    // Bottom-right block covers rows 8..9 and column 8.
    double acc = 0.0;
    for (std::size_t y = 8; y < 10; ++y) acc += img.at(y, 8, 1);
    CHECK(act.values()[1 * 4 + 3] == doctest::Approx(acc / 2.0).epsilon(1e-12));
    const auto pix = fx->extract(img, 4);
    CHECK(pix.values()[2 * 90 + 3 * 9 + 5] == img.at(3, 5, 2));
  }

  SUBCASE("vector length is resolution invariant") {
    for (auto [h, w] : {std::pair<std::size_t, std::size_t>{32, 32}, {64, 48}, {17, 101}}) {
      const auto img = random_image(h, w, h * w);
      for (int layer : {1, 4}) CHECK(gmmd::gram_vector(fx->extract(img, layer)).size() == 6);
    }
  }

  SUBCASE("open_backbone") {
    CHECK(gmmd::open_backbone("pixel-patch")->spec().backbone_id == "pixel-patch");
    CHECK_THROWS_AS(gmmd::open_backbone("/nonexistent/sidecar.json"), gmmd::Error);
    CHECK_THROWS_AS(fx->extract(ImageBuffer(8, 8), 5), gmmd::InputError);
  }
}

TEST_CASE("onnx conv fixture matches direct convolution") {
  fixture::TempDir dir;
  save_conv_fixture(dir);
  const auto spec = gmmd::BackboneSpec::load(dir / "conv.json");
  CHECK(spec.family == gmmd::Family::CNN);
  CHECK(spec.layers() == std::vector<int>{1, 2});
  const auto fx = gmmd::make_onnx_backbone(spec);

  const auto img = random_image(4, 4, 5);
  const auto acts = fx->extract(img, std::vector<int>{1, 2});
  REQUIRE(acts.size() == 2);
  REQUIRE(acts[0].dim() == 2);
  REQUIRE(acts[0].height() == 4);
  REQUIRE(acts[0].width() == 4);
  for (std::size_t o = 0; o < 2; ++o) {
    for (int y = 0; y < 4; ++y) {
      for (int x = 0; x < 4; ++x) {
        double expect = kConvBias[o];
        for (std::size_t c = 0; c < 3; ++c)
          for (int ky = 0; ky < 3; ++ky)
            for (int kx = 0; kx < 3; ++kx) {
              const int iy = y + ky - 1, ix = x + kx - 1;
              if (iy < 0 || iy >= 4 || ix < 0 || ix >= 4) continue;
              expect += static_cast<double>(kConvWeights[((o * 3 + c) * 3 + ky) * 3 + kx]) *
                        img.at(static_cast<std::size_t>(iy), static_cast<std::size_t>(ix), c);
            }
        const std::size_t p = static_cast<std::size_t>(y * 4 + x);
        CHECK(acts[0].values()[o * 16 + p] == doctest::Approx(expect).epsilon(1e-6));
        CHECK(acts[1].values()[o * 16 + p] == doctest::Approx(std::max(expect, 0.0)).epsilon(1e-6));
      }
    }
  }
  CHECK(fx->embedding(img, 2).size() == 32);

  const std::vector<LabeledImage> batch{{"a", img}, {"b", random_image(6, 6, 6)}};
  const auto serial = gmmd::extract_activations(*fx, 2, batch, 1);
  const auto parallel = gmmd::extract_activations(*fx, 2, batch, 2);
  CHECK(serial[1].height() == 6);
  for (std::size_t i = 0; i < 2; ++i)
    CHECK(std::equal(serial[i].values().begin(), serial[i].values().end(), parallel[i].values().begin()));
}

TEST_CASE("token family drops special tokens and checks the patch grid") {
  fixture::TempDir dir;
  save_token_fixture(dir, 1);
  const auto fx = gmmd::open_backbone((dir / "vit.json").string());
  const auto img = random_image(6, 4, 7);
  const auto act = fx->extract(img, 1);
  CHECK(act.layout() == gmmd::Layout::Tokens);
  CHECK(act.token_count() == 6);
  CHECK(act.dim() == 4);
  // First patch token: component 0 is the 2x2 patch at the origin against filter 0.
  const auto w = ramp(48, -1.0f, 0.05f);
  double expect = 0.0;
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < 2; ++y)
      for (std::size_t x = 0; x < 2; ++x) expect += static_cast<double>(w[(c * 2 + y) * 2 + x]) * img.at(y, x, c);
  CHECK(act.values()[0] == doctest::Approx(expect).epsilon(1e-6));
  CHECK(gmmd::gram_vector(act).size() == 10);

  fixture::TempDir bad;
  save_token_fixture(bad, 0);
  const auto no_drop = gmmd::open_backbone((bad / "vit.json").string());
  CHECK_THROWS_AS(no_drop->extract(img, 1), gmmd::InferenceError);
  const std::vector<LabeledImage> batch{{"img-17", img}};
  try {
    gmmd::extract_activations(*no_drop, 1, batch);
    FAIL("expected an inference error");
  } catch (const gmmd::InferenceError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("img-17") != std::string::npos);
    CHECK(msg.find("layer 1") != std::string::npos);
  }
}

TEST_CASE("onnx model errors") {
  fixture::OnnxBuilder unsupported({1, 3, 4, 4});
  unsupported.node("NonMaxSuppression", {"input"}, {"out"});
  CHECK_THROWS_AS(gmmd::onnx::Graph::from_bytes(unsupported.bytes()), gmmd::InferenceError);

  fixture::OnnxBuilder custom({1, 3, 4, 4});
  custom.node("Relu", {"input"}, {"out"}, "com.example");
  CHECK_THROWS_AS(gmmd::onnx::Graph::from_bytes(custom.bytes()), gmmd::InferenceError);

  CHECK_THROWS_AS(gmmd::onnx::Graph::from_bytes("not a model"), gmmd::InferenceError);

  fixture::TempDir dir;
  save_conv_fixture(dir);
  auto spec = gmmd::BackboneSpec::load(dir / "conv.json");
  spec.layer_outputs[3] = "missing";
  CHECK_THROWS_AS(gmmd::make_onnx_backbone(spec), gmmd::InferenceError);
  CHECK_THROWS_AS(spec.output_for(9), gmmd::InputError);
}

TEST_CASE("onnx operators") {
  using gmmd::onnx::Tensor;
  using fixture::OnnxBuilder;

  SUBCASE("Gemm with transposed B") {
    OnnxBuilder b({2, 3});
    b.floats("B", {2, 3}, {1, 0, 2, -1, 3, 1});
    b.floats("C", {2}, {0.5f, -0.5f});
    auto& n = b.node("Gemm", {"input", "B", "C"}, {"y"});
    OnnxBuilder::attr(n, "transB", std::int64_t{1});
    const auto y = run_single(b, Tensor::floats({2, 3}, {1, 2, 3, 4, 5, 6}), "y");
    CHECK(y.shape == std::vector<std::int64_t>{2, 2});
    CHECK(y.f == std::vector<float>{7.5f, 7.5f, 16.5f, 16.5f});
  }

  SUBCASE("Softmax over the last axis") {
    OnnxBuilder b({1, 3});
    b.node("Softmax", {"input"}, {"y"});
    const auto y = run_single(b, Tensor::floats({1, 3}, {1, 2, 3}), "y");
    const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
    for (int k = 0; k < 3; ++k) CHECK(y.f[k] == doctest::Approx(std::exp(k + 1.0) / z).epsilon(1e-6));
  }

  SUBCASE("LayerNormalization") {
    OnnxBuilder b({2, 4});
    b.floats("g", {4}, {1, 1, 2, 2});
    b.floats("beta", {4}, {0, 0, 0, 1});
    auto& n = b.node("LayerNormalization", {"input", "g", "beta"}, {"y"});
    OnnxBuilder::attr(n, "epsilon", 0.0f);
    const auto y = run_single(b, Tensor::floats({2, 4}, {1, 2, 3, 4, 0, 0, 0, 8}), "y");
    const double s = std::sqrt(1.25);
    CHECK(y.f[0] == doctest::Approx(-1.5 / s).epsilon(1e-6));
    CHECK(y.f[3] == doctest::Approx(2 * 1.5 / s + 1).epsilon(1e-6));
    CHECK(y.f[7] == doctest::Approx(2 * 6.0 / std::sqrt(12.0) + 1).epsilon(1e-6));
  }

  SUBCASE("MaxPool and GlobalAveragePool") {
    OnnxBuilder b({1, 1, 4, 4});
    auto& mp = b.node("MaxPool", {"input"}, {"mp"});
    OnnxBuilder::attr(mp, "kernel_shape", std::vector<std::int64_t>{2, 2});
    OnnxBuilder::attr(mp, "strides", std::vector<std::int64_t>{2, 2});
    b.node("GlobalAveragePool", {"input"}, {"gap"});
    const auto g = gmmd::onnx::Graph::from_bytes(b.bytes());
    const std::string wanted[] = {"mp", "gap"};
    const auto out = g.run(Tensor::floats({1, 1, 4, 4}, ramp(16, 0.0f, 1.0f)), wanted);
    CHECK(out.at("mp").f == std::vector<float>{5, 7, 13, 15});
    CHECK(out.at("gap").shape == std::vector<std::int64_t>{1, 1, 1, 1});
    CHECK(out.at("gap").f[0] == 7.5f);
  }

  SUBCASE("shape arithmetic feeding Reshape") {
    OnnxBuilder b({2, 3, 4});
    b.ints("idx", {}, {0});
    b.ints("tail", {1}, {-1});
    b.node("Shape", {"input"}, {"shape"});
    b.node("Gather", {"shape", "idx"}, {"batch"});
    auto& u = b.node("Unsqueeze", {"batch"}, {"batch1"});
    OnnxBuilder::attr(u, "axes", std::vector<std::int64_t>{0});
    auto& cat = b.node("Concat", {"batch1", "tail"}, {"target"});
    OnnxBuilder::attr(cat, "axis", std::int64_t{0});
    b.node("Reshape", {"input", "target"}, {"y"});
    const auto y = run_single(b, Tensor::floats({2, 3, 4}, ramp(24, 0.0f, 1.0f)), "y");
    CHECK(y.shape == std::vector<std::int64_t>{2, 12});
    CHECK(y.f[13] == 13.0f);
  }

  SUBCASE("Slice and MatMul broadcast") {
    OnnxBuilder b({1, 4, 2});
    b.ints("starts", {1}, {1});
    b.ints("ends", {1}, {3});
    b.ints("axes", {1}, {1});
    b.floats("m", {2, 1}, {1, 10});
    b.node("Slice", {"input", "starts", "ends", "axes"}, {"mid"});
    b.node("MatMul", {"mid", "m"}, {"y"});
    const auto y = run_single(b, Tensor::floats({1, 4, 2}, ramp(8, 0.0f, 1.0f)), "y");
    CHECK(y.shape == std::vector<std::int64_t>{1, 2, 1});
    CHECK(y.f == std::vector<float>{32, 54});
  }

  SUBCASE("Gelu and Erf") {
    OnnxBuilder b({3}, 20);
    b.node("Gelu", {"input"}, {"g"});
    b.node("Erf", {"input"}, {"e"});
    const auto g = gmmd::onnx::Graph::from_bytes(b.bytes());
    const std::string wanted[] = {"g", "e"};
    const auto out = g.run(Tensor::floats({3}, {-1, 0, 2}), wanted);
    const double xs[] = {-1, 0, 2};
    for (int k = 0; k < 3; ++k) {
      const double x = xs[k];
      CHECK(out.at("g").f[k] == doctest::Approx(0.5 * x * (1 + std::erf(x / std::sqrt(2.0)))).epsilon(1e-6));
    }
    CHECK(out.at("e").f[2] == doctest::Approx(std::erf(2.0)).epsilon(1e-6));
  }

  SUBCASE("unknown value requested") {
    OnnxBuilder b({2});
    b.node("Relu", {"input"}, {"y"});
    const auto g = gmmd::onnx::Graph::from_bytes(b.bytes());
    const std::string wanted[] = {"nope"};
    CHECK_THROWS_AS(g.run(Tensor::floats({2}, {1, 2}), wanted), gmmd::InferenceError);
  }
}

TEST_CASE("npy round trip") {
  fixture::TempDir dir;
  const std::vector<double> data{1.0, -2.5, 1e-300, 3.0, std::nextafter(1.0, 2.0), 0.1};
  const std::size_t shape[] = {2, 3};
  gmmd::write_npy(dir / "a.npy", shape, data);
  const auto a = gmmd::read_npy(dir / "a.npy");
  CHECK(a.shape == std::vector<std::size_t>{2, 3});
  CHECK(a.descr == "<f8");
  CHECK(a.data == data);
  CHECK(a.row_bytes() == 24);
  CHECK(std::filesystem::file_size(dir / "a.npy") % 64 == 48);

  // float32 array as written by numpy: np.save(f, np.array([[0.5, -1], [2, 8]], dtype="<f4"))
  std::string header = "{'descr': '<f4', 'fortran_order': False, 'shape': (2, 2), }";
  header.append(128 - 10 - header.size() - 1, ' ');
  header += '\n';
  std::string file("\x93NUMPY\x01\x00", 8);
  file += static_cast<char>(header.size() & 0xFF);
  file += static_cast<char>(header.size() >> 8);
  file += header;
  for (float f : {0.5f, -1.0f, 2.0f, 8.0f}) file.append(reinterpret_cast<const char*>(&f), 4);
  write_text(dir / "f4.npy", file);
  const auto b = gmmd::read_npy(dir / "f4.npy");
  CHECK(b.descr == "<f4");
  CHECK(b.data == std::vector<double>{0.5, -1, 2, 8});

  std::string fortran = file;
  fortran.replace(fortran.find("False"), 5, "True ");
  write_text(dir / "fortran.npy", fortran);
  CHECK_THROWS_AS(gmmd::read_npy(dir / "fortran.npy"), gmmd::InputError);
  write_text(dir / "junk.npy", "hello");
  CHECK_THROWS_AS(gmmd::read_npy(dir / "junk.npy"), gmmd::InputError);
}

TEST_CASE("vector bundles") {
  fixture::TempDir dir;
  gmmd::VectorBundle b;
  b.backbone_id = "pixel-patch";
  b.layer_index = 2;
  b.source_dim = 2;
  b.records = {{"x", "p1", "d1"}, {"y", "p1", ""}};
  b.vectors = gmmd::VectorSet(2, 3, {1, 2, 3, 4, 5, 6.25});
  gmmd::write_vector_bundle(dir.path(), b);
  const auto r = gmmd::read_vector_bundle(dir.path());
  CHECK(r.vectors == b.vectors);
  CHECK(r.records[0].image_digest == "d1");
  CHECK(r.records[1].id == "y");
  CHECK(r.source_dim == 2);
  CHECK(gmmd::source_dim_for(6) == 3);

  SUBCASE("unknown manifest keys warn") {
    auto m = json::parse(std::ifstream(dir / gmmd::kManifestFile));
    m["exporter"] = "model-export 0.3";
    write_text(dir / gmmd::kManifestFile, m.dump());
    std::vector<std::string> warnings;
    gmmd::read_vector_bundle(dir.path(), &warnings);
    REQUIRE(warnings.size() == 1);
    CHECK(warnings[0].find("exporter") != std::string::npos);
  }

  SUBCASE("a flipped byte is detected") {
    std::fstream f(dir / gmmd::kVectorsFile, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(-3, std::ios::end);
    f.put('\x7f');
    f.close();
    CHECK_THROWS_AS(gmmd::read_vector_bundle(dir.path()), gmmd::CorruptionError);
  }

  SUBCASE("row count mismatch") {
    auto m = json::parse(std::ifstream(dir / gmmd::kManifestFile));
    m["rows"].erase(1);
    write_text(dir / gmmd::kManifestFile, m.dump());
    CHECK_THROWS_AS(gmmd::read_vector_bundle(dir.path()), gmmd::InputError);
  }
}

TEST_CASE("gram cache") {
  fixture::TempDir dir;
  const gmmd::GramVector v{2, {0.1, 1.0 / 3.0, std::nextafter(2.0, 3.0)}};
  const gmmd::CacheKey key{"pixel-patch", 1, "img-1", "prep", "digest-a"};
  {
    gmmd::GramCache cache(dir.path());
    CHECK_FALSE(cache.get(key).has_value());
    cache.put(key, v);
    const auto got = cache.get(key);
    REQUIRE(got.has_value());
    CHECK(got->values == v.values);
    CHECK(got->source_dim == 2);
    auto other = key;
    other.preprocessing_hash = "prep2";
    CHECK_FALSE(cache.get(other).has_value());
    cache.flush();
  }
  CHECK(std::filesystem::exists(dir / "pixel-patch" / "1" / gmmd::kVectorsFile));
  gmmd::GramCache reopened(dir.path());
  const auto got = reopened.get(key);
  REQUIRE(got.has_value());
  CHECK(got->values == v.values);
  auto changed = key;
  changed.image_digest = "digest-b";
  CHECK_FALSE(reopened.get(changed).has_value());

  std::fstream f(dir / "pixel-patch" / "1" / gmmd::kVectorsFile, std::ios::in | std::ios::out | std::ios::binary);
  f.seekp(-1, std::ios::end);
  f.put('\x01');
  f.close();
  gmmd::GramCache corrupted(dir.path());
  CHECK_THROWS_AS(corrupted.get(key), gmmd::CorruptionError);
}

TEST_CASE("cached features equal fresh features") {
  fixture::TempDir dir;
  std::shared_ptr<const gmmd::FeatureExtractor> fx = gmmd::make_pixel_patch_backbone();
  std::vector<LabeledImage> images;
  for (int i = 0; i < 5; ++i) images.push_back({"im" + std::to_string(i), random_image(16, 16, 100 + i)});
  const std::vector<int> layers{1, 3};

  gmmd::BackboneFeatures fresh(fx, nullptr, 2);
  const auto expect = fresh.gram_vectors(images, layers);

  gmmd::GramCache cache(dir.path());
  gmmd::BackboneFeatures first(fx, &cache, 2);
  CHECK(first.gram_vectors(images, layers) == expect);
  // Counters are per (image, layer).
  CHECK(first.cache_misses() == 10);
  cache.flush();

  gmmd::GramCache cache2(dir.path());
  gmmd::BackboneFeatures second(fx, &cache2, 1);
  CHECK(second.gram_vectors(images, layers) == expect);
  CHECK(second.cache_hits() == 10);
  CHECK(second.cache_misses() == 0);

  images[2].image.at(0, 0, 0) += 0.5f;
  gmmd::BackboneFeatures third(fx, &cache2, 1);
  third.gram_vectors(images, layers);
  CHECK(third.cache_misses() == 2);
}

TEST_CASE("anchor model") {
  std::shared_ptr<const gmmd::FeatureExtractor> fx = gmmd::make_pixel_patch_backbone();
  gmmd::BackboneFeatures features(fx);

  SUBCASE("two distinct images: single-pair median") {
    const std::vector<LabeledImage> anchor{{"a", random_image(16, 16, 1)}, {"b", random_image(16, 16, 2)}};
    const auto model = gmmd::build_anchor_model(features, 2, anchor, 7);
    REQUIRE(model.vectors.size() == 2);
    CHECK(model.vectors.dim() == 6);
    CHECK(model.source_dim == 3);
    double d2 = 0.0;
    for (std::size_t k = 0; k < 6; ++k) {
      const double diff = model.vectors.row(0)[k] - model.vectors.row(1)[k];
      d2 += diff * diff;
    }
    CHECK(model.gamma_med == doctest::Approx(1.0 / (2.0 * d2)).epsilon(1e-14));
    // Two standardized points sit at +-1 in every component.
    CHECK(d2 == doctest::Approx(24.0).epsilon(1e-12));
    CHECK(model.provenance.image_ids == std::vector<std::string>{"a", "b"});
    CHECK(model.provenance.preprocessing_hash == gmmd::Preprocessing{}.hash());
  }

  SUBCASE("identical anchors are degenerate") {
    const auto img = random_image(16, 16, 3);
    const std::vector<LabeledImage> anchor{{"a", img}, {"b", img}, {"c", img}};
    CHECK_THROWS_AS(gmmd::build_anchor_model(features, 1, anchor, 0), gmmd::DegenerateBandwidthError);
    CHECK_THROWS_AS(gmmd::build_anchor_model(features, 1, std::span(anchor).first(1), 0), gmmd::FitError);
  }

  SUBCASE("persistence is bit-exact") {
    fixture::TempDir dir;
    std::vector<LabeledImage> anchor;
    for (int i = 0; i < 12; ++i) anchor.push_back({"a" + std::to_string(i), random_image(24, 20, 50 + i)});
    const auto model = gmmd::build_anchor_model(features, 3, anchor, 99);
    gmmd::save_anchor_model(dir / "anchor.gmmd", model);
    const auto back = gmmd::load_anchor_model(dir / "anchor.gmmd");
    CHECK(back.gamma_med == model.gamma_med);
    CHECK(back.standardizer.mean == model.standardizer.mean);
    CHECK(back.standardizer.stddev == model.standardizer.stddev);
    CHECK(back.standardizer.epsilon_floor == model.standardizer.epsilon_floor);
    CHECK(back.vectors == model.vectors);
    CHECK(back.backbone_id == "pixel-patch");
    CHECK(back.layer_index == 3);
    CHECK(back.provenance.seed == 99);
    CHECK(back.provenance.image_ids == model.provenance.image_ids);
    CHECK(gmmd::median_heuristic_gamma(back.vectors) == back.gamma_med);

    const auto raw = features.gram_vectors(anchor, 3);
    CHECK(back.standardize(raw) == model.vectors);
    CHECK_THROWS_AS(back.standardize(gmmd::VectorSet(2, 3, {1, 2, 3, 4, 5, 6})), gmmd::InputError);

    write_text(dir / "bad.gmmd", "GMMD-ANCHOR/2\n");
    CHECK_THROWS_AS(gmmd::load_anchor_model(dir / "bad.gmmd"), gmmd::InputError);
  }
}
