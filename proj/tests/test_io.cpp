#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "dfkd/data.hpp"
#include "dfkd/io.hpp"
#include "dfkd/model.hpp"
#include "dfkd/quant.hpp"
#include "dfkd/rng.hpp"
#include "doctest.h"
#include "json.hpp"
#include "temp_dir.hpp"

using namespace dfkd;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(bool(in));
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void spit(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary);
  REQUIRE(bool(out));
  out.write(bytes.data(), std::streamsize(bytes.size()));
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
  return a.shape == b.shape &&
         std::memcmp(a.data.data(), b.data.data(), a.data.size() * sizeof(float)) == 0;
}

bool params_bitwise_equal(const Params& a, const Params& b) {
  if (a.tensors.size() != b.tensors.size() || a.running.size() != b.running.size())
    return false;
  for (const auto& [name, t] : a.tensors) {
    auto it = b.tensors.find(name);
    if (it == b.tensors.end() || !bitwise_equal(t, it->second)) return false;
  }
  for (const auto& [name, t] : a.running) {
    auto it = b.running.find(name);
    if (it == b.running.end() || !bitwise_equal(t, it->second)) return false;
  }
  return true;
}

IoErrorKind kind_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const IoError& e) {
    return e.kind;
  }
  FAIL("expected an IoError");
  return IoErrorKind::io;
}

Tensor random_tensor(std::vector<std::size_t> shape, std::uint64_t seed) {
  Tensor t(std::move(shape));
  Rng rng(seed);
  for (float& v : t.data) v = float(rng.normal());
  return t;
}

}  // namespace

TEST_CASE("tensor files round trip bitwise and write deterministically") {
  TempDir dir("io_roundtrip");
  TensorFile f;
  f.meta_json = R"({"n":3,"purpose":"test"})";
  Tensor a({2, 3});
  a.data = {0.0f, -0.0f, 1.5f, -2.25f, 1e-38f, 3.0e8f};
  f.tensors.emplace_back("a", a);
  f.tensors.emplace_back("b", random_tensor({4, 1, 2}, 9));
  f.tensors.emplace_back("scalarish", random_tensor({1}, 10));

  write_tensor_file(dir.file("f.dfkd"), f);
  TensorFile g = read_tensor_file(dir.file("f.dfkd"));

  CHECK(nlohmann::json::parse(g.meta_json) == nlohmann::json::parse(f.meta_json));
  REQUIRE(g.tensors.size() == f.tensors.size());
  for (std::size_t i = 0; i < f.tensors.size(); ++i) {
    CHECK(g.tensors[i].first == f.tensors[i].first);
    CHECK(bitwise_equal(g.tensors[i].second, f.tensors[i].second));
  }

  write_tensor_file(dir.file("f2.dfkd"), f);
  CHECK(slurp(dir.file("f.dfkd")) == slurp(dir.file("f2.dfkd")));

  CHECK_THROWS_AS(write_tensor_file(dir.file("bad.dfkd"), TensorFile{"not json", {}}),
                  std::invalid_argument);
}

TEST_CASE("model checkpoints restore spec and parameters exactly") {
  TempDir dir("io_model");
  ModelSpec spec = make_classifier(8, 8, 3, 4, 2, 3);
  Params params = init_params(spec, 42);
  for (auto& [name, t] : params.running) t = random_tensor(t.shape, 7);

  save_model(dir.file("m.dfkd"), spec, params);
  LoadedModel loaded = load_model(dir.file("m.dfkd"));

  CHECK(loaded.spec.name == spec.name);
  CHECK(loaded.spec.num_classes == spec.num_classes);
  CHECK(loaded.spec.in_h == spec.in_h);
  REQUIRE(loaded.spec.layers.size() == spec.layers.size());
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    CHECK(loaded.spec.layers[i].kind == spec.layers[i].kind);
    CHECK(loaded.spec.layers[i].in == spec.layers[i].in);
    CHECK(loaded.spec.layers[i].out == spec.layers[i].out);
  }
  CHECK(params_bitwise_equal(loaded.params, params));

  Params again = load_params_for(dir.file("m.dfkd"), spec);
  CHECK(params_bitwise_equal(again, params));

  ModelSpec renamed = spec;
  renamed.name = "other_display_name";
  CHECK(params_bitwise_equal(load_params_for(dir.file("m.dfkd"), renamed), params));

  ModelSpec wider = make_classifier(8, 8, 3, 5, 2, 3);
  CHECK(kind_of([&] { load_params_for(dir.file("m.dfkd"), wider); }) ==
        IoErrorKind::mismatch);
}

TEST_CASE("every corruption maps to its error kind") {
  TempDir dir("io_errors");
  const std::string path = dir.file("v.dfkd");
  TensorFile f;
  f.meta_json = R"({"kind":"model"})";
  f.tensors.emplace_back("w", random_tensor({3, 2}, 1));
  write_tensor_file(path, f);
  const std::string good = slurp(path);

  CHECK(kind_of([&] { read_tensor_file(dir.file("absent.dfkd")); }) == IoErrorKind::io);

  spit(dir.file("empty.dfkd"), "");
  CHECK(kind_of([&] { read_tensor_file(dir.file("empty.dfkd")); }) == IoErrorKind::truncated);

  spit(dir.file("magic.dfkd"), "NOTDFKD!" + good.substr(8));
  CHECK(kind_of([&] { read_tensor_file(dir.file("magic.dfkd")); }) == IoErrorKind::bad_magic);

  spit(dir.file("nolen.dfkd"), good.substr(0, 10));
  CHECK(kind_of([&] { read_tensor_file(dir.file("nolen.dfkd")); }) == IoErrorKind::truncated);

  spit(dir.file("shorthdr.dfkd"), good.substr(0, 20));
  CHECK(kind_of([&] { read_tensor_file(dir.file("shorthdr.dfkd")); }) ==
        IoErrorKind::truncated);

  spit(dir.file("shortpay.dfkd"), good.substr(0, good.size() - 1));
  CHECK(kind_of([&] { read_tensor_file(dir.file("shortpay.dfkd")); }) ==
        IoErrorKind::truncated);

  spit(dir.file("trailing.dfkd"), good + "x");
  CHECK(kind_of([&] { read_tensor_file(dir.file("trailing.dfkd")); }) ==
        IoErrorKind::mismatch);

  std::string badjson = good;
  // Flip a header byte: the '{' right after the 12-byte preamble.
  badjson[12] = ']';
  spit(dir.file("badjson.dfkd"), badjson);
  CHECK(kind_of([&] { read_tensor_file(dir.file("badjson.dfkd")); }) ==
        IoErrorKind::mismatch);
}

TEST_CASE("quantized model files round trip and are distinguishable") {
  TempDir dir("io_quant");
  ModelSpec teacher = make_classifier(8, 8, 3, 2, 2, 3);
  Params tparams = init_params(teacher, 3);
  ModelSpec gen = make_generator(8, 8, 8);
  Params gparams = init_params(gen, 4);
  QuantizedModel qm = df_quantize(teacher, tparams, gen, gparams, QuantConfig{}, 2, 4, 7);

  save_quantized_model(dir.file("q.dfkd"), qm);
  CHECK(is_quantized_model_file(dir.file("q.dfkd")));
  QuantizedModel back = load_quantized_model(dir.file("q.dfkd"));

  CHECK(back.config.weight_bits == qm.config.weight_bits);
  CHECK(back.config.activation_bits == qm.config.activation_bits);
  REQUIRE(back.weight_q.size() == qm.weight_q.size());
  for (const auto& [name, q] : qm.weight_q) {
    REQUIRE(back.weight_q.count(name) == 1);
    CHECK(back.weight_q.at(name).scale == q.scale);
    CHECK(back.weight_q.at(name).zero_point == q.zero_point);
    CHECK(back.weight_q.at(name).bits == q.bits);
  }
  REQUIRE(back.activation_q.size() == qm.activation_q.size());
  for (std::size_t i = 0; i < qm.activation_q.size(); ++i) {
    CHECK(back.activation_q[i].scale == qm.activation_q[i].scale);
    CHECK(back.activation_q[i].zero_point == qm.activation_q[i].zero_point);
  }
  CHECK(params_bitwise_equal(back.params, qm.params));

  Tensor x = random_tensor({2, 8, 8, 3}, 12);
  CHECK(bitwise_equal(quantized_logits(back, x), quantized_logits(qm, x)));

  save_model(dir.file("f.dfkd"), teacher, tparams);
  CHECK_FALSE(is_quantized_model_file(dir.file("f.dfkd")));
  CHECK(kind_of([&] { load_quantized_model(dir.file("f.dfkd")); }) ==
        IoErrorKind::mismatch);
  CHECK(kind_of([&] { load_model(dir.file("q.dfkd")); }) == IoErrorKind::mismatch);
}

TEST_CASE("dataset splits round trip and reject foreign files") {
  TempDir dir("io_data");
  Dataset ds = make_synthetic_dataset(8, 8, 3, 30, 12, 5);

  save_dataset_split(dir.file("train.dfkd"), ds.train);
  DatasetSplit back = load_dataset_split(dir.file("train.dfkd"));
  CHECK(bitwise_equal(back.images, ds.train.images));
  CHECK(bitwise_equal(back.labels, ds.train.labels));

  DatasetSplit broken = ds.train;
  broken.labels = Tensor({7, 3});
  CHECK_THROWS_AS(save_dataset_split(dir.file("broken.dfkd"), broken),
                  std::invalid_argument);

  ModelSpec spec = make_classifier(8, 8, 3, 2, 2, 3);
  save_model(dir.file("m.dfkd"), spec, init_params(spec, 0));
  CHECK(kind_of([&] { load_dataset_split(dir.file("m.dfkd")); }) == IoErrorKind::mismatch);
  CHECK(kind_of([&] { load_model(dir.file("train.dfkd")); }) == IoErrorKind::mismatch);
}
