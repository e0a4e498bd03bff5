#include "dfkd/io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>

#include "json.hpp"

static_assert(std::endian::native == std::endian::little,
              "file format is little-endian");

namespace dfkd {

namespace {

using nlohmann::json;

constexpr char kMagic[8] = {'D', 'F', 'A', 'D', 'K', 'D', '0', '1'};

json spec_to_json(const ModelSpec& spec) {
  json layers = json::array();
  for (const LayerDesc& l : spec.layers)
    layers.push_back({{"kind", layer_kind_name(l.kind)},
                      {"in", l.in},
                      {"out", l.out},
                      {"ksize", l.ksize},
                      {"stride", l.stride},
                      {"bias", l.bias},
                      {"target", l.target}});
  return {{"name", spec.name},     {"in_h", spec.in_h},
          {"in_w", spec.in_w},     {"in_c", spec.in_c},
          {"latent_dim", spec.latent_dim},
          {"num_classes", spec.num_classes},
          {"layers", layers}};
}

ModelSpec spec_from_json(const json& j) {
  ModelSpec spec;
  spec.name = j.at("name").get<std::string>();
  spec.in_h = j.at("in_h").get<std::size_t>();
  spec.in_w = j.at("in_w").get<std::size_t>();
  spec.in_c = j.at("in_c").get<std::size_t>();
  spec.latent_dim = j.at("latent_dim").get<std::size_t>();
  spec.num_classes = j.at("num_classes").get<std::size_t>();
  for (const json& lj : j.at("layers")) {
    LayerDesc l;
    l.kind = layer_kind_from_name(lj.at("kind").get<std::string>());
    l.in = lj.at("in").get<std::size_t>();
    l.out = lj.at("out").get<std::size_t>();
    l.ksize = lj.at("ksize").get<std::size_t>();
    l.stride = lj.at("stride").get<std::size_t>();
    l.bias = lj.at("bias").get<bool>();
    l.target = lj.at("target").get<std::vector<std::size_t>>();
    spec.layers.push_back(std::move(l));
  }
  return spec;
}

bool layers_equal(const LayerDesc& a, const LayerDesc& b) {
  return a.kind == b.kind && a.in == b.in && a.out == b.out &&
         a.ksize == b.ksize && a.stride == b.stride && a.bias == b.bias &&
         a.target == b.target;
}

// Structural identity; the display name is not part of the contract.
bool spec_struct_equal(const ModelSpec& a, const ModelSpec& b) {
  if (a.in_h != b.in_h || a.in_w != b.in_w || a.in_c != b.in_c ||
      a.latent_dim != b.latent_dim || a.num_classes != b.num_classes ||
      a.layers.size() != b.layers.size())
    return false;
  for (std::size_t i = 0; i < a.layers.size(); ++i)
    if (!layers_equal(a.layers[i], b.layers[i])) return false;
  return true;
}

json qparams_to_json(const QuantParams& q) {
  return {{"scale", q.scale},
          {"zero_point", q.zero_point},
          {"bits", q.bits},
          {"min", q.min},
          {"max", q.max}};
}

QuantParams qparams_from_json(const json& j) {
  QuantParams q;
  q.scale = j.at("scale").get<double>();
  q.zero_point = j.at("zero_point").get<int>();
  q.bits = j.at("bits").get<int>();
  q.min = j.at("min").get<double>();
  q.max = j.at("max").get<double>();
  return q;
}

json parse_meta(const TensorFile& file, const std::string& path) {
  json meta = json::parse(file.meta_json, nullptr, /*allow_exceptions=*/false);
  if (meta.is_discarded())
    throw IoError(IoErrorKind::mismatch,
                  path + ": header meta is not valid JSON");
  return meta;
}

std::string meta_kind(const json& meta) {
  return meta.is_object() && meta.contains("kind")
             ? meta.at("kind").get<std::string>()
             : "";
}

void require_kind(const json& meta, const char* kind, const std::string& path) {
  if (meta_kind(meta) != kind)
    throw IoError(IoErrorKind::mismatch, path + ": expected a " +
                                             std::string(kind) +
                                             " file, found \"" +
                                             meta_kind(meta) + "\"");
}

// Splits "param/..." and "running/..." entries back into a Params struct.
Params tensors_to_params(const TensorFile& file, const std::string& path) {
  Params p;
  for (const auto& [name, t] : file.tensors) {
    if (name.rfind("param/", 0) == 0)
      p.tensors.emplace(name.substr(6), t);
    else if (name.rfind("running/", 0) == 0)
      p.running.emplace(name.substr(8), t);
    else
      throw IoError(IoErrorKind::mismatch,
                    path + ": unexpected tensor entry \"" + name + "\"");
  }
  return p;
}

void append_params(TensorFile& file, const Params& params) {
  for (const auto& [name, t] : params.tensors)
    file.tensors.emplace_back("param/" + name, t);
  for (const auto& [name, t] : params.running)
    file.tensors.emplace_back("running/" + name, t);
}

// The stored parameter set must match the spec's layout exactly.
void check_params_match(const ModelSpec& spec, const Params& got,
                        const std::string& path) {
  const Params proto = init_params(spec, 0);
  auto check_side = [&](const std::map<std::string, Tensor>& want,
                        const std::map<std::string, Tensor>& have,
                        const char* side) {
    if (want.size() != have.size())
      throw IoError(IoErrorKind::mismatch,
                    path + ": expected " + std::to_string(want.size()) + " " +
                        side + " tensors, found " +
                        std::to_string(have.size()));
    for (const auto& [name, t] : want) {
      auto it = have.find(name);
      if (it == have.end())
        throw IoError(IoErrorKind::mismatch,
                      path + ": missing tensor \"" + name + "\"");
      if (!t.same_shape(it->second))
        throw IoError(IoErrorKind::mismatch,
                      path + ": tensor \"" + name + "\" has shape " +
                          it->second.shape_str() + ", expected " +
                          t.shape_str());
    }
  };
  check_side(proto.tensors, got.tensors, "parameter");
  check_side(proto.running, got.running, "running-stat");
}

}  // namespace

const char* io_error_kind_name(IoErrorKind kind) {
  switch (kind) {
    case IoErrorKind::io: return "io";
    case IoErrorKind::bad_magic: return "bad_magic";
    case IoErrorKind::truncated: return "truncated";
    case IoErrorKind::mismatch: return "mismatch";
  }
  return "unknown";
}

void write_tensor_file(const std::string& path, const TensorFile& file) {
  json header;
  header["meta"] = json::parse(file.meta_json, nullptr, false);
  if (header["meta"].is_discarded())
    throw std::invalid_argument("write_tensor_file: meta_json is not JSON");
  json list = json::array();
  for (const auto& [name, t] : file.tensors)
    list.push_back({{"name", name}, {"shape", t.shape}, {"dtype", "f32"}});
  header["tensors"] = std::move(list);
  const std::string header_text = header.dump();
  if (header_text.size() > 0xffffffffu)
    throw std::invalid_argument("write_tensor_file: header too large");

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(IoErrorKind::io, path + ": cannot open for writing");
  out.write(kMagic, sizeof kMagic);
  const std::uint32_t len = std::uint32_t(header_text.size());
  out.write(reinterpret_cast<const char*>(&len), sizeof len);
  out.write(header_text.data(), std::streamsize(header_text.size()));
  for (const auto& [name, t] : file.tensors)
    out.write(reinterpret_cast<const char*>(t.data.data()),
              std::streamsize(t.data.size() * sizeof(float)));
  out.flush();
  if (!out) throw IoError(IoErrorKind::io, path + ": write failed");
}

TensorFile read_tensor_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(IoErrorKind::io, path + ": cannot open");

  char magic[sizeof kMagic];
  in.read(magic, sizeof magic);
  if (in.gcount() != sizeof magic)
    throw IoError(IoErrorKind::truncated, path + ": shorter than the magic");
  if (std::memcmp(magic, kMagic, sizeof magic) != 0)
    throw IoError(IoErrorKind::bad_magic, path + ": not a DFADKD01 file");

  std::uint32_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof len);
  if (in.gcount() != sizeof len)
    throw IoError(IoErrorKind::truncated, path + ": missing header length");
  std::string header_text(len, '\0');
  in.read(header_text.data(), std::streamsize(len));
  if (std::size_t(in.gcount()) != len)
    throw IoError(IoErrorKind::truncated,
                  path + ": header shorter than its declared length");

  json header = json::parse(header_text, nullptr, false);
  if (header.is_discarded() || !header.is_object() ||
      !header.contains("tensors") || !header.contains("meta"))
    throw IoError(IoErrorKind::mismatch, path + ": malformed header");

  TensorFile file;
  file.meta_json = header.at("meta").dump();
  for (const json& entry : header.at("tensors")) {
    if (!entry.contains("name") || !entry.contains("shape"))
      throw IoError(IoErrorKind::mismatch, path + ": malformed tensor entry");
    if (entry.value("dtype", "f32") != std::string("f32"))
      throw IoError(IoErrorKind::mismatch,
                    path + ": unsupported dtype " +
                        entry.at("dtype").get<std::string>());
    const std::string name = entry.at("name").get<std::string>();
    const std::vector<std::size_t> shape =
        entry.at("shape").get<std::vector<std::size_t>>();
    Tensor t(shape);
    in.read(reinterpret_cast<char*>(t.data.data()),
            std::streamsize(t.data.size() * sizeof(float)));
    if (std::size_t(in.gcount()) != t.data.size() * sizeof(float))
      throw IoError(IoErrorKind::truncated,
                    path + ": payload for \"" + name + "\" is incomplete");
    file.tensors.emplace_back(name, std::move(t));
  }
  // Anything after the promised payloads means the file is not what the
  // header claims.
  in.peek();
  if (!in.eof())
    throw IoError(IoErrorKind::mismatch, path + ": trailing bytes after payload");
  return file;
}

void save_model(const std::string& path, const ModelSpec& spec,
                const Params& params) {
  TensorFile file;
  json meta;
  meta["kind"] = "model";
  meta["spec"] = spec_to_json(spec);
  file.meta_json = meta.dump();
  append_params(file, params);
  write_tensor_file(path, file);
}

LoadedModel load_model(const std::string& path) {
  const TensorFile file = read_tensor_file(path);
  const json meta = parse_meta(file, path);
  require_kind(meta, "model", path);
  LoadedModel out;
  out.spec = spec_from_json(meta.at("spec"));
  out.params = tensors_to_params(file, path);
  check_params_match(out.spec, out.params, path);
  return out;
}

Params load_params_for(const std::string& path, const ModelSpec& expected) {
  LoadedModel loaded = load_model(path);
  if (!spec_struct_equal(loaded.spec, expected))
    throw IoError(IoErrorKind::mismatch,
                  path + ": stored network \"" + loaded.spec.name +
                      "\" does not match the expected structure");
  return std::move(loaded.params);
}

void save_quantized_model(const std::string& path, const QuantizedModel& qm) {
  TensorFile file;
  json meta;
  meta["kind"] = "quantized_model";
  meta["spec"] = spec_to_json(qm.spec);
  meta["config"] = {{"weight_bits", qm.config.weight_bits},
                    {"activation_bits", qm.config.activation_bits}};
  json wq = json::object();
  for (const auto& [name, q] : qm.weight_q) wq[name] = qparams_to_json(q);
  meta["weight_q"] = std::move(wq);
  json aq = json::array();
  for (const QuantParams& q : qm.activation_q) aq.push_back(qparams_to_json(q));
  meta["activation_q"] = std::move(aq);
  file.meta_json = meta.dump();
  append_params(file, qm.params);
  write_tensor_file(path, file);
}

QuantizedModel load_quantized_model(const std::string& path) {
  const TensorFile file = read_tensor_file(path);
  const json meta = parse_meta(file, path);
  require_kind(meta, "quantized_model", path);
  QuantizedModel qm;
  qm.spec = spec_from_json(meta.at("spec"));
  qm.params = tensors_to_params(file, path);
  check_params_match(qm.spec, qm.params, path);
  qm.config.weight_bits = meta.at("config").at("weight_bits").get<int>();
  qm.config.activation_bits = meta.at("config").at("activation_bits").get<int>();
  for (const auto& [name, qj] : meta.at("weight_q").items())
    qm.weight_q.emplace(name, qparams_from_json(qj));
  for (const json& qj : meta.at("activation_q"))
    qm.activation_q.push_back(qparams_from_json(qj));
  return qm;
}

bool is_quantized_model_file(const std::string& path) {
  const TensorFile file = read_tensor_file(path);
  return meta_kind(parse_meta(file, path)) == "quantized_model";
}

void save_dataset_split(const std::string& path, const DatasetSplit& split) {
  if (split.images.rank() != 4 || split.labels.rank() != 2 ||
      split.images.dim(0) != split.labels.dim(0))
    throw std::invalid_argument("save_dataset_split: images (N,H,W,C) and "
                                "labels (N,K) must agree on N");
  TensorFile file;
  file.meta_json = R"({"kind":"dataset"})";
  file.tensors.emplace_back("images", split.images);
  file.tensors.emplace_back("labels", split.labels);
  write_tensor_file(path, file);
}

DatasetSplit load_dataset_split(const std::string& path) {
  const TensorFile file = read_tensor_file(path);
  require_kind(parse_meta(file, path), "dataset", path);
  DatasetSplit out;
  bool have_images = false, have_labels = false;
  for (const auto& [name, t] : file.tensors) {
    if (name == "images") {
      out.images = t;
      have_images = true;
    } else if (name == "labels") {
      out.labels = t;
      have_labels = true;
    }
  }
  if (!have_images || !have_labels || out.images.rank() != 4 ||
      out.labels.rank() != 2 || out.images.dim(0) != out.labels.dim(0))
    throw IoError(IoErrorKind::mismatch,
                  path + ": dataset file lacks matching images and labels");
  return out;
}

}  // namespace dfkd
