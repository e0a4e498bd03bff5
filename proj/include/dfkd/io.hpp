#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "dfkd/model.hpp"
#include "dfkd/quant.hpp"
#include "dfkd/tensor.hpp"

namespace dfkd {

enum class IoErrorKind {
  io,         // cannot open, read or write
  bad_magic,  // not one of our files
  truncated,  // shorter than its header promises
  mismatch,   // structure differs from what the caller expects
};

const char* io_error_kind_name(IoErrorKind kind);

class IoError : public std::runtime_error {
 public:
  IoError(IoErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind(kind) {}
  IoErrorKind kind;
};

/// On-disk container: 8-byte magic, little-endian u32 header length, a JSON
/// header describing the payload, then the raw little-endian float payloads
/// in header order.
struct TensorFile {
  std::string meta_json;  // arbitrary JSON object text, "{}" when unused
  std::vector<std::pair<std::string, Tensor>> tensors;
};

void write_tensor_file(const std::string& path, const TensorFile& file);
TensorFile read_tensor_file(const std::string& path);

// ---- model checkpoints ----

void save_model(const std::string& path, const ModelSpec& spec,
                const Params& params);

struct LoadedModel {
  ModelSpec spec;
  Params params;
};

LoadedModel load_model(const std::string& path);

/// Loads parameters for a model whose structure is already known; throws
/// IoError(mismatch) if the stored network differs.
Params load_params_for(const std::string& path, const ModelSpec& expected);

// ---- quantized model checkpoints ----

void save_quantized_model(const std::string& path, const QuantizedModel& qm);
QuantizedModel load_quantized_model(const std::string& path);

/// True when the file stores a quantized model rather than a float one.
bool is_quantized_model_file(const std::string& path);

// ---- dataset splits ----

struct DatasetSplit {
  Tensor images;  // (N, H, W, 3) in [-1, 1]
  Tensor labels;  // (N, K) one-hot
};

void save_dataset_split(const std::string& path, const DatasetSplit& split);
DatasetSplit load_dataset_split(const std::string& path);

}  // namespace dfkd
