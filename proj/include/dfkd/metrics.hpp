#pragma once

#include <string>

#include "dfkd/train.hpp"

namespace dfkd {

/// One JSON object per epoch, one per line, fixed key order. Timing is kept
/// out of this file so identical runs produce byte-identical logs.
std::string metrics_to_jsonl(const RunMetrics& metrics);

void write_metrics_jsonl(const std::string& path, const RunMetrics& metrics);

RunMetrics read_metrics_jsonl(const std::string& path);

}  // namespace dfkd
