#pragma once

#include <cstdint>
#include <string>

#include <json.hpp>

#include "gcnkit/data.hpp"
#include "gcnkit/network.hpp"

namespace gcnkit::cli {

using nlohmann::json;

// Version string baked in at configure time.
const char* version();

json config_to_json(const SegConfig& c);
SegConfig config_from_json(const json& j);

// Writes the weights to `path` and a manifest sidecar `path + ".json"` that
// carries the architecture text, head config and `run` (flags, seeds, ...).
void save_model(const std::string& path, const SegModel& model, const json& run);
// Rebuilds the model from the sidecar and loads the weights.
SegModel load_model(const std::string& path);
json load_manifest(const std::string& model_path);

// "synth:SEED,N" or a directory of PPM / PGM pairs.
struct DataSource {
  bool synthetic = false;
  std::uint64_t seed = 0;
  int count = 0;
  std::string dir;
};
DataSource parse_data_source(const std::string& text);
Dataset load_data(const DataSource& src, int size, int classes);

// Writes `j` (pretty, trailing newline); throws InputError on failure.
void write_json(const std::string& path, const json& j);

}  // namespace gcnkit::cli
