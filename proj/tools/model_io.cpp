#include "model_io.hpp"

#include <fstream>
#include <sstream>

#include "gcnkit/error.hpp"
#include "gcnkit/serialize.hpp"

#ifndef GCNKIT_VERSION
#define GCNKIT_VERSION "0.0.0"
#endif

namespace gcnkit::cli {

const char* version() { return GCNKIT_VERSION; }

json config_to_json(const SegConfig& c) {
  return json{{"classes", c.classes},  {"head", to_string(c.head)},  {"k", c.k},
              {"br", c.use_br},        {"stack_m", c.stack_m},      {"fusion_br", c.fusion_br},
              {"canvas", {c.canvas.h, c.canvas.w}}};
}

SegConfig config_from_json(const json& j) {
  try {
    SegConfig c;
    c.classes = j.at("classes").get<int>();
    c.head = parse_head_kind(j.at("head").get<std::string>());
    c.k = j.at("k").get<int>();
    c.use_br = j.at("br").get<bool>();
    c.stack_m = j.at("stack_m").get<int>();
    c.fusion_br = j.at("fusion_br").get<int>();
    c.canvas = Hw{j.at("canvas").at(0).get<int>(), j.at("canvas").at(1).get<int>()};
    return c;
  } catch (const json::exception& e) {
    throw InputError(std::string("malformed model config: ") + e.what());
  }
}

void write_json(const std::string& path, const json& j) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path);
  out << j.dump(2) << "\n";
  if (!out) throw InputError("cannot write " + path);
}

void save_model(const std::string& path, const SegModel& model, const json& run) {
  save_tensors(path, model.module().state());
  json m{{"tool", "gcnkit"},
         {"version", version()},
         {"format", "gcnt"},
         {"arch", format_arch(model.arch())},
         {"config", config_to_json(model.config())},
         {"run", run}};
  write_json(path + ".json", m);
}

json load_manifest(const std::string& model_path) {
  const std::string p = model_path + ".json";
  std::ifstream in(p);
  if (!in) throw InputError("model manifest not found: " + p);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw InputError(p + ": " + e.what());
  }
}

SegModel load_model(const std::string& path) {
  const json m = load_manifest(path);
  if (!m.contains("arch") || !m.contains("config")) {
    throw InputError(path + ".json: missing arch or config");
  }
  SegModel model(parse_arch(m["arch"].get<std::string>()), config_from_json(m["config"]));
  model.module().load_state(load_tensors(path));
  return model;
}

DataSource parse_data_source(const std::string& text) {
  DataSource s;
  if (text.rfind("synth:", 0) == 0) {
    const std::string rest = text.substr(6);
    const auto comma = rest.find(',');
    if (comma == std::string::npos) throw InputError("expected synth:SEED,N, got '" + text + "'");
    try {
      std::size_t used = 0;
      s.seed = std::stoull(rest.substr(0, comma), &used);
      if (used != comma) throw std::invalid_argument("seed");
      const std::string n = rest.substr(comma + 1);
      s.count = std::stoi(n, &used);
      if (used != n.size()) throw std::invalid_argument("count");
    } catch (const std::exception&) {
      throw InputError("expected synth:SEED,N, got '" + text + "'");
    }
    if (s.count < 1) throw InputError("synthetic dataset needs N >= 1");
    s.synthetic = true;
    return s;
  }
  s.dir = text;
  return s;
}

Dataset load_data(const DataSource& src, int size, int classes) {
  if (src.synthetic) return synth_shapes(src.seed, src.count, size, classes);
  return load_dataset_dir(src.dir);
}

}  // namespace gcnkit::cli
