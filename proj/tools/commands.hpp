#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "model_io.hpp"

namespace gcnkit::cli {

struct AnalyzeOptions {
  std::string block;  // gcn | conv | stack | pointwise | br
  int k = 7;
  int ci = 2048;
  int co = 21;
  int m = 0;
  std::string arch_file;
  std::string variant;
  std::string input = "224";
  bool include_bias = false;
  bool include_bn = false;
  bool summary = false;
  bool check_paper = false;
  bool strict = false;
  std::string specs_dir;
  std::string json_path;
};

struct TrainOptionsCli {
  std::string arch_file;
  std::string variant = "tiny";
  std::optional<std::string> head;
  std::optional<int> k;
  std::optional<bool> br;
  std::optional<int> m;
  std::optional<int> classes;
  int size = 64;
  std::string data;
  int epochs = 10;
  double lr = 2.5e-3;
  double momentum = 0.99;
  double weight_decay = 5e-4;
  int batch_size = 4;
  std::uint64_t seed = 0;
  std::string out = "model.gcnt";
  std::string loss_csv;
  bool quiet = false;
};

struct EvalOptionsCli {
  std::string model;
  std::string data;
  double boundary_d = 7.0;
  std::string metric = "euclidean";
  std::string scales = "1.0";
  std::string json_path;
};

struct VrfOptions {
  std::string model;
  bool toy = false;
  int k = 7;
  int size = 32;
  std::string image;
  std::string data;
  int index = 0;
  std::optional<int> y;
  std::optional<int> x;
  std::optional<int> cls;
  double threshold = 0.05;
  std::uint64_t seed = 0;
  std::string out = "vrf";
};

// Each returns the process exit code; library errors propagate.
int cmd_analyze(const AnalyzeOptions& o);
int cmd_train(const TrainOptionsCli& o);
int cmd_eval(const EvalOptionsCli& o);
int cmd_vrf(const VrfOptions& o);

// Fixed-width text table.
std::string format_table(const std::vector<std::string>& header,
                         const std::vector<std::vector<std::string>>& rows);

}  // namespace gcnkit::cli
