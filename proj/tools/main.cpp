// gcnkit: analyze / train / eval / vrf front end.
//
// Exit codes: 0 success, 2 usage or input error, 3 numerical failure (also a
// failed --check-paper oracle).

#include <cstdlib>
#include <iostream>

#include <CLI11.hpp>

#include "commands.hpp"
#include "gcnkit/error.hpp"
#include "gcnkit/parallel.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kInputError = 2;
constexpr int kNumericalError = 3;

int threads_from_env() {
  const char* env = std::getenv("GCNKIT_THREADS");
  if (env == nullptr || *env == '\0') return 1;
  char* end = nullptr;
  const long n = std::strtol(env, &end, 10);
  if (*end != '\0' || n < 1) throw gcnkit::InputError("GCNKIT_THREADS must be a positive integer");
  return static_cast<int>(n);
}

}  // namespace

int main(int argc, char** argv) {
  using namespace gcnkit::cli;
  CLI::App app{"Global Convolutional Network toolkit: analysis, desk-scale training and evaluation"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string("gcnkit ") + version());
  int threads = 0;
  app.add_option("--threads", threads, "Intra-op threads (default: GCNKIT_THREADS or 1)")
      ->check(CLI::PositiveNumber);

  AnalyzeOptions an;
  auto* analyze = app.add_subcommand("analyze", "Parameter / MAC / receptive-field report");
  analyze->add_option("--block", an.block, "Single block: gcn, conv, stack, pointwise, br");
  analyze->add_option("--k", an.k, "Kernel size (stack: equivalent kernel)");
  analyze->add_option("--ci", an.ci, "Input channels");
  analyze->add_option("--co", an.co, "Output channels");
  analyze->add_option("--m", an.m, "Stack mid-channels");
  analyze->add_option("--arch", an.arch_file, "Architecture file")->check(CLI::ExistingFile);
  analyze->add_option("--variant", an.variant, "Built-in backbone: tiny, resnet50, resnet50_gcn");
  analyze->add_option("--input", an.input, "Input size N or HxW")->capture_default_str();
  analyze->add_flag("--include-bias", an.include_bias, "Count conv biases");
  analyze->add_flag("--include-bn", an.include_bn, "Count BN gamma / beta");
  analyze->add_flag("--summary", an.summary, "Totals only");
  analyze->add_flag("--check-paper", an.check_paper, "Assert the published parameter and MAC figures");
  analyze->add_flag("--strict", an.strict, "With --check-paper: a figure that only matches when truncated fails");
  analyze->add_option("--specs", an.specs_dir, "Directory with resnet50.arch / resnet50_gcn.arch");
  analyze->add_option("--json", an.json_path, "Write the report as JSON");

  TrainOptionsCli tr;
  std::string tr_head;
  int tr_k = 0, tr_m = 0, tr_classes = 0;
  bool tr_br = true;
  auto* train = app.add_subcommand("train", "Train a segmentation model");
  train->add_option("--arch", tr.arch_file, "Architecture file (its head line sets defaults)")
      ->check(CLI::ExistingFile);
  train->add_option("--variant", tr.variant, "Built-in backbone when no --arch")->capture_default_str();
  train->add_option("--head", tr_head, "Head kind: gcn, pointwise, conv, stack");
  train->add_option("--k", tr_k, "Head kernel size (1 = pointwise baseline)");
  train->add_option("--br", tr_br, "Boundary refinement on/off");
  train->add_option("--m", tr_m, "Stack head mid-channels");
  train->add_option("--classes", tr_classes, "Number of classes K");
  train->add_option("--size", tr.size, "Canvas side (multiple of 32)")->capture_default_str();
  train->add_option("--data", tr.data, "synth:SEED,N or a directory of .ppm/.pgm pairs");
  train->add_option("--epochs", tr.epochs, "Epochs")->capture_default_str();
  train->add_option("--lr", tr.lr, "Learning rate")->capture_default_str();
  train->add_option("--momentum", tr.momentum, "Momentum")->capture_default_str();
  train->add_option("--weight-decay", tr.weight_decay, "Weight decay")->capture_default_str();
  train->add_option("--batch-size", tr.batch_size, "Batch size")->capture_default_str();
  train->add_option("--seed", tr.seed, "Seed for init, shuffling and augmentation")->capture_default_str();
  train->add_option("--out", tr.out, "Model file (.gcnt)")->capture_default_str();
  train->add_option("--loss-csv", tr.loss_csv, "Loss curve CSV (default: next to the model)");
  train->add_flag("--quiet", tr.quiet, "No progress output");

  EvalOptionsCli ev;
  auto* eval = app.add_subcommand("eval", "mIoU and boundary / internal accuracy");
  eval->add_option("--model", ev.model, "Model file")->required();
  eval->add_option("--data", ev.data, "synth:SEED,N or a directory")->required();
  eval->add_option("--boundary-d", ev.boundary_d, "Boundary distance threshold")->capture_default_str();
  eval->add_option("--metric", ev.metric, "euclidean or chebyshev")->capture_default_str();
  eval->add_option("--scales", ev.scales, "Comma-separated test scales")->capture_default_str();
  eval->add_option("--json", ev.json_path, "JSON output (default: <model>.eval.json)");

  VrfOptions vr;
  int vr_y = 0, vr_x = 0, vr_cls = 0;
  auto* vrf = app.add_subcommand("vrf", "Valid-receptive-field probe");
  vrf->add_option("--model", vr.model, "Model file");
  vrf->add_flag("--toy", vr.toy, "Untrained linear GCN block with a closed-form oracle");
  vrf->add_option("--k", vr.k, "Toy kernel size")->capture_default_str();
  vrf->add_option("--size", vr.size, "Toy input side")->capture_default_str();
  vrf->add_option("--image", vr.image, "Input image (.ppm)");
  vrf->add_option("--data", vr.data, "synth:SEED,N source when no --image");
  vrf->add_option("--index", vr.index, "Sample index in --data")->capture_default_str();
  vrf->add_option("--y", vr_y, "Probe row (default: center)");
  vrf->add_option("--x", vr_x, "Probe column (default: center)");
  vrf->add_option("--class", vr_cls, "Score channel (default: predicted class)");
  vrf->add_option("--threshold", vr.threshold, "Mask threshold as a fraction of the peak")->capture_default_str();
  vrf->add_option("--seed", vr.seed, "Toy seed")->capture_default_str();
  vrf->add_option("--out", vr.out, "Output prefix for .pgm / .json")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kInputError;
  }

  if (train->count("--head")) tr.head = tr_head;
  if (train->count("--k")) tr.k = tr_k;
  if (train->count("--br")) tr.br = tr_br;
  if (train->count("--m")) tr.m = tr_m;
  if (train->count("--classes")) tr.classes = tr_classes;
  if (vrf->count("--y")) vr.y = vr_y;
  if (vrf->count("--x")) vr.x = vr_x;
  if (vrf->count("--class")) vr.cls = vr_cls;

  try {
    gcnkit::set_num_threads(threads > 0 ? threads : threads_from_env());
    if (*analyze) return cmd_analyze(an);
    if (*train) return cmd_train(tr);
    if (*eval) return cmd_eval(ev);
    if (*vrf) return cmd_vrf(vr);
  } catch (const gcnkit::NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return kNumericalError;
  } catch (const gcnkit::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kInputError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kInputError;
  }
  return kInputError;
}
