// One PASS/FAIL line per acceptance criterion. `acceptance 3 5` runs a
// subset; the exit code is nonzero when any selected criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/core.h>

#include "../test_util.hpp"
#include "gcnkit/analysis.hpp"
#include "gcnkit/data.hpp"
#include "gcnkit/evaluation.hpp"
#include "gcnkit/serialize.hpp"
#include "gcnkit/training.hpp"

using namespace gcnkit;
using namespace gcnkit::test;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double median3(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v[v.size() / 2];
}

// ---- 1: published parameter tables ------------------------------------

Outcome table_params() {
  struct Row {
    const char* what;
    std::int64_t count;
    const char* printed;
  };
  const std::vector<Row> rows = {
      {"gcn k=3", count_params(GcnSpec{3, 2048, 21}).total_params, "260K"},
      {"gcn k=5", count_params(GcnSpec{5, 2048, 21}).total_params, "434K"},
      {"gcn k=7", count_params(GcnSpec{7, 2048, 21}).total_params, "608K"},
      {"gcn k=9", count_params(GcnSpec{9, 2048, 21}).total_params, "782K"},
      {"conv k=3", count_params(TrivialSpec{3, 2048, 21}).total_params, "387K"},
      {"conv k=5", count_params(TrivialSpec{5, 2048, 21}).total_params, "1075K"},
      {"conv k=7", count_params(TrivialSpec{7, 2048, 21}).total_params, "2107K"},
      {"conv k=9", count_params(TrivialSpec{9, 2048, 21}).total_params, "3484K"},
      {"stack m=2048", count_params(StackSpec{7, 2048, 2048, 21}).total_params, "75885K"},
      {"stack m=1024", count_params(StackSpec{7, 1024, 2048, 21}).total_params, "28505K"},
      {"stack m=210", count_params(StackSpec{7, 210, 2048, 21}).total_params, "4307K"},
  };
  Outcome o{true, ""};
  int matched = 0;
  for (const Row& r : rows) {
    const std::string got = round_to_k(r.count);
    if (got == r.printed) {
      ++matched;
    } else {
      o.pass = false;
      o.detail += fmt::format("{} = {} rounds to {}, table prints {}; ", r.what, r.count, got, r.printed);
    }
  }
  o.detail += fmt::format("{}/{} entries exact", matched, rows.size());
  return o;
}

// ---- 2: ResNet-50 MACs -------------------------------------------------

Outcome resnet_macs() {
  auto macs = [](BackboneVariant v) {
    ArchSpec a = builtin_arch(v);
    a.head.reset();
    return count_flops(a, {224, 224}).total_macs / 1e6;
  };
  const double a = macs(BackboneVariant::resnet50), b = macs(BackboneVariant::resnet50_gcn);
  const double gap = std::abs(a - b) / std::max(a, b);
  return {std::abs(a - 3700.0) <= 370.0 && gap <= 0.10,
          fmt::format("resnet50 {:.1f} MMACs (3700 +- 10%), resnet50_gcn {:.1f}, gap {:.1f}% (<= 10%)", a, b,
                      100 * gap)};
}

// ---- 3: GCN block == dense conv with the composed kernel ---------------

Outcome gcn_dense() {
  double worst = 0.0;
  for (int k : {1, 3, 5, 7})
    for (int trial = 0; trial < 20; ++trial) {
      const std::uint64_t seed = 7000 + 100 * k + trial;
      Module m = make_gcn_block({k, 3, 4, false});
      int i = 0;
      for (Parameter* p : m.parameters()) p->value = random_tensor(p->value.shape(), seed + 31 * i++);
      const Tensor x = random_tensor({2, 3, 12, 11}, seed ^ 0xabc);
      const int r = (k - 1) / 2;
      worst = std::max(worst, max_rel_diff(m.infer(x), naive_conv(x, compose_gcn_kernel(m), 1, 1, r, r)));
    }
  return {worst <= 1e-4, fmt::format("max rel diff {:.2e} over 80 trials (<= 1e-4)", worst)};
}

// ---- 4: finite differences ----------------------------------------------

Outcome finite_diff() {
  double worst = 0.0;
  std::string where;
  auto note = [&](double err, const std::string& what) {
    if (err > worst) worst = err, where = what;
  };
  const Shape s{2, 3, 6, 5};
  Tensor x = random_tensor(s, 1);
  const auto unary = [&](const std::string& name, std::function<Var(const Var&)> op) {
    note(finite_diff_check([&](Tape&, std::vector<Var>& v) { return op(v[0]); }, {&x}), name);
  };
  unary("relu", [](const Var& v) { return relu(v); });
  unary("scale", [](const Var& v) { return scale(v, 0.7f); });
  unary("pad2d", [](const Var& v) { return pad2d(v, 1, 2); });
  unary("pad_to", [](const Var& v) { return pad_to(v, 8, 9); });
  unary("crop2d", [](const Var& v) { return crop2d(v, 1, 1, 4, 3); });
  unary("resize_bilinear", [](const Var& v) { return resize_bilinear(v, 11, 7); });
  unary("max_pool2d", [](const Var& v) { return max_pool2d(v, 3, 2, 1); });
  unary("add", [](const Var& v) { return add(v, relu(v)); });
  unary("sum", [](const Var& v) { return sum(v); });
  const Tensor wts = random_tensor(s, 2);
  unary("weighted_sum", [&](const Var& v) { return weighted_sum(v, wts); });

  Tensor w = random_tensor({4, 3, 3, 3}, 3), b = random_tensor({1, 4, 1, 1}, 4);
  note(finite_diff_check([](Tape&, std::vector<Var>& v) { return conv2d(v[0], v[1], v[2], {{2, 2}, {1, 1}}); },
                         {&x, &w, &b}),
       "conv2d");
  Tensor wt = random_tensor({3, 2, 4, 4}, 5), bt = random_tensor({1, 2, 1, 1}, 6);
  note(finite_diff_check(
           [](Tape&, std::vector<Var>& v) { return transposed_conv2d(v[0], v[1], v[2], {{2, 2}, {1, 1}}); },
           {&x, &wt, &bt}),
       "transposed_conv2d");
  BatchNormState st;
  Tensor gamma = random_tensor({1, 3, 1, 1}, 7, 0.5f, 1.5f), beta = random_tensor({1, 3, 1, 1}, 8);
  note(finite_diff_check([&](Tape&, std::vector<Var>& v) { return batch_norm2d(v[0], v[1], v[2], st, true); },
                         {&x, &gamma, &beta}),
       "batch_norm2d");
  Tensor logits = random_tensor({1, 4, 2, 3}, 9, -2.0f, 2.0f);
  LabelMap lab(1, 2, 3);
  for (std::size_t i = 0; i < lab.size(); ++i) lab.data[i] = i == 4 ? kIgnoreLabel : static_cast<int>(i % 4);
  note(finite_diff_check([&](Tape&, std::vector<Var>& v) { return softmax_ce_loss(v[0], lab); }, {&logits}),
       "softmax_ce_loss");

  // Whole GCN + BR heads on a two-stage backbone.
  for (int k : {1, 3, 5, 7})
    for (bool training : {false, true}) {
      SegModel m = small_segnet(k, 3, true, 8, 100 + k);
      wake_zero_weights(m.module(), 200 + k);
      const Tensor img = random_tensor({2, 3, 8, 8}, 300 + k);
      const FiniteDiffReport r = module_finite_diff(m.module(), img, training);
      note(r.max_rel_err, fmt::format("segnet k={} {}", k, training ? "train" : "eval"));
    }
  return {worst < 1e-3, fmt::format("worst rel err {:.2e} at {} (< 1e-3)", worst, where)};
}

// ---- 5: theoretical RF == gradient support; VRF inside RF ---------------

Outcome rf_brute_force() {
  int exact = 0, inside = 0;
  std::string first_miss;
  for (int i = 0; i < 50; ++i) {
    const std::uint64_t seed = 9000 + i;
    Module m = random_chain(seed);
    const LayerGraph& g = m.graph();
    const RfReport rf = theoretical_rf(g);
    const RfRow& row = rf.rows.back();
    const int jh = static_cast<int>(row.jump_h), jw = static_cast<int>(row.jump_w);
    const Hw in{row.rf_h + 2 * std::abs(row.offset_h) + 6 * jh + 4,
                row.rf_w + 2 * std::abs(row.offset_w) + 6 * jw + 4};
    const Hw out = g.spatial_extents(in).back();
    const int y = out.h / 2, x = out.w / 2;
    const bool pooled = std::any_of(g.layers().begin(), g.layers().end(),
                                    [](const LayerSpec& l) { return l.kind == LayerKind::max_pool; });
    const Box support = gradient_support(m, in, y, x, pooled ? 200 : 1, seed);
    const Box theory = rf_box(g, g.last(), in, y, x);
    const int top = row.offset_h + y * jh, left = row.offset_w + x * jw;
    const Box expected{top, left, top + row.rf_h - 1, left + row.rf_w - 1};
    if (support == theory && theory == expected) {
      ++exact;
    } else if (first_miss.empty()) {
      first_miss = fmt::format(", first miss chain seed {}", seed);
    }
    const VrfResult v = empirical_vrf(m, random_tensor({1, g.in_channels(), in.h, in.w}, seed + 1), y, x, 0);
    inside += theory.contains(v.bbox);
  }
  return {exact == 50 && inside == 50,
          fmt::format("{}/50 chains exact, {}/50 VRF boxes inside RF{}", exact, inside, first_miss)};
}

// ---- 6, 7: desk-scale training -----------------------------------------

// Settings chosen on a separate sweep; see the README.
struct DeskSetup {
  int epochs = 30;
  double lr = 1e-2;
  double momentum = 0.9;
  int batch_size = 4;
  SynthOptions synth{0.0, 0.08, 0.35, 0.6, 2};
};

struct DeskRun {
  MetricsReport report;
  double seconds = 0.0;
};

DeskRun desk_run(int k, bool br, std::uint64_t seed) {
  const DeskSetup d;
  static const Dataset train_set = synth_shapes(1000, 200, 64, 5, d.synth);
  static const Dataset val_set = synth_shapes(5000, 50, 64, 5, d.synth);
  const auto t0 = std::chrono::steady_clock::now();
  SegConfig c;
  c.classes = 5;
  c.k = k;
  c.use_br = br;
  c.canvas = {64, 64};
  SegModel m(builtin_arch(BackboneVariant::tiny), c);
  m.init(seed);
  SgdConfig sgd;
  sgd.lr = d.lr;
  sgd.momentum = d.momentum;
  sgd.batch_size = d.batch_size;
  TrainOptions o;
  o.epochs = d.epochs;
  o.seed = seed;
  train(m, train_set, sgd, o);
  DeskRun r;
  r.report = evaluate(m, val_set);
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::fprintf(stderr, "  k=%d br=%d seed=%llu miou %.4f boundary %.4f internal %.4f (%.0f s)\n", k, br,
               static_cast<unsigned long long>(seed), r.report.miou, *r.report.boundary_acc,
               *r.report.internal_acc, r.seconds);
  return r;
}

// k = 7 with BR is shared by both criteria.
std::vector<DeskRun>& k7_br_runs() {
  static std::vector<DeskRun> runs = [] {
    std::vector<DeskRun> v;
    for (std::uint64_t s = 0; s < 3; ++s) v.push_back(desk_run(7, true, s));
    return v;
  }();
  return runs;
}

double budget_seconds = 0.0;  // time charged to a criterion beyond its own wall clock

Outcome kernel_trend() {
  std::vector<double> med;
  double seconds = 0.0;
  for (int k : {1, 3, 7}) {
    std::vector<double> miou;
    for (std::uint64_t s = 0; s < 3; ++s) {
      const DeskRun r = k == 7 ? k7_br_runs()[s] : desk_run(k, true, s);
      miou.push_back(r.report.miou);
      seconds += r.seconds;
    }
    med.push_back(median3(miou));
  }
  budget_seconds = seconds;
  const bool ok = med[0] <= med[1] && med[1] <= med[2] && med[2] - med[0] >= 0.02;
  return {ok, fmt::format("median mIoU k1 {:.4f}, k3 {:.4f}, k7 {:.4f}; k7 - k1 = {:.4f} (>= 0.02)", med[0],
                          med[1], med[2], med[2] - med[0])};
}

Outcome br_regions() {
  std::vector<double> db, di;
  double seconds = 0.0;
  for (std::uint64_t s = 0; s < 3; ++s) {
    const DeskRun& with = k7_br_runs()[s];
    const DeskRun without = desk_run(7, false, s);
    db.push_back(*with.report.boundary_acc - *without.report.boundary_acc);
    di.push_back(*with.report.internal_acc - *without.report.internal_acc);
    seconds += with.seconds + without.seconds;
  }
  budget_seconds = seconds;
  const double b = median3(db), i = median3(di);
  return {b > i, fmt::format("median delta boundary {:+.4f}, delta internal {:+.4f}", b, i)};
}

// ---- 8: determinism ------------------------------------------------------

std::string run_bytes() {
  const Dataset d = synth_shapes(77, 12, 64, 5);
  SegConfig c;
  c.classes = 5;
  c.k = 7;
  c.canvas = {64, 64};
  SegModel m(builtin_arch(BackboneVariant::tiny), c);
  m.init(3);
  SgdConfig sgd;
  sgd.batch_size = 3;
  TrainOptions o;
  o.epochs = 2;
  o.seed = 3;
  const TrainResult tr = train(m, d, sgd, o);
  std::ostringstream out;
  write_tensors(out, m.module().state());
  out.write(reinterpret_cast<const char*>(tr.loss.data()), static_cast<std::streamsize>(tr.loss.size() * sizeof(double)));
  const MetricsReport r = evaluate(m, synth_shapes(78, 4, 64, 5));
  out << fmt::format("{:a} {:a} {:a} {} {}", r.miou, *r.boundary_acc, *r.internal_acc, r.boundary_pixels,
                     r.internal_pixels);
  return out.str();
}

Outcome determinism() {
  const std::string a = run_bytes(), b = run_bytes();
  return {a == b, fmt::format("two runs: model + loss + report {} ({} bytes)", a == b ? "identical" : "differ",
                              a.size())};
}

// ---- 9: BR identity and canvas-sized output ---------------------------

Outcome br_identity_and_shapes() {
  Module br = make_boundary_refine({5});
  br.init(11);
  const Tensor s = random_tensor({2, 5, 9, 7}, 12, -3.0f, 3.0f);
  const Tensor out = br.infer(s);
  const bool identity = out.shape() == s.shape() &&
                        std::memcmp(out.data().data(), s.data().data(), s.numel() * sizeof(float)) == 0;
  std::string shapes;
  bool ok = identity;
  for (int canvas : {64, 96, 512}) {
    SegConfig c;
    c.classes = 5;
    c.k = 7;
    c.canvas = {canvas, canvas};
    SegModel m(builtin_arch(BackboneVariant::tiny), c);
    m.init(1);
    const Tensor x = random_tensor({1, 3, canvas, canvas}, canvas);
    Shape got;
    if (canvas == 512) {
      got = m.predict(x).shape();
    } else {
      Tape tape;
      Var y = m.forward(&tape, tape.leaf(x), true);
      tape.backward(sum(y));
      got = y.shape();
    }
    const bool match = got == Shape{1, 5, canvas, canvas};
    ok = ok && match;
    shapes += fmt::format(" {}->{}", canvas, got.str());
  }
  return {ok, fmt::format("BR zero-init {}; outputs{}", identity ? "bitwise identity" : "NOT identity", shapes)};
}

struct Criterion {
  int id;
  const char* name;
  double limit_s;  // 0: no limit
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> all = {
      {1, "parameter tables", 1, table_params},
      {2, "resnet50 MACs", 0, resnet_macs},
      {3, "gcn == composed dense conv", 30, gcn_dense},
      {4, "finite differences", 120, finite_diff},
      {5, "rf == gradient support", 120, rf_brute_force},
      {6, "mIoU nondecreasing in k", 900, kernel_trend},
      {7, "BR helps boundary more", 900, br_regions},
      {8, "determinism", 0, determinism},
      {9, "BR identity, output shape", 0, br_identity_and_shapes},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));

  int failed = 0;
  for (const Criterion& c : all) {
    if (!only.empty() && !only.count(c.id)) continue;
    budget_seconds = 0.0;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const double charged = std::max(wall, budget_seconds);
    const bool in_time = c.limit_s == 0 || charged < c.limit_s;
    const bool pass = o.pass && in_time;
    failed += !pass;
    std::string time = fmt::format("{:.1f} s", charged);
    if (c.limit_s > 0) time += fmt::format(" / {:.0f} s", c.limit_s);
    std::printf("criterion %d %s: %s  %s  [%s]\n", c.id, c.name, pass ? "PASS" : "FAIL", o.detail.c_str(),
                time.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
