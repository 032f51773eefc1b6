// Command-line front end: train / gradcheck / bench / analyze / count.
// Exit codes: 0 success, 1 check failure, 2 usage error, 3 I/O or format
// error. Every artifact-producing run writes one manifest.json under --out.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "volt/analysis.hpp"
#include "volt/common.hpp"
#include "volt/conv.hpp"
#include "volt/data.hpp"
#include "volt/network.hpp"
#include "volt/rng.hpp"
#include "volt/trainer.hpp"

#ifndef VOLT_BUILD_ID
#define VOLT_BUILD_ID "unknown"
#endif

namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;

constexpr int kOk = 0;
constexpr int kCheckFail = 1;
constexpr int kUsage = 2;
constexpr int kIoFail = 3;

int g_threads = 0;

void apply_threads() {
  if (g_threads > 0) volt::set_num_threads(g_threads);
}

/// Refuses to reuse an output directory that already holds a manifest.
int prepare_out_dir(const std::string& out, bool force) {
  if (out.empty()) {
    std::fprintf(stderr, "volt: --out is required\n");
    return kUsage;
  }
  if (fs::exists(fs::path(out) / "manifest.json") && !force) {
    std::fprintf(stderr,
                 "volt: %s already holds a manifest.json; pass --force to overwrite\n",
                 out.c_str());
    return kUsage;
  }
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) {
    std::fprintf(stderr, "volt: cannot create %s: %s\n", out.c_str(),
                 ec.message().c_str());
    return kIoFail;
  }
  return kOk;
}

void write_manifest(const std::string& out, const std::string& command,
                    std::uint64_t seed, const json& config, const json& artifacts) {
  json m;
  m["command"] = command;
  m["build_id"] = VOLT_BUILD_ID;
  m["seed"] = seed;
  m["config"] = config;
  m["artifacts"] = artifacts;
  const auto path = (fs::path(out) / "manifest.json").string();
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw volt::IoError("cannot open " + path + " for writing");
  os << m.dump(2) << "\n";
  if (!os) throw volt::IoError("write failed on " + path);
}

json schedule_to_json(const std::vector<volt::ScheduleRow>& rows) {
  json a = json::array();
  for (const auto& r : rows)
    a.push_back({r.first, r.last, r.lr, r.weight_decay});
  return a;
}

std::vector<volt::ScheduleRow> schedule_from_json(const json& a) {
  std::vector<volt::ScheduleRow> rows;
  for (const auto& e : a) {
    volt::ScheduleRow r;
    r.first = e.at(0).get<int>();
    r.last = e.at(1).get<int>();
    r.lr = e.at(2).get<double>();
    r.weight_decay = e.at(3).get<double>();
    rows.push_back(r);
  }
  return rows;
}

// -------------------------------------------------------------------------
// train

struct TrainFlags {
  std::string data, dataset = "synthetic", first_layer = "volterra";
  std::string quad_mode = "full", synthetic_mode = "quadratic";
  std::string out, from_manifest;
  int depth = 10, widen = 1, classes = 0, batch = 128, epochs = 220;
  int train_count = 2000, test_count = 500, checkpoint_every = 0;
  double momentum = 0.9, dropout = 0.3;
  bool nesterov = false, deterministic = true, force = false, augment = true;
  std::uint64_t seed = 0;

  CLI::Option* seed_opt = nullptr;
  CLI::Option* augment_opt = nullptr;
  CLI::Option* epochs_opt = nullptr;
  std::vector<volt::ScheduleRow> schedule;  // filled from manifest if present
};

volt::LabeledImageSet<double> concat_sets(
    std::vector<volt::LabeledImageSet<double>>& parts) {
  int total = 0;
  for (const auto& p : parts) total += p.count();
  if (total == 0) throw volt::FormatError("dataset is empty");
  const auto& first = parts.front().images;
  volt::LabeledImageSet<double> all;
  all.images = volt::Tensor4<double>(total, first.c, first.h, first.w);
  std::size_t off = 0;
  for (auto& p : parts) {
    std::copy(p.images.data.begin(), p.images.data.end(), all.images.data.begin() + off);
    off += p.images.data.size();
    all.labels.insert(all.labels.end(), p.labels.begin(), p.labels.end());
    all.coarse_labels.insert(all.coarse_labels.end(), p.coarse_labels.begin(),
                             p.coarse_labels.end());
  }
  return all;
}

fs::path find_data_root(const std::string& dir, const std::string& probe,
                        const char* subdir) {
  for (const fs::path& root : {fs::path(dir), fs::path(dir) / subdir})
    if (fs::exists(root / probe)) return root;
  throw volt::IoError("no " + probe + " under " + dir + " or " + dir + "/" + subdir);
}

void load_cifar(const TrainFlags& f, volt::LabeledImageSet<double>& train,
                volt::LabeledImageSet<double>& test) {
  if (f.data.empty()) throw volt::IoError("--data <dir> is required for cifar datasets");
  if (f.dataset == "cifar10") {
    const auto root = find_data_root(f.data, "data_batch_1.bin", "cifar-10-batches-bin");
    std::vector<volt::LabeledImageSet<double>> parts;
    for (int i = 1; i <= 5; ++i)
      parts.push_back(volt::load_cifar_binary<double>(
          (root / ("data_batch_" + std::to_string(i) + ".bin")).string(),
          volt::CifarVariant::cifar10));
    train = concat_sets(parts);
    test = volt::load_cifar_binary<double>((root / "test_batch.bin").string(),
                                           volt::CifarVariant::cifar10);
  } else {
    const auto root = find_data_root(f.data, "train.bin", "cifar-100-binary");
    train = volt::load_cifar_binary<double>((root / "train.bin").string(),
                                            volt::CifarVariant::cifar100);
    test = volt::load_cifar_binary<double>((root / "test.bin").string(),
                                           volt::CifarVariant::cifar100);
  }
}

int run_train(TrainFlags& f) {
  apply_threads();

  if (!f.from_manifest.empty()) {
    std::ifstream is(f.from_manifest);
    if (!is) throw volt::IoError("cannot read manifest " + f.from_manifest);
    json m;
    try {
      m = json::parse(is);
    } catch (const json::exception& e) {
      throw volt::FormatError(std::string("manifest parse: ") + e.what());
    }
    const json& c = m.at("config");
    const auto take = [&](const char* key, auto& dst) {
      using D = std::decay_t<decltype(dst)>;
      if (c.contains(key)) dst = c.at(key).get<D>();
    };
    // Flags passed explicitly still win over manifest values.
    if (f.seed_opt->count() == 0 && m.contains("seed"))
      f.seed = m.at("seed").get<std::uint64_t>();
    take("dataset", f.dataset);
    take("data", f.data);
    take("depth", f.depth);
    take("widen", f.widen);
    take("classes", f.classes);
    take("first_layer", f.first_layer);
    take("quad_mode", f.quad_mode);
    take("synthetic_mode", f.synthetic_mode);
    take("batch", f.batch);
    take("momentum", f.momentum);
    take("nesterov", f.nesterov);
    if (f.epochs_opt->count() == 0) take("epochs", f.epochs);
    take("dropout", f.dropout);
    take("deterministic", f.deterministic);
    take("train_count", f.train_count);
    take("test_count", f.test_count);
    take("checkpoint_every", f.checkpoint_every);
    if (f.augment_opt->count() == 0) take("augment", f.augment);
    if (c.contains("schedule")) f.schedule = schedule_from_json(c.at("schedule"));
    f.seed_opt = nullptr;  // seed now resolved
  }

  const bool seed_given =
      (f.seed_opt == nullptr) || f.seed_opt->count() > 0;
  if (f.deterministic && !seed_given) {
    std::fprintf(stderr, "volt train: deterministic mode requires an explicit --seed\n");
    return kUsage;
  }
  if (f.dataset != "cifar10" && f.dataset != "cifar100" && f.dataset != "synthetic") {
    std::fprintf(stderr, "volt train: unknown dataset %s\n", f.dataset.c_str());
    return kUsage;
  }
  if (f.augment_opt != nullptr && f.augment_opt->count() == 0 &&
      f.from_manifest.empty())
    f.augment = f.dataset != "synthetic";  // synthetic geometry is class-relevant

  volt::NetworkSpec spec;
  spec.depth = f.depth;
  spec.widen = f.widen;
  spec.dropout = f.dropout;
  try {
    (void)spec.blocks_per_group();
    if (f.widen < 1) throw volt::ShapeError("widen factor must be >= 1");
  } catch (const volt::ShapeError& e) {
    std::fprintf(stderr, "volt train: %s\n", e.what());
    return kUsage;
  }
  spec.first_layer = f.first_layer == "volterra" ? volt::FirstLayerKind::volterra
                                                 : volt::FirstLayerKind::linear;
  spec.quad_mode = f.quad_mode == "per_channel" ? volt::QuadMode::per_channel
                                                : volt::QuadMode::full;

  const int rc = prepare_out_dir(f.out, f.force);
  if (rc != kOk) return rc;

  volt::LabeledImageSet<double> train_set, test_set;
  if (f.dataset == "synthetic") {
    const auto mode = f.synthetic_mode == "gaussian" ? volt::SyntheticMode::gaussian
                                                     : volt::SyntheticMode::quadratic_rule;
    if (f.classes == 0) f.classes = 2;
    if (mode == volt::SyntheticMode::quadratic_rule && f.classes != 2) {
      std::fprintf(stderr, "volt train: quadratic synthetic data is two-class\n");
      return kUsage;
    }
    train_set = volt::make_synthetic_set<double>(f.classes, f.train_count, f.seed, mode);
    test_set = volt::make_synthetic_set<double>(f.classes, f.test_count,
                                                f.seed + 1000003, mode);
  } else {
    const int k = f.dataset == "cifar10" ? 10 : 100;
    if (f.classes != 0 && f.classes != k) {
      std::fprintf(stderr, "volt train: %s has %d classes\n", f.dataset.c_str(), k);
      return kUsage;
    }
    f.classes = k;
    load_cifar(f, train_set, test_set);
  }
  spec.classes = f.classes;
  spec.in_channels = train_set.images.c;

  const auto stats = volt::compute_stats(train_set);
  volt::apply_normalization(train_set, stats);
  volt::apply_normalization(test_set, stats);

  volt::TrainConfig cfg;
  cfg.batch_size = f.batch;
  cfg.momentum = f.momentum;
  cfg.nesterov = f.nesterov;
  cfg.epochs = f.epochs;
  cfg.dropout = f.dropout;
  cfg.seed = f.seed;
  cfg.deterministic = f.deterministic;
  cfg.augment = f.augment;
  cfg.checkpoint_dir = f.out;
  cfg.checkpoint_every = f.checkpoint_every > 0 ? f.checkpoint_every
                         : f.epochs > 0         ? f.epochs
                                                : 0;
  cfg.history_path = (fs::path(f.out) / "history.csv").string();
  if (!f.schedule.empty())
    cfg.schedule = f.schedule;
  else if (f.epochs > 0 && f.epochs != 220)
    cfg.schedule = volt::compress_schedule(volt::default_schedule(), f.epochs);

  auto net = volt::build_network<double>(spec, f.seed);
  volt::Rng init_rng(f.seed);
  net.init_params(init_rng);

  json config;
  config["dataset"] = f.dataset;
  config["data"] = f.data;
  config["depth"] = f.depth;
  config["widen"] = f.widen;
  config["classes"] = f.classes;
  config["first_layer"] = f.first_layer;
  config["quad_mode"] = f.quad_mode;
  config["synthetic_mode"] = f.synthetic_mode;
  config["batch"] = f.batch;
  config["momentum"] = f.momentum;
  config["nesterov"] = f.nesterov;
  config["epochs"] = f.epochs;
  config["dropout"] = f.dropout;
  config["deterministic"] = f.deterministic;
  config["augment"] = f.augment;
  config["train_count"] = f.train_count;
  config["test_count"] = f.test_count;
  config["checkpoint_every"] = f.checkpoint_every;
  config["threads"] = g_threads;
  config["schedule"] = schedule_to_json(f.epochs > 0 ? cfg.schedule
                                                     : std::vector<volt::ScheduleRow>{});

  if (f.epochs == 0) {  // init-only: materialize an untrained checkpoint
    std::vector<std::vector<double>> velocity;
    volt::Rng master(f.seed);
    const auto ckpt = (fs::path(f.out) / "epoch_0000.ckpt").string();
    volt::save_checkpoint(ckpt, net, spec, velocity, 0, master);
    volt::write_history_csv(cfg.history_path, {});
    write_manifest(f.out, "train", f.seed, config,
                   {{"history", "history.csv"}, {"checkpoints", {"epoch_0000.ckpt"}}});
    std::printf("initialized %s (no training epochs)\n", ckpt.c_str());
    return kOk;
  }

  const auto result = volt::train(net, train_set, test_set, cfg, spec);

  std::vector<std::string> ckpts;
  for (const auto& e : fs::directory_iterator(f.out)) {
    const auto name = e.path().filename().string();
    if (name.size() > 5 && name.substr(name.size() - 5) == ".ckpt") ckpts.push_back(name);
  }
  std::sort(ckpts.begin(), ckpts.end());
  write_manifest(f.out, "train", f.seed, config,
                 {{"history", "history.csv"}, {"checkpoints", ckpts}});

  const auto& last = result.history.back();
  std::printf("epoch %d: train loss %.6f, test error %.4f\n", last.epoch,
              last.train_loss, last.test_error);
  std::printf("history: %s\n", cfg.history_path.c_str());
  return kOk;
}

// -------------------------------------------------------------------------
// gradcheck

struct GradcheckFlags {
  int n = 0;  // 0 = all of {4, 9, 27}
  std::uint64_t seed = 1;
  bool mutate_sign = false;
};

struct FdCase {
  const char* label;
  volt::ConvGeometry geom;
  int h, w, batch;
};

template <typename LayerT>
double layer_loss(LayerT& layer, const volt::Tensor4<double>& x) {
  const auto& y = layer.forward(x, false);
  double s = 0;
  for (const double v : y.data) s += 0.5 * v * v;
  return s;
}

/// Central finite differences on every entry of `value`, compared with the
/// analytic gradient, both under loss 0.5*sum(y^2).
template <typename LayerT>
double fd_group_error(LayerT& layer, const volt::Tensor4<double>& x,
                      std::vector<double>& value, const std::vector<double>& analytic,
                      bool flip) {
  const double h = 1e-5;
  double worst = 0;
  for (std::size_t i = 0; i < value.size(); ++i) {
    const double keep = value[i];
    value[i] = keep + h;
    const double up = layer_loss(layer, x);
    value[i] = keep - h;
    const double dn = layer_loss(layer, x);
    value[i] = keep;
    const double fd = (up - dn) / (2 * h);
    const double an = flip ? -analytic[i] : analytic[i];
    worst = std::max(worst, std::abs(an - fd) / std::max(1.0, std::abs(fd)));
  }
  return worst;
}

template <typename LayerT>
int check_layer(LayerT& layer, const FdCase& c, std::uint64_t seed, bool mutate,
                double& suite_worst) {
  volt::Rng rng(seed);
  std::vector<volt::ParamView<double>> params;
  layer.collect_params(params);
  for (auto& p : params)
    for (auto& v : *p.value) v = rng.uniform(-0.5, 0.5);

  volt::Tensor4<double> x(c.batch, c.geom.in_channels, c.h, c.w);
  for (auto& v : x.data) v = rng.uniform(-1.0, 1.0);

  const auto& y = layer.forward(x, false);
  volt::Tensor4<double> gy = y;  // dL/dy for L = 0.5*sum(y^2)
  const auto& dx = layer.backward(x, gy, true);

  int rc = kOk;
  for (auto& p : params) {
    const std::vector<double> analytic = *p.grad;
    const bool flip = mutate && p.name.size() > 3 &&
                      p.name.substr(p.name.size() - 3) == ".w2";
    const double err = fd_group_error(layer, x, *p.value, analytic, flip);
    suite_worst = std::max(suite_worst, err);
    std::printf("  %-28s max rel err %.3e%s\n", p.name.c_str(), err,
                err < 1e-5 ? "" : "  FAIL");
    if (err >= 1e-5) rc = kCheckFail;
  }

  // Input gradient: perturb pixels, analytic from the backward dx.
  const double h = 1e-5;
  double worst = 0;
  for (std::size_t i = 0; i < x.data.size(); ++i) {
    const double keep = x.data[i];
    x.data[i] = keep + h;
    const double up = layer_loss(layer, x);
    x.data[i] = keep - h;
    const double dn = layer_loss(layer, x);
    x.data[i] = keep;
    const double fd = (up - dn) / (2 * h);
    worst = std::max(worst, std::abs(dx.data[i] - fd) / std::max(1.0, std::abs(fd)));
  }
  suite_worst = std::max(suite_worst, worst);
  std::printf("  %-28s max rel err %.3e%s\n", "input", worst,
              worst < 1e-5 ? "" : "  FAIL");
  return worst < 1e-5 ? rc : kCheckFail;
}

int run_gradcheck(const GradcheckFlags& f) {
  apply_threads();
  const std::vector<FdCase> cases = {
      {"n=4", {1, 2, 2, 1, 0, 2}, 4, 4, 2},
      {"n=9", {1, 3, 3, 1, 1, 2}, 5, 5, 2},
      {"n=27", {3, 3, 3, 2, 1, 2}, 6, 6, 2},
  };
  int rc = kOk;
  double worst = 0;
  for (const auto& c : cases) {
    if (f.n != 0 && c.geom.patch_len() != f.n) continue;
    std::printf("volterra %s (stride %d, pad %d):\n", c.label, c.geom.stride,
                c.geom.pad);
    volt::VolterraConv<double> vconv(c.geom);
    rc = std::max(rc, check_layer(vconv, c, f.seed, f.mutate_sign, worst));
    std::printf("linear %s:\n", c.label);
    volt::LinearConv<double> lconv(c.geom);
    rc = std::max(rc, check_layer(lconv, c, f.seed + 1, false, worst));
  }
  std::printf("suite max rel err %.3e: %s\n", worst, rc == kOk ? "PASS" : "FAIL");
  return rc;
}

// -------------------------------------------------------------------------
// bench

struct BenchFlags {
  std::string out;
  std::vector<int> sizes = {8, 12, 16, 20, 24, 32};
  int batch = 4, repeats = 5;
  bool force = false;
};

template <typename F>
double time_median(F&& fn, int repeats, int inner) {
  std::vector<double> ts;
  ts.reserve(repeats);
  for (int r = 0; r < repeats; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    for (int i = 0; i < inner; ++i) fn();
    const auto t1 = std::chrono::steady_clock::now();
    ts.push_back(std::chrono::duration<double>(t1 - t0).count() / inner);
  }
  std::sort(ts.begin(), ts.end());
  return ts[repeats / 2];
}

double r_squared(const std::vector<double>& xs, const std::vector<double>& ys) {
  const std::size_t n = xs.size();
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += xs[i];
    my += ys[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    sxx += (xs[i] - mx) * (xs[i] - mx);
    sxy += (xs[i] - mx) * (ys[i] - my);
  }
  const double slope = sxx > 0 ? sxy / sxx : 0;
  const double icept = my - slope * mx;
  double ssr = 0, sst = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double e = ys[i] - (icept + slope * xs[i]);
    ssr += e * e;
    sst += (ys[i] - my) * (ys[i] - my);
  }
  return sst > 0 ? 1.0 - ssr / sst : 1.0;
}

int run_bench(const BenchFlags& f) {
  apply_threads();
  const int rc0 = prepare_out_dir(f.out, f.force);
  if (rc0 != kOk) return rc0;

  const auto csv_path = (fs::path(f.out) / "bench.csv").string();
  std::ofstream csv(csv_path, std::ios::trunc);
  if (!csv) throw volt::IoError("cannot open " + csv_path + " for writing");
  csv << "kind,h,w,out_h,out_w,patches,forward_s,wgrad_s,igrad_s\n";

  std::vector<double> vol_patches, vol_igrad;
  double lin_fwd_largest = 0, vol_fwd_largest = 0;
  std::vector<double> lin_patches, lin_igrad;

  volt::Rng rng(7);
  for (const int s : f.sizes) {
    const volt::ConvGeometry g{3, 3, 3, 1, 1, 16};
    const int oh = g.out_h(s), ow = g.out_w(s);
    const double patches = static_cast<double>(oh) * ow;
    const int inner = std::max(1, 2 * 32 * 32 / (s * s));

    volt::Tensor4<double> x(f.batch, 3, s, s);
    for (auto& v : x.data) v = rng.uniform(-1.0, 1.0);

    for (const bool volterra : {false, true}) {
      std::unique_ptr<volt::Layer<double>> layer;
      if (volterra)
        layer = std::make_unique<volt::VolterraConv<double>>(g);
      else
        layer = std::make_unique<volt::LinearConv<double>>(g);
      std::vector<volt::ParamView<double>> params;
      layer->collect_params(params);
      for (auto& p : params)
        for (auto& v : *p.value) v = rng.uniform(-0.5, 0.5);

      const auto& y = layer->forward(x, false);
      volt::Tensor4<double> gy = y;

      const double t_fwd =
          time_median([&] { layer->forward(x, false); }, f.repeats, inner);
      const double t_wgrad =
          time_median([&] { layer->backward(x, gy, false); }, f.repeats, inner);
      const double t_both =
          time_median([&] { layer->backward(x, gy, true); }, f.repeats, inner);
      const double t_igrad = std::max(1e-12, t_both - t_wgrad);

      char row[256];
      std::snprintf(row, sizeof(row), "%s,%d,%d,%d,%d,%.0f,%.9e,%.9e,%.9e\n",
                    volterra ? "volterra" : "linear", s, s, oh, ow, patches, t_fwd,
                    t_wgrad, t_igrad);
      csv << row;
      if (volterra) {
        vol_patches.push_back(patches);
        vol_igrad.push_back(t_igrad);
        if (s == f.sizes.back()) vol_fwd_largest = t_fwd;
      } else {
        lin_patches.push_back(patches);
        lin_igrad.push_back(t_igrad);
        if (s == f.sizes.back()) lin_fwd_largest = t_fwd;
      }
    }
  }
  csv.close();

  const double r2_vol = r_squared(vol_patches, vol_igrad);
  const double r2_lin = r_squared(lin_patches, lin_igrad);
  std::printf("volterra input-grad vs output patches: R^2 = %.4f\n", r2_vol);
  std::printf("linear   input-grad vs output patches: R^2 = %.4f\n", r2_lin);
  std::printf("forward at %dx%d: linear %.3e s, volterra %.3e s (%s)\n",
              f.sizes.back(), f.sizes.back(), lin_fwd_largest, vol_fwd_largest,
              lin_fwd_largest < vol_fwd_largest ? "linear faster, as expected"
                                                : "unexpected ordering");
  std::printf("csv: %s\n", csv_path.c_str());

  json config;
  config["sizes"] = f.sizes;
  config["batch"] = f.batch;
  config["repeats"] = f.repeats;
  config["threads"] = g_threads;
  json artifacts;
  artifacts["csv"] = "bench.csv";
  artifacts["r2_volterra_igrad"] = r2_vol;
  artifacts["r2_linear_igrad"] = r2_lin;
  write_manifest(f.out, "bench", 0, config, artifacts);

  if (r2_vol < 0.8) {
    std::fprintf(stderr, "volt bench: volterra input-grad scaling fit R^2 %.4f < 0.8\n",
                 r2_vol);
    return kCheckFail;
  }
  return kOk;
}

// -------------------------------------------------------------------------
// analyze

struct AnalyzeFlags {
  std::string ckpt, out, filters = "0..15", rho_grid = "default";
  double rho_scale = 1.0;
  int bins = 64;
  bool force = false;
};

std::vector<int> parse_filters(const std::string& s) {
  std::vector<int> out;
  const auto dots = s.find("..");
  if (dots != std::string::npos) {
    const int a = std::stoi(s.substr(0, dots));
    const int b = std::stoi(s.substr(dots + 2));
    if (a < 0 || b < a) throw volt::ShapeError("bad filter range " + s);
    for (int i = a; i <= b; ++i) out.push_back(i);
    return out;
  }
  std::size_t pos = 0;
  while (pos < s.size()) {
    const auto comma = s.find(',', pos);
    const auto tok = s.substr(pos, comma == std::string::npos ? comma : comma - pos);
    out.push_back(std::stoi(tok));
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  if (out.empty()) throw volt::ShapeError("no filters in " + s);
  return out;
}

std::vector<double> parse_rho_grid(const std::string& s, double scale) {
  if (s == "default") return volt::default_rho_grid(scale);
  std::vector<double> grid;
  std::size_t pos = 0;
  while (pos < s.size()) {
    const auto comma = s.find(',', pos);
    grid.push_back(std::stod(s.substr(pos, comma == std::string::npos ? comma
                                                                      : comma - pos)));
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  for (const double r : grid)
    if (r <= 0) throw volt::ShapeError("rho grid values must be positive");
  if (grid.empty()) throw volt::ShapeError("empty rho grid");
  return grid;
}

int run_analyze(const AnalyzeFlags& f) {
  apply_threads();
  std::vector<int> filters;
  std::vector<double> grid;
  try {
    filters = parse_filters(f.filters);
    grid = parse_rho_grid(f.rho_grid, f.rho_scale);
  } catch (const std::invalid_argument&) {
    std::fprintf(stderr, "volt analyze: cannot parse --filters/--rho-grid\n");
    return kUsage;
  }

  auto ck = volt::load_checkpoint<double>(f.ckpt);
  auto* vconv = dynamic_cast<volt::VolterraConv<double>*>(&ck.net.layer(1));
  if (vconv == nullptr) {
    std::fprintf(stderr,
                 "volt analyze: checkpoint has a linear first layer; nothing to "
                 "analyze\n");
    return kUsage;
  }
  const auto& bank = vconv->bank();
  for (const int fi : filters)
    if (fi < 0 || fi >= bank.geom.out_channels) {
      std::fprintf(stderr, "volt analyze: filter %d out of range [0, %d)\n", fi,
                   bank.geom.out_channels);
      return kUsage;
    }

  const int rc0 = prepare_out_dir(f.out, f.force);
  if (rc0 != kOk) return rc0;
  const fs::path out(f.out);

  const auto hl = volt::weight_histogram(bank, volt::WeightPart::linear, f.bins);
  const auto hq = volt::weight_histogram(bank, volt::WeightPart::quadratic, f.bins);
  volt::write_histogram_csv((out / "hist_linear.csv").string(), hl);
  volt::write_histogram_csv((out / "hist_quadratic.csv").string(), hq);
  std::printf("linear weights:    mean %+.5f, std %.5f (%zu values)\n", hl.mean,
              hl.stddev, bank.w1.size());
  std::printf("quadratic weights: mean %+.5f, std %.5f (%zu values)\n", hq.mean,
              hq.stddev, bank.w2.size());
  if (hq.stddev < hl.stddev)
    std::printf("observation: quadratic-weight std < linear-weight std\n");

  std::vector<std::string> artifacts = {"hist_linear.csv", "hist_quadratic.csv"};
  for (const int fi : filters) {
    const auto slices = volt::extract_weight_slices(bank, fi);
    char prefix[32];
    std::snprintf(prefix, sizeof(prefix), "filter_%02d", fi);
    const auto pgms = volt::write_slice_pgms((out / prefix).string(), slices);
    for (const auto& p : pgms) artifacts.push_back(fs::path(p).filename().string());
    const auto sheet = std::string(prefix) + "_sheet.svg";
    volt::write_slice_contact_sheet_svg((out / sheet).string(), slices);
    artifacts.push_back(sheet);

    const auto rows = volt::response_profile(bank, fi, grid);
    const auto pcsv = std::string(prefix) + "_profile.csv";
    const auto psvg = std::string(prefix) + "_profile.svg";
    volt::write_profile_csv((out / pcsv).string(), rows);
    volt::write_profile_svg((out / psvg).string(), rows);
    artifacts.push_back(pcsv);
    artifacts.push_back(psvg);
  }

  json config;
  config["ckpt"] = f.ckpt;
  config["filters"] = f.filters;
  config["rho_grid"] = grid;
  config["rho_scale"] = f.rho_scale;
  config["bins"] = f.bins;
  json art;
  art["files"] = artifacts;
  write_manifest(f.out, "analyze", 0, config, art);
  std::printf("wrote %zu artifacts under %s\n", artifacts.size() + 1, f.out.c_str());
  return kOk;
}

// -------------------------------------------------------------------------
// count

struct CountFlags {
  int n = 0, r = 2, depth = 28, widen = 10, classes = 10, in_channels = 3;
};

std::int64_t monomial_count(int n, int r) {
  // Monomials of total degree <= r in n variables: C(n + r, r).
  std::int64_t res = 1;
  for (int i = 1; i <= r; ++i) res = res * (n + i) / i;
  return res;
}

int run_count(const CountFlags& f) {
  if (f.n > 0) {
    if (f.r < 0) {
      std::fprintf(stderr, "volt count: order must be >= 0\n");
      return kUsage;
    }
    std::printf("monomials(n=%d, r=%d) = %lld\n", f.n, f.r,
                static_cast<long long>(monomial_count(f.n, f.r)));
    return kOk;
  }

  volt::NetworkSpec spec;
  spec.depth = f.depth;
  spec.widen = f.widen;
  spec.classes = f.classes;
  spec.in_channels = f.in_channels;
  try {
    (void)spec.blocks_per_group();
  } catch (const volt::ShapeError& e) {
    std::fprintf(stderr, "volt count: %s\n", e.what());
    return kUsage;
  }

  spec.first_layer = volt::FirstLayerKind::linear;
  auto lin = volt::build_network<double>(spec);
  spec.first_layer = volt::FirstLayerKind::volterra;
  auto vol = volt::build_network<double>(spec);

  std::printf("depth %d, widen %d, %d classes\n", f.depth, f.widen, f.classes);
  for (const auto& [name, count] : vol.param_table())
    std::printf("  %-34s %12lld\n", name.c_str(), static_cast<long long>(count));
  const auto lt = lin.param_count();
  const auto vt = vol.param_count();
  std::printf("total (volterra first layer)  %12lld\n", static_cast<long long>(vt));
  std::printf("total (linear first layer)    %12lld\n", static_cast<long long>(lt));
  std::printf("volterra - baseline delta     %12lld\n", static_cast<long long>(vt - lt));
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"second-order Volterra convolution toolkit"};
  app.require_subcommand(1);
  app.add_option("--threads", g_threads,
                 "worker thread cap (1 = serial, bit-reproducible)")
      ->envname("VOLT_THREADS");
  // Processed by the root app (subcommand keys go under a [train] section).
  app.set_config("--config", "", "key=value file merged under explicit flags");

  TrainFlags tf;
  auto* train = app.add_subcommand("train", "train a network and write history");
  train->add_option("--data", tf.data, "dataset directory (cifar only)");
  train->add_option("--dataset", tf.dataset, "cifar10 | cifar100 | synthetic");
  train->add_option("--depth", tf.depth, "network depth, (depth-4)/6 blocks per group");
  train->add_option("--widen", tf.widen, "width multiplier k");
  train->add_option("--classes", tf.classes, "class count (synthetic gaussian only)");
  train->add_option("--first-layer", tf.first_layer, "linear | volterra")
      ->check(CLI::IsMember({"linear", "volterra"}));
  train->add_option("--quad-mode", tf.quad_mode, "full | per_channel")
      ->check(CLI::IsMember({"full", "per_channel"}));
  train->add_option("--synthetic-mode", tf.synthetic_mode, "quadratic | gaussian")
      ->check(CLI::IsMember({"quadratic", "gaussian"}));
  tf.seed_opt = train->add_option("--seed", tf.seed, "master seed");
  train->add_flag("--deterministic,!--no-deterministic", tf.deterministic,
                  "require explicit seed; bit-reproducible with --threads 1");
  train->add_option("--batch", tf.batch, "minibatch size");
  train->add_option("--momentum", tf.momentum, "SGD momentum");
  train->add_flag("--nesterov", tf.nesterov, "Nesterov momentum");
  tf.epochs_opt = train->add_option("--epochs", tf.epochs,
                                    "epochs; schedule compresses proportionally");
  train->add_option("--dropout", tf.dropout, "residual-block dropout rate");
  tf.augment_opt = train->add_flag("--augment,!--no-augment", tf.augment,
                                   "flip + pad-4 reflect crop (default: on for cifar)");
  train->add_option("--train-count", tf.train_count, "synthetic train samples");
  train->add_option("--test-count", tf.test_count, "synthetic test samples");
  train->add_option("--checkpoint-every", tf.checkpoint_every,
                    "epochs between checkpoints (0 = final only)");
  train->add_option("--out", tf.out, "output directory")->required();
  train->add_flag("--force", tf.force, "allow reuse of an existing output directory");
  train->add_option("--from-manifest", tf.from_manifest,
                    "replay the resolved config of a previous run");

  GradcheckFlags gf;
  auto* gradcheck =
      app.add_subcommand("gradcheck", "finite-difference check of both kernels");
  gradcheck->add_option("--n", gf.n, "restrict to patch length 4, 9, or 27 (0 = all)")
      ->check(CLI::IsMember({0, 4, 9, 27}));
  gradcheck->add_option("--seed", gf.seed, "parameter draw seed");
  gradcheck->add_flag("--mutate-sign", gf.mutate_sign)->group("");  // test fixture

  BenchFlags bf;
  auto* bench = app.add_subcommand("bench", "kernel timing sweep over geometry");
  bench->add_option("--sizes", bf.sizes, "square input sizes to sweep");
  bench->add_option("--batch", bf.batch, "batch size");
  bench->add_option("--repeats", bf.repeats, "timing repeats (median wins)");
  bench->add_option("--out", bf.out, "output directory")->required();
  bench->add_flag("--force", bf.force, "allow reuse of an existing output directory");

  AnalyzeFlags af;
  auto* analyze =
      app.add_subcommand("analyze", "emit filter analysis artifacts from a checkpoint");
  analyze->add_option("--ckpt", af.ckpt, "checkpoint file")->required();
  analyze->add_option("--filters", af.filters, "range a..b or comma list");
  analyze->add_option("--rho-grid", af.rho_grid,
                      "default (16 log-spaced in [0.1,10]*scale) or comma list");
  analyze->add_option("--rho-scale", af.rho_scale,
                      "scale for the default grid (e.g. an RMS patch norm)");
  analyze->add_option("--bins", af.bins, "histogram bins");
  analyze->add_option("--out", af.out, "output directory")->required();
  analyze->add_flag("--force", af.force, "allow reuse of an existing output directory");

  CountFlags cf;
  auto* count = app.add_subcommand("count", "parameter counting");
  count->add_option("--n", cf.n, "monomial mode: patch length");
  count->add_option("--r", cf.r, "monomial mode: maximum order");
  count->add_option("--depth", cf.depth, "network mode: depth");
  count->add_option("--widen", cf.widen, "network mode: width multiplier");
  count->add_option("--classes", cf.classes, "network mode: classes");
  count->add_option("--in-channels", cf.in_channels, "network mode: input channels");

  for (auto* sub : {train, gradcheck, bench, analyze, count})
    sub->fallthrough();  // let --threads appear after the subcommand too

  int rc = kOk;
  train->callback([&] { rc = run_train(tf); });
  gradcheck->callback([&] { rc = run_gradcheck(gf); });
  bench->callback([&] { rc = run_bench(bf); });
  analyze->callback([&] { rc = run_analyze(af); });
  count->callback([&] { rc = run_count(cf); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  } catch (const volt::IoError& e) {
    std::fprintf(stderr, "volt: %s\n", e.what());
    return kIoFail;
  } catch (const volt::FormatError& e) {
    std::fprintf(stderr, "volt: %s\n", e.what());
    return kIoFail;
  } catch (const volt::ShapeError& e) {
    std::fprintf(stderr, "volt: %s\n", e.what());
    return kUsage;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "volt: %s\n", e.what());
    return kCheckFail;
  }
  return rc;
}
