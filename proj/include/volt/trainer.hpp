#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "volt/common.hpp"
#include "volt/data.hpp"
#include "volt/layers.hpp"
#include "volt/network.hpp"
#include "volt/rng.hpp"
#include "volt/tensor.hpp"

namespace volt {

// ---------------------------------------------------------------------------
// Learning-rate schedule

/// One row of the epoch-indexed schedule: epochs first..last inclusive run at
/// this learning rate and weight decay.
struct ScheduleRow {
  int first = 1;
  int last = 1;
  double lr = 0.1;
  double weight_decay = 0.0;
};

/// Rows must be contiguous, non-overlapping, and cover [1, epochs] exactly.
inline void validate_schedule(const std::vector<ScheduleRow>& rows, int epochs) {
  if (rows.empty()) throw ShapeError("schedule: no rows");
  int expect = 1;
  for (const auto& r : rows) {
    if (r.first != expect || r.last < r.first)
      throw ShapeError("schedule: rows must be contiguous; got [" +
                       std::to_string(r.first) + "," + std::to_string(r.last) +
                       "] where epoch " + std::to_string(expect) + " was expected");
    expect = r.last + 1;
  }
  if (expect != epochs + 1)
    throw ShapeError("schedule: rows cover [1," + std::to_string(expect - 1) +
                     "] but the run has " + std::to_string(epochs) + " epochs");
}

inline ScheduleRow schedule_lookup(const std::vector<ScheduleRow>& rows, int epoch) {
  for (const auto& r : rows)
    if (epoch >= r.first && epoch <= r.last) return r;
  throw ShapeError("schedule: epoch " + std::to_string(epoch) + " not covered");
}

/// The 220-epoch strategy: lr 0.1 / 0.02 / 0.004 / 0.0008 stepping at epochs
/// 60, 120, 160, with weight decay 5e-4 dropped to 0 for the final stretch.
inline std::vector<ScheduleRow> default_schedule() {
  return {{1, 59, 0.1, 0.0005},
          {60, 119, 0.02, 0.0005},
          {120, 159, 0.004, 0.0005},
          {160, 199, 0.0008, 0.0005},
          {200, 220, 0.0008, 0.0}};
}

/// Rescales row boundaries proportionally onto [1, new_epochs], keeping every
/// non-empty row. Used when a run is shortened (smoke tests) so the lr/decay
/// phases shrink together instead of truncating the tail.
inline std::vector<ScheduleRow> compress_schedule(const std::vector<ScheduleRow>& rows,
                                                  int new_epochs) {
  if (rows.empty()) throw ShapeError("compress_schedule: no rows");
  if (new_epochs < 1) throw ShapeError("compress_schedule: epochs must be positive");
  const double scale = static_cast<double>(new_epochs) / rows.back().last;
  std::vector<ScheduleRow> out;
  int prev_last = 0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    int last = i + 1 == rows.size()
                   ? new_epochs
                   : static_cast<int>(std::llround(rows[i].last * scale));
    last = std::min(last, new_epochs);
    if (last <= prev_last) continue;  // row shrank to nothing
    out.push_back({prev_last + 1, last, rows[i].lr, rows[i].weight_decay});
    prev_last = last;
  }
  out.back().last = new_epochs;
  validate_schedule(out, new_epochs);
  return out;
}

// ---------------------------------------------------------------------------
// SGD with momentum

/// v <- momentum*v + (g + wd*p); p <- p - lr*v. The Nesterov variant applies
/// p <- p - lr*(g + wd*p + momentum*v) with the same velocity recurrence.
/// Weight decay is skipped for params whose view says so (BN affine, biases).
/// velocity may be passed empty and is sized on first use.
template <typename T>
void sgd_step(std::vector<ParamView<T>>& params, std::vector<std::vector<T>>& velocity,
              double lr, double weight_decay, double momentum, bool nesterov = false) {
  if (velocity.empty()) {
    velocity.resize(params.size());
    for (std::size_t p = 0; p < params.size(); ++p)
      velocity[p].assign(params[p].value->size(), T(0));
  }
  if (velocity.size() != params.size())
    throw ShapeError("sgd_step: velocity/param group count mismatch");
  for (std::size_t p = 0; p < params.size(); ++p) {
    auto& value = *params[p].value;
    const auto& grad = *params[p].grad;
    auto& vel = velocity[p];
    if (vel.size() != value.size() || grad.size() != value.size())
      throw ShapeError("sgd_step: size mismatch in " + params[p].name);
    const T wd = params[p].decay ? static_cast<T>(weight_decay) : T(0);
    const T m = static_cast<T>(momentum), step = static_cast<T>(lr);
    for (std::size_t i = 0; i < value.size(); ++i) {
      if (!std::isfinite(static_cast<double>(grad[i])))
        throw NumericError("sgd_step: non-finite gradient in " + params[p].name +
                           " at index " + std::to_string(i));
      const T g = grad[i] + wd * value[i];
      vel[i] = m * vel[i] + g;
      value[i] -= step * (nesterov ? g + m * vel[i] : vel[i]);
    }
  }
}

// ---------------------------------------------------------------------------
// Evaluation

/// Index of the largest logit of sample i; ties go to the lowest index.
template <typename T>
int argmax_class(const Tensor4<T>& logits, int i) {
  const T* row = logits.sample(i);
  const std::size_t k = logits.sample_size();
  return static_cast<int>(std::max_element(row, row + k) - row);
}

template <typename T>
int argmax_hits(const Tensor4<T>& logits, const std::vector<int>& labels) {
  if (static_cast<int>(labels.size()) != logits.n)
    throw ShapeError("argmax_hits: label count mismatch");
  int hits = 0;
  for (int i = 0; i < logits.n; ++i) hits += argmax_class(logits, i) == labels[i];
  return hits;
}

/// Top-1 error rate of the network on the set, eval mode, batched.
template <typename T>
double evaluate(Network<T>& net, const LabeledImageSet<T>& set, int batch_size = 256) {
  if (set.count() == 0) throw ShapeError("evaluate: empty set");
  if (batch_size < 1) throw ShapeError("evaluate: batch size must be positive");
  const Tensor4<T>& im = set.images;
  Tensor4<T> batch(1, im.c, im.h, im.w);
  int hits = 0;
  for (int start = 0; start < im.n; start += batch_size) {
    const int bs = std::min(batch_size, im.n - start);
    batch.reshape(bs, im.c, im.h, im.w);
    std::memcpy(batch.data.data(), im.sample(start), sizeof(T) * batch.size());
    const Tensor4<T>& logits = net.forward(batch, false);
    const std::vector<int> labels(set.labels.begin() + start,
                                  set.labels.begin() + start + bs);
    hits += argmax_hits(logits, labels);
  }
  return 1.0 - static_cast<double>(hits) / im.n;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace detail {

static_assert(std::endian::native == std::endian::little,
              "checkpoint codec assumes a little-endian host");

inline void put_u32(std::ostream& os, std::uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), 4);
}
inline void put_u64(std::ostream& os, std::uint64_t v) {
  os.write(reinterpret_cast<const char*>(&v), 8);
}
inline void put_f64(std::ostream& os, double v) {
  os.write(reinterpret_cast<const char*>(&v), 8);
}
inline void put_str(std::ostream& os, const std::string& s) {
  put_u32(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}
template <typename T>
void put_array(std::ostream& os, const std::vector<T>& v) {
  put_u64(os, v.size());
  os.write(reinterpret_cast<const char*>(v.data()),
           static_cast<std::streamsize>(v.size() * sizeof(T)));
}

inline std::uint32_t get_u32(std::istream& is) {
  std::uint32_t v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), 4)) throw FormatError("checkpoint: truncated");
  return v;
}
inline std::uint64_t get_u64(std::istream& is) {
  std::uint64_t v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), 8)) throw FormatError("checkpoint: truncated");
  return v;
}
inline double get_f64(std::istream& is) {
  double v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), 8)) throw FormatError("checkpoint: truncated");
  return v;
}
inline std::string get_str(std::istream& is) {
  const std::uint32_t n = get_u32(is);
  if (n > (1u << 20)) throw FormatError("checkpoint: implausible string length");
  std::string s(n, '\0');
  if (!is.read(s.data(), n)) throw FormatError("checkpoint: truncated");
  return s;
}
template <typename T>
std::vector<T> get_array(std::istream& is) {
  const std::uint64_t n = get_u64(is);
  if (n > (1ull << 32)) throw FormatError("checkpoint: implausible array length");
  std::vector<T> v(n);
  if (!is.read(reinterpret_cast<char*>(v.data()),
               static_cast<std::streamsize>(n * sizeof(T))))
    throw FormatError("checkpoint: truncated");
  return v;
}

}  // namespace detail

inline constexpr char kCheckpointMagic[5] = {'V', 'O', 'L', 'T', '1'};

/// Serializes everything a bit-exact resume needs: the network spec, every
/// parameter tensor, BN running stats, per-layer RNG states (dropout), the
/// optimizer velocity, the completed-epoch count, and the master RNG state.
/// The write is atomic: a temp file in the same directory is renamed over
/// the target. Saving a loaded checkpoint reproduces the file byte-for-byte.
template <typename T>
void save_checkpoint(const std::string& path, Network<T>& net, const NetworkSpec& spec,
                     const std::vector<std::vector<T>>& velocity, int epoch,
                     const Rng& master) {
  const auto params = net.params();
  if (!velocity.empty() && velocity.size() != params.size())
    throw ShapeError("save_checkpoint: velocity group count mismatch");

  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open " + tmp + " for writing");
    os.write(kCheckpointMagic, 5);
    detail::put_u32(os, 1);  // version
    detail::put_u32(os, static_cast<std::uint32_t>(sizeof(T)));
    detail::put_u32(os, static_cast<std::uint32_t>(spec.depth));
    detail::put_u32(os, static_cast<std::uint32_t>(spec.widen));
    detail::put_u32(os, static_cast<std::uint32_t>(spec.classes));
    detail::put_u32(os, static_cast<std::uint32_t>(spec.in_channels));
    detail::put_u32(os, spec.first_layer == FirstLayerKind::volterra ? 1 : 0);
    detail::put_u32(os, spec.quad_mode == QuadMode::per_channel ? 1 : 0);
    detail::put_f64(os, spec.dropout);
    detail::put_u32(os, static_cast<std::uint32_t>(epoch));
    detail::put_str(os, master.state());

    const auto rngs = net.rngs();
    detail::put_u32(os, static_cast<std::uint32_t>(rngs.size()));
    for (const Rng* r : rngs) detail::put_str(os, r->state());

    detail::put_u32(os, static_cast<std::uint32_t>(params.size()));
    for (const auto& p : params) {
      detail::put_str(os, p.name);
      detail::put_array(os, *p.value);
    }
    const auto buffers = net.buffers();
    detail::put_u32(os, static_cast<std::uint32_t>(buffers.size()));
    for (const auto& b : buffers) {
      detail::put_str(os, b.name);
      detail::put_array(os, *b.value);
    }
    detail::put_u32(os, static_cast<std::uint32_t>(velocity.size()));
    for (const auto& v : velocity) detail::put_array(os, v);
    if (!os) throw IoError("write failed on " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

template <typename T>
struct LoadedCheckpoint {
  NetworkSpec spec;
  int epoch = 0;
  Rng master{0};
  std::vector<std::vector<T>> velocity;
  Network<T> net;
};

template <typename T>
LoadedCheckpoint<T> load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path);
  char magic[5];
  if (!is.read(magic, 5) || std::memcmp(magic, kCheckpointMagic, 5) != 0)
    throw FormatError(path + ": not a VOLT1 checkpoint");
  const std::uint32_t version = detail::get_u32(is);
  if (version != 1)
    throw FormatError(path + ": unsupported checkpoint version " + std::to_string(version));
  const std::uint32_t dtype = detail::get_u32(is);
  if (dtype != sizeof(T))
    throw FormatError(path + ": dtype width " + std::to_string(dtype) +
                      " does not match the requested scalar width " +
                      std::to_string(sizeof(T)));

  LoadedCheckpoint<T> ck;
  ck.spec.depth = static_cast<int>(detail::get_u32(is));
  ck.spec.widen = static_cast<int>(detail::get_u32(is));
  ck.spec.classes = static_cast<int>(detail::get_u32(is));
  ck.spec.in_channels = static_cast<int>(detail::get_u32(is));
  ck.spec.first_layer =
      detail::get_u32(is) ? FirstLayerKind::volterra : FirstLayerKind::linear;
  ck.spec.quad_mode = detail::get_u32(is) ? QuadMode::per_channel : QuadMode::full;
  ck.spec.dropout = detail::get_f64(is);
  ck.epoch = static_cast<int>(detail::get_u32(is));
  ck.master.restore(detail::get_str(is));

  ck.net = build_network<T>(ck.spec);
  const auto rngs = ck.net.rngs();
  const std::uint32_t nrng = detail::get_u32(is);
  if (nrng != rngs.size())
    throw FormatError(path + ": holds " + std::to_string(nrng) +
                      " layer RNG states, network has " + std::to_string(rngs.size()));
  for (Rng* r : rngs) r->restore(detail::get_str(is));

  auto params = ck.net.params();
  const std::uint32_t nparams = detail::get_u32(is);
  if (nparams != params.size())
    throw FormatError(path + ": holds " + std::to_string(nparams) +
                      " param tensors, network has " + std::to_string(params.size()));
  for (auto& p : params) {
    const std::string name = detail::get_str(is);
    if (name != p.name)
      throw FormatError(path + ": param order mismatch, found '" + name +
                        "' where '" + p.name + "' was expected");
    auto vals = detail::get_array<T>(is);
    if (vals.size() != p.value->size())
      throw FormatError(path + ": size mismatch in " + p.name);
    *p.value = std::move(vals);
  }
  auto buffers = ck.net.buffers();
  const std::uint32_t nbuf = detail::get_u32(is);
  if (nbuf != buffers.size())
    throw FormatError(path + ": buffer count mismatch");
  for (auto& b : buffers) {
    const std::string name = detail::get_str(is);
    if (name != b.name)
      throw FormatError(path + ": buffer order mismatch, found '" + name + "'");
    auto vals = detail::get_array<T>(is);
    if (vals.size() != b.value->size())
      throw FormatError(path + ": size mismatch in " + b.name);
    *b.value = std::move(vals);
  }
  const std::uint32_t nvel = detail::get_u32(is);
  if (nvel != 0 && nvel != params.size())
    throw FormatError(path + ": velocity group count mismatch");
  ck.velocity.resize(nvel);
  for (auto& v : ck.velocity) v = detail::get_array<T>(is);
  return ck;
}

// ---------------------------------------------------------------------------
// Training loop

struct TrainConfig {
  int batch_size = 128;
  double momentum = 0.9;
  bool nesterov = false;
  int epochs = 220;
  double dropout = 0.3;  // consumed by the network builder, echoed here
  std::vector<ScheduleRow> schedule = default_schedule();
  std::uint64_t seed = 0;
  bool deterministic = true;
  bool augment = true;
  int eval_batch = 256;
  int checkpoint_every = 0;     // epochs between checkpoints; 0 = none
  std::string checkpoint_dir;   // empty = no checkpoint writes at all
  std::string history_path;     // empty = no CSV emission
};

struct HistoryRow {
  int epoch = 0;
  double train_loss = 0;
  double test_error = 0;
  double lr = 0;
  double weight_decay = 0;
};

struct TrainResult {
  std::vector<HistoryRow> history;
  /// Per-step batch losses of the first epoch this call ran.
  std::vector<double> first_epoch_step_losses;
};

/// History CSV with full-precision floats, so equal runs produce equal bytes.
inline void write_history_csv(const std::string& path,
                              const std::vector<HistoryRow>& rows) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open " + path + " for writing");
  os << "epoch,train_loss,test_error,lr,weight_decay\n";
  char buf[160];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g,%.17g,%.17g\n", r.epoch,
                  r.train_loss, r.test_error, r.lr, r.weight_decay);
    os << buf;
  }
  if (!os) throw IoError("write failed on " + path);
}

namespace detail {

// Disjoint fork-stream namespaces derived from the master seed. Forks depend
// on the master's seed, not its position, so any epoch's streams can be
// re-derived after a resume.
inline std::uint64_t shuffle_stream(int epoch) {
  return (1ull << 56) + static_cast<std::uint64_t>(epoch);
}
inline std::uint64_t augment_stream(int epoch, int sample) {
  return (2ull << 56) + (static_cast<std::uint64_t>(epoch) << 24) +
         static_cast<std::uint64_t>(sample);
}

template <typename T>
TrainResult train_loop(Network<T>& net, const LabeledImageSet<T>& train_set,
                       const LabeledImageSet<T>& test_set, const TrainConfig& cfg,
                       int start_epoch, std::vector<std::vector<T>>& velocity,
                       Rng& master, const NetworkSpec& spec) {
  validate_schedule(cfg.schedule, cfg.epochs);
  if (cfg.batch_size < 2)
    throw ShapeError("train: batch size must be at least 2 (batch norm)");
  if (train_set.count() < 2) throw ShapeError("train: need at least 2 train samples");
  if (test_set.count() == 0) throw ShapeError("train: empty test set");
  if (start_epoch < 0 || start_epoch > cfg.epochs)
    throw ShapeError("train: start epoch outside [0, epochs]");

  const Tensor4<T>& im = train_set.images;
  auto params = net.params();
  TrainResult result;
  std::vector<int> order(im.n);
  Tensor4<T> batch(1, im.c, im.h, im.w);
  std::vector<int> batch_labels;

  const auto checkpoint_path = [&](const std::string& name) {
    return (std::filesystem::path(cfg.checkpoint_dir) / name).string();
  };

  for (int epoch = start_epoch + 1; epoch <= cfg.epochs; ++epoch) {
    const ScheduleRow row = schedule_lookup(cfg.schedule, epoch);

    for (int i = 0; i < im.n; ++i) order[i] = i;
    Rng shuffle = master.fork(shuffle_stream(epoch));
    for (int i = im.n - 1; i > 0; --i)
      std::swap(order[i], order[shuffle.uniform_int(i + 1)]);

    double loss_sum = 0;
    int seen = 0;
    for (int start = 0; start < im.n; start += cfg.batch_size) {
      const int bs = std::min(cfg.batch_size, im.n - start);
      if (bs < 2) continue;  // batch norm cannot standardize one sample
      batch.reshape(bs, im.c, im.h, im.w);
      batch_labels.resize(bs);
      for (int j = 0; j < bs; ++j) {
        const int src = order[start + j];
        batch_labels[j] = train_set.labels[src];
        if (cfg.augment) {
          Rng aug = master.fork(augment_stream(epoch, src));
          augment_sample(im.sample(src), batch.sample(j), im.c, im.h, im.w, aug);
        } else {
          std::memcpy(batch.sample(j), im.sample(src), sizeof(T) * im.sample_size());
        }
      }

      const Tensor4<T>& logits = net.forward(batch, true);
      LossResult<T> loss = softmax_cross_entropy(logits, batch_labels);
      if (!std::isfinite(static_cast<double>(loss.loss))) {
        std::string note;
        if (!cfg.checkpoint_dir.empty()) {
          const auto where = checkpoint_path("abort.ckpt");
          save_checkpoint(where, net, spec, velocity, epoch - 1, master);
          note = "; state saved to " + where;
        }
        throw NumericError("train: non-finite loss at epoch " + std::to_string(epoch) +
                           ", step " + std::to_string(start / cfg.batch_size) + note);
      }
      loss_sum += static_cast<double>(loss.loss) * bs;
      seen += bs;
      if (epoch == start_epoch + 1)
        result.first_epoch_step_losses.push_back(static_cast<double>(loss.loss));

      net.backward(loss.dlogits);
      sgd_step(params, velocity, row.lr, row.weight_decay, cfg.momentum, cfg.nesterov);
    }
    if (seen == 0) throw ShapeError("train: every batch was smaller than 2 samples");

    HistoryRow h;
    h.epoch = epoch;
    h.train_loss = loss_sum / seen;
    h.test_error = evaluate(net, test_set, cfg.eval_batch);
    h.lr = row.lr;
    h.weight_decay = row.weight_decay;
    result.history.push_back(h);

    if (!cfg.checkpoint_dir.empty() && cfg.checkpoint_every > 0 &&
        (epoch % cfg.checkpoint_every == 0 || epoch == cfg.epochs)) {
      char name[32];
      std::snprintf(name, sizeof(name), "epoch_%04d.ckpt", epoch);
      save_checkpoint(checkpoint_path(name), net, spec, velocity, epoch, master);
    }
    if (!cfg.history_path.empty()) write_history_csv(cfg.history_path, result.history);
  }
  return result;
}

}  // namespace detail

/// Runs the full schedule from scratch. The spec is only recorded into
/// checkpoints; the network must already be built and initialized.
template <typename T>
TrainResult train(Network<T>& net, const LabeledImageSet<T>& train_set,
                  const LabeledImageSet<T>& test_set, const TrainConfig& cfg,
                  const NetworkSpec& spec) {
  std::vector<std::vector<T>> velocity;
  Rng master(cfg.seed);
  return detail::train_loop(net, train_set, test_set, cfg, 0, velocity, master, spec);
}

/// Continues a checkpointed run; bit-identical to the uninterrupted run in
/// deterministic mode because every per-epoch stream is derived from the
/// master seed, not from consumed RNG position.
template <typename T>
TrainResult train_resume(LoadedCheckpoint<T>& ck, const LabeledImageSet<T>& train_set,
                         const LabeledImageSet<T>& test_set, const TrainConfig& cfg) {
  return detail::train_loop(ck.net, train_set, test_set, cfg, ck.epoch, ck.velocity,
                            ck.master, ck.spec);
}

}  // namespace volt
