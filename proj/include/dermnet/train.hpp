#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "dermnet/augment.hpp"
#include "dermnet/checkpoint.hpp"
#include "dermnet/csv.hpp"
#include "dermnet/loss.hpp"
#include "dermnet/metrics.hpp"
#include "dermnet/network.hpp"
#include "dermnet/optimizer.hpp"
#include "dermnet/parallel.hpp"

namespace dermnet {

struct TrainConfig {
  int epochs = 100;
  int batch_size = 10;
  int patience = 15;
  int resume_epochs = 20;
  bool early_stopping = true;
  std::uint64_t seed = 0;

  void validate() const {
    if (epochs < 0 || batch_size < 1 || patience < 1 || resume_epochs < 0)
      raise(Err::BadConfig, "train config values out of range");
  }
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  double val_loss = 0.0;
  double val_accuracy = 0.0;
  int phase = 1;
};

/// Patience counter over a monitored metric; improvement means strictly
/// greater than the best seen so far.
struct EarlyStopper {
  double best = -std::numeric_limits<double>::infinity();
  int best_epoch = 0;
  int since_improvement = 0;

  bool observe(int epoch, double metric) {
    if (metric > best) {
      best = metric;
      best_epoch = epoch;
      since_improvement = 0;
      return true;
    }
    ++since_improvement;
    return false;
  }
};

/// Training inputs: preprocessed (resized + normalized) base images. The
/// augmentation stream re-draws transforms per epoch on top of these.
struct TrainData {
  std::vector<ImageTensor> train_images;
  std::vector<int> train_labels;
  std::vector<ImageTensor> val_images;
  std::vector<int> val_labels;
  AugmentConfig augment;
  int workers = 1;
};

/// HWC [0,1] images -> one NCHW batch tensor.
template <typename T>
TensorT<T> to_batch(const std::vector<const ImageTensor*>& images) {
  const int n = static_cast<int>(images.size());
  const int h = images[0]->height;
  const int w = images[0]->width;
  TensorT<T> out({n, 3, h, w});
  for (int s = 0; s < n; ++s) {
    const ImageTensor& img = *images[static_cast<std::size_t>(s)];
    if (img.height != h || img.width != w)
      raise(Err::ShapeMismatch, "batch images disagree on size");
    T* base = out.ptr() + static_cast<std::size_t>(s) * 3 * h * w;
    for (int c = 0; c < 3; ++c) {
      T* plane = base + static_cast<std::size_t>(c) * h * w;
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
          plane[y * w + x] = static_cast<T>(img.at(y, x, c));
    }
  }
  return out;
}

namespace detail {

template <typename T>
struct EvalResult {
  double loss = 0.0;
  double accuracy = 0.0;
};

/// Inference-mode loss (unweighted) and accuracy over a fixed sample set.
template <typename T>
EvalResult<T> evaluate(NetworkT<T>& net, const std::vector<ImageTensor>& images,
                       const std::vector<int>& labels, int batch_size) {
  if (images.empty()) raise(Err::EmptyValidation, "evaluation set is empty");
  const std::vector<double> unit(static_cast<std::size_t>(net.cfg.num_classes), 1.0);
  ForwardCtx<T> ctx;
  double loss_sum = 0.0;
  std::int64_t correct = 0;
  for (std::size_t start = 0; start < images.size();
       start += static_cast<std::size_t>(batch_size)) {
    const std::size_t end =
        std::min(images.size(), start + static_cast<std::size_t>(batch_size));
    std::vector<const ImageTensor*> batch;
    std::vector<int> targets;
    for (std::size_t i = start; i < end; ++i) {
      batch.push_back(&images[i]);
      targets.push_back(labels[i]);
    }
    const TensorT<T> input = to_batch<T>(batch);
    const TensorT<T>& probs = forward(net, input, /*training=*/false, ctx);
    loss_sum += weighted_cce(probs, targets, unit) * static_cast<double>(targets.size());
    const std::vector<int> preds = predict_labels(probs);
    for (std::size_t i = 0; i < targets.size(); ++i)
      if (preds[i] == targets[i]) ++correct;
  }
  EvalResult<T> r;
  r.loss = loss_sum / static_cast<double>(images.size());
  r.accuracy = static_cast<double>(correct) / static_cast<double>(images.size());
  return r;
}

}  // namespace detail

template <typename T>
using Velocity = std::map<std::string, TensorT<T>>;

template <typename T>
Velocity<T> zero_velocity(const NetworkT<T>& net) {
  Velocity<T> v;
  for (const auto& [name, tensor] : net.params)
    if (param_trainable(net, name)) v.emplace(name, TensorT<T>(tensor.shape));
  return v;
}

/// One pass over the training stream (seeded shuffle, augmented batches,
/// forward/backward/SGD per batch) followed by inference-mode evaluation of
/// the untouched validation set.
template <typename T>
EpochRecord run_epoch(NetworkT<T>& net, const TrainData& data, int epoch,
                      const std::vector<double>& class_weights,
                      const OptimizerConfig& opt_cfg, const TrainConfig& train_cfg,
                      Velocity<T>& velocity) {
  opt_cfg.validate();
  train_cfg.validate();
  if (data.val_images.empty()) raise(Err::EmptyValidation, "validation set is empty");
  if (data.train_images.empty()) raise(Err::EmptyInput, "training set is empty");

  const AugmentedStream stream(data.train_images, data.train_labels, data.augment,
                               epoch);
  const std::size_t n = stream.size();

  // Deterministic per-epoch visit order.
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng shuffle_rng(mix_seed(train_cfg.seed, static_cast<std::uint64_t>(epoch),
                           0x5346554cULL));
  shuffle_rng.shuffle(order);

  ForwardCtx<T> ctx;
  double loss_sum = 0.0;
  std::int64_t correct = 0;

  for (std::size_t start = 0; start < n;
       start += static_cast<std::size_t>(train_cfg.batch_size)) {
    const std::size_t end =
        std::min(n, start + static_cast<std::size_t>(train_cfg.batch_size));
    const std::size_t bs = end - start;

    std::vector<ImageTensor> augmented(bs);
    std::vector<int> targets(bs);
    parallel_for(bs, data.workers, [&](std::size_t j) {
      const std::size_t rec = order[start + j];
      augmented[j] = stream.sample(rec);
      targets[j] = stream.label(rec);
    });
    std::vector<const ImageTensor*> ptrs(bs);
    for (std::size_t j = 0; j < bs; ++j) ptrs[j] = &augmented[j];

    const TensorT<T> input = to_batch<T>(ptrs);
    const std::uint64_t step_seed =
        mix_seed(train_cfg.seed, static_cast<std::uint64_t>(epoch), start);
    const TensorT<T>& probs = forward(net, input, /*training=*/true, ctx, step_seed);

    loss_sum += weighted_cce(probs, targets, class_weights) *
                static_cast<double>(bs);
    const std::vector<int> preds = predict_labels(probs);
    for (std::size_t j = 0; j < bs; ++j)
      if (preds[j] == targets[j]) ++correct;

    const TensorT<T> dprobs = weighted_cce_grad(probs, targets, class_weights);
    GradMap<T> grads = backward(net, ctx, dprobs);
    for (auto& [name, grad] : grads)
      sgd_step(net.param(name), grad, velocity.at(name), opt_cfg);
  }

  const auto val = detail::evaluate(net, data.val_images, data.val_labels,
                                    train_cfg.batch_size);
  EpochRecord rec;
  rec.epoch = epoch;
  rec.train_loss = loss_sum / static_cast<double>(n);
  rec.train_accuracy = static_cast<double>(correct) / static_cast<double>(n);
  rec.val_loss = val.loss;
  rec.val_accuracy = val.accuracy;
  return rec;
}

struct FitResult {
  std::vector<EpochRecord> history;
  std::string best_checkpoint;
  double best_metric = 0.0;
  int best_epoch = 0;
  int stopped_epoch = 0;
  bool early_stopped = false;
};

/// Per-epoch runner, injectable so scripted metric sequences can drive the
/// early-stopping logic in tests.
template <typename T>
using EpochFn = std::function<EpochRecord(NetworkT<T>&, int epoch)>;

/// Trains up to train_cfg.epochs epochs, monitoring validation accuracy.
/// A strict improvement saves the checkpoint and resets the patience
/// counter; `patience` stale epochs stop the run.
template <typename T>
FitResult fit(NetworkT<T>& net, const TrainData& data,
              const TrainConfig& train_cfg, const OptimizerConfig& opt_cfg,
              const std::vector<double>& class_weights,
              const std::string& checkpoint_dir, EpochFn<T> epoch_fn = {},
              int first_epoch = 1, double initial_best = 0.0, int phase = 1,
              int trainable_last_n = 0) {
  train_cfg.validate();
  opt_cfg.validate();
  std::filesystem::create_directories(checkpoint_dir);
  const std::string best_path =
      (std::filesystem::path(checkpoint_dir) / "best.ckpt").string();

  Velocity<T> velocity = zero_velocity(net);
  if (!epoch_fn) {
    epoch_fn = [&data, &class_weights, &opt_cfg, &train_cfg, &velocity](
                   NetworkT<T>& n, int epoch) {
      return run_epoch(n, data, epoch, class_weights, opt_cfg, train_cfg, velocity);
    };
  }

  EarlyStopper stopper;
  if (initial_best > 0.0) {
    stopper.best = initial_best;
    stopper.best_epoch = first_epoch - 1;
  }

  FitResult result;
  result.best_checkpoint = best_path;
  const int max_epochs = train_cfg.epochs;
  const int last_epoch = first_epoch + max_epochs - 1;

  for (int epoch = first_epoch; epoch <= last_epoch; ++epoch) {
    EpochRecord rec = epoch_fn(net, epoch);
    rec.epoch = epoch;
    rec.phase = phase;
    result.history.push_back(rec);
    result.stopped_epoch = epoch;

    if (stopper.observe(epoch, rec.val_accuracy)) {
      CheckpointMeta meta;
      meta.epoch = epoch;
      meta.best_metric = stopper.best;
      meta.best_epoch = epoch;
      meta.trainable_last_n = trainable_last_n;
      meta.phase = phase;
      save_checkpoint(net, meta, best_path);
    }
    if (train_cfg.early_stopping && stopper.since_improvement >= train_cfg.patience) {
      result.early_stopped = true;
      break;
    }
  }
  result.best_metric = stopper.best;
  result.best_epoch = stopper.best_epoch;
  return result;
}

/// Loads the best phase-1 checkpoint, reapplies its freeze mask, zeroes the
/// optimizer velocity, and continues training for up to extra_epochs with the
/// early stopper seeded from the restored best metric. The checkpoint at the
/// returned path is the best across both phases.
inline FitResult resume_from_best(const std::string& checkpoint_path,
                                  const TrainData& data, int extra_epochs,
                                  const OptimizerConfig& opt_cfg,
                                  const std::vector<double>& class_weights,
                                  const TrainConfig& base_cfg,
                                  const std::string& checkpoint_dir,
                                  EpochFn<float> epoch_fn = {}) {
  LoadedCheckpoint loaded = load_checkpoint(checkpoint_path);
  std::filesystem::create_directories(checkpoint_dir);
  const std::string best_path =
      (std::filesystem::path(checkpoint_dir) / "best.ckpt").string();

  // Seed the output with the incoming best so a fruitless resume still
  // leaves the overall best in place.
  if (std::filesystem::absolute(best_path) !=
      std::filesystem::absolute(checkpoint_path)) {
    std::filesystem::copy_file(checkpoint_path, best_path,
                               std::filesystem::copy_options::overwrite_existing);
  }

  TrainConfig cfg = base_cfg;
  cfg.epochs = extra_epochs;

  FitResult result;
  if (extra_epochs == 0) {
    result.best_checkpoint = best_path;
    result.best_metric = loaded.meta.best_metric;
    result.best_epoch = loaded.meta.best_epoch;
    result.stopped_epoch = loaded.meta.epoch;
    return result;
  }

  result = fit(loaded.net, data, cfg, opt_cfg, class_weights, checkpoint_dir,
               std::move(epoch_fn), loaded.meta.epoch + 1,
               loaded.meta.best_metric, /*phase=*/2,
               loaded.meta.trainable_last_n);
  if (result.best_metric <= loaded.meta.best_metric) {
    result.best_metric = loaded.meta.best_metric;
    result.best_epoch = loaded.meta.best_epoch;
  }
  return result;
}

/// History CSV: epoch,train_loss,train_accuracy,val_loss,val_accuracy with an
/// extra phase column once a second phase exists.
inline std::string history_csv(const std::vector<EpochRecord>& history,
                               bool with_phase = false) {
  std::ostringstream os;
  os << "epoch,train_loss,train_accuracy,val_loss,val_accuracy";
  if (with_phase) os << ",phase";
  os << "\n";
  for (const auto& r : history) {
    os << r.epoch << ',' << fmt_double(r.train_loss) << ','
       << fmt_double(r.train_accuracy) << ',' << fmt_double(r.val_loss) << ','
       << fmt_double(r.val_accuracy);
    if (with_phase) os << ',' << r.phase;
    os << "\n";
  }
  return os.str();
}

}  // namespace dermnet
