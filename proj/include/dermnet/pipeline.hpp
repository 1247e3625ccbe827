#pragma once

#include <fcntl.h>
#include <unistd.h>

#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "dermnet/augment.hpp"
#include "dermnet/checkpoint.hpp"
#include "dermnet/config_json.hpp"
#include "dermnet/image_io.hpp"
#include "dermnet/manifest.hpp"
#include "dermnet/metrics.hpp"
#include "dermnet/parallel.hpp"
#include "dermnet/synthetic.hpp"
#include "dermnet/train.hpp"

namespace dermnet {

inline void to_json(json& j, const OptimizerConfig& c) {
  j = json{{"learning_rate", c.learning_rate},
           {"momentum", c.momentum},
           {"nesterov", c.nesterov}};
}

inline void from_json(const json& j, OptimizerConfig& c) {
  OptimizerConfig d;
  c.learning_rate = j.value("learning_rate", d.learning_rate);
  c.momentum = j.value("momentum", d.momentum);
  c.nesterov = j.value("nesterov", d.nesterov);
}

inline void to_json(json& j, const TrainConfig& c) {
  j = json{{"epochs", c.epochs},
           {"batch_size", c.batch_size},
           {"patience", c.patience},
           {"resume_epochs", c.resume_epochs},
           {"early_stopping", c.early_stopping}};
}

inline void from_json(const json& j, TrainConfig& c) {
  TrainConfig d;
  c.epochs = j.value("epochs", d.epochs);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.patience = j.value("patience", d.patience);
  c.resume_epochs = j.value("resume_epochs", d.resume_epochs);
  c.early_stopping = j.value("early_stopping", d.early_stopping);
}

/// One run-config file drives every command. All randomness flows from the
/// three seeds (split, augment, init); the training shuffle stream is derived
/// from the augment seed.
struct RunConfig {
  std::string manifest;
  std::string image_dir;
  std::string output_dir;

  double split_ratio = 0.8;
  std::uint64_t split_seed = 0;
  bool stratified = false;

  std::int64_t cap = 450;
  std::string class_weight_source = "capped";  // capped | precap | none
  bool cache_preprocessed = false;
  int workers = 1;
  int trainable_last_n = 0;  // 0 = train everything

  AugmentConfig augment;
  NetworkConfig network;
  OptimizerConfig optimizer;
  TrainConfig train;

  void validate() const {
    if (output_dir.empty()) raise(Err::BadConfig, "output_dir is required");
    if (!(split_ratio > 0.0 && split_ratio < 1.0))
      raise(Err::BadConfig, "split ratio must be in (0,1)");
    if (cap < 1) raise(Err::BadConfig, "cap must be >= 1");
    if (class_weight_source != "capped" && class_weight_source != "precap" &&
        class_weight_source != "none")
      raise(Err::BadConfig,
            "class_weight_source must be capped, precap, or none");
    if (workers < 1) raise(Err::BadConfig, "workers must be >= 1");
    augment.validate();
    network.validate();
    optimizer.validate();
    train.validate();
  }

  /// The training-loop shuffle/dropout stream, derived so that the three
  /// named seeds fully determine a run.
  std::uint64_t derived_train_seed() const {
    return mix_seed(augment.seed, 0x7261696eULL);
  }
};

inline void to_json(json& j, const RunConfig& c) {
  j = json{{"paths",
            {{"manifest", c.manifest},
             {"image_dir", c.image_dir},
             {"output_dir", c.output_dir}}},
           {"split",
            {{"ratio", c.split_ratio},
             {"seed", c.split_seed},
             {"stratified", c.stratified}}},
           {"cap", c.cap},
           {"class_weight_source", c.class_weight_source},
           {"cache_preprocessed", c.cache_preprocessed},
           {"workers", c.workers},
           {"trainable_last_n", c.trainable_last_n},
           {"augment", c.augment},
           {"network", c.network},
           {"optimizer", c.optimizer},
           {"train", c.train}};
}

inline void from_json(const json& j, RunConfig& c) {
  const RunConfig d;
  if (j.contains("paths")) {
    const json& p = j["paths"];
    c.manifest = p.value("manifest", d.manifest);
    c.image_dir = p.value("image_dir", d.image_dir);
    c.output_dir = p.value("output_dir", d.output_dir);
  }
  if (j.contains("split")) {
    const json& s = j["split"];
    c.split_ratio = s.value("ratio", d.split_ratio);
    c.split_seed = s.value("seed", d.split_seed);
    c.stratified = s.value("stratified", d.stratified);
  }
  c.cap = j.value("cap", d.cap);
  c.class_weight_source = j.value("class_weight_source", d.class_weight_source);
  c.cache_preprocessed = j.value("cache_preprocessed", d.cache_preprocessed);
  c.workers = j.value("workers", d.workers);
  c.trainable_last_n = j.value("trainable_last_n", d.trainable_last_n);
  c.augment = j.value("augment", d.augment);
  c.network = j.value("network", d.network);
  c.optimizer = j.value("optimizer", d.optimizer);
  c.train = j.value("train", d.train);
}

inline RunConfig load_run_config(const std::string& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::exception& e) {
    raise(Err::BadConfig, std::string("cannot parse config: ") + e.what(), path);
  }
  RunConfig cfg = j.get<RunConfig>();
  return cfg;
}

// ---------------------------------------------------------------------------
// Output-directory plumbing
// ---------------------------------------------------------------------------

/// Guards an output directory against concurrent runs: an exclusive-create
/// lock file, removed when the command finishes.
class OutputLock {
 public:
  explicit OutputLock(const std::string& dir) {
    std::filesystem::create_directories(dir);
    path_ = (std::filesystem::path(dir) / ".lock").string();
    const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd < 0) {
      path_.clear();
      raise(Err::LockHeld, "output directory is locked by another run: " + dir, dir);
    }
    ::close(fd);
  }

  OutputLock(const OutputLock&) = delete;
  OutputLock& operator=(const OutputLock&) = delete;

  ~OutputLock() {
    if (!path_.empty()) {
      std::error_code ec;
      std::filesystem::remove(path_, ec);
    }
  }

 private:
  std::string path_;
};

struct RunStatus {
  std::string command;
  std::string status = "ok";
  std::map<std::string, bool> artifacts;
  std::optional<int> early_stop_epoch;
  json error;

  void add(const std::string& name, bool written = true) { artifacts[name] = written; }

  json to_json_obj() const {
    json j{{"command", command}, {"status", status}, {"artifacts", artifacts}};
    j["early_stop_epoch"] =
        early_stop_epoch ? json(*early_stop_epoch) : json(nullptr);
    if (!error.is_null()) j["error"] = error;
    return j;
  }
};

inline void write_run_status(const std::string& out_dir, const RunStatus& st) {
  write_file((std::filesystem::path(out_dir) / "run_status.json").string(),
             st.to_json_obj().dump(2) + "\n");
}

inline void echo_config(const RunConfig& cfg) {
  const json j = cfg;
  write_file((std::filesystem::path(cfg.output_dir) / "config.json").string(),
             j.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Shared helpers
// ---------------------------------------------------------------------------

inline std::string image_path_for(const std::string& image_dir,
                                  const std::string& image_id) {
  const auto base = std::filesystem::path(image_dir) / image_id;
  for (const char* ext : {".jpg", ".jpeg", ".png"}) {
    const std::string candidate = base.string() + ext;
    if (std::filesystem::exists(candidate)) return candidate;
  }
  raise(Err::MissingFile, "no image file for id '" + image_id + "'", image_dir);
}

/// Loads, resizes to the network input, and normalizes one sample.
inline ImageTensor preprocess_image(const std::string& image_dir,
                                    const std::string& image_id, int input_hw) {
  const ImageTensor raw = load_image(image_path_for(image_dir, image_id));
  return normalize(resize(raw, input_hw, input_hw));
}

struct Listing {
  std::vector<std::string> image_ids;
  std::vector<int> labels;
};

inline std::string listing_csv(const std::vector<SampleRecord>& records) {
  std::ostringstream os;
  os << "image_id,label_code\n";
  for (const auto& r : records) os << r.image_id << ',' << r.label_code << "\n";
  return os.str();
}

inline Listing read_listing(const std::string& path) {
  const std::vector<std::string> lines = split_lines(read_file(path));
  if (lines.empty() || csv_split(lines[0]) != std::vector<std::string>{"image_id", "label_code"})
    raise(Err::MissingHeader, "listing must start with image_id,label_code", path);
  Listing l;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto f = csv_split(lines[i]);
    if (f.size() != 2)
      raise(Err::MalformedRow, "expected 2 fields", path, static_cast<long>(i + 1));
    l.image_ids.push_back(f[0]);
    l.labels.push_back(std::stoi(f[1]));
  }
  return l;
}

inline std::vector<ImageTensor> load_preprocessed(const std::string& image_dir,
                                                  const std::vector<std::string>& ids,
                                                  int input_hw, int workers) {
  std::vector<ImageTensor> out(ids.size());
  std::exception_ptr failure;
  std::mutex mu;
  parallel_for(ids.size(), workers, [&](std::size_t i) {
    try {
      out[i] = preprocess_image(image_dir, ids[i], input_hw);
    } catch (...) {
      const std::lock_guard<std::mutex> lock(mu);
      if (!failure) failure = std::current_exception();
    }
  });
  if (failure) std::rethrow_exception(failure);
  return out;
}

inline json counts_json(const std::array<std::int64_t, 7>& counts) {
  json j;
  for (int c = 0; c < kNumClasses; ++c)
    j[std::string(kClassNames[static_cast<std::size_t>(c)])] =
        counts[static_cast<std::size_t>(c)];
  return j;
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

/// prepare: parse/encode/impute, split, cap, class weights, report.
inline RunStatus cmd_prepare(const RunConfig& cfg) {
  cfg.validate();
  RunStatus st;
  st.command = "prepare";
  const std::filesystem::path out(cfg.output_dir);
  std::filesystem::create_directories(out);

  auto records = impute_age(encode_labels(parse_manifest(read_file(cfg.manifest),
                                                         cfg.manifest)));
  const auto pre_counts = class_counts(records);

  const SplitResult sp = split(records, cfg.split_ratio, cfg.split_seed, cfg.stratified);
  const auto train_pre_counts = class_counts(sp.train);
  const auto val_counts = class_counts(sp.validation);

  const auto capped = cap_classes(sp.train, cfg.cap, mix_seed(cfg.split_seed, 0xCA9));
  const auto train_post_counts = class_counts(capped);

  std::vector<double> weights(kNumClasses, 1.0);
  if (cfg.class_weight_source != "none") {
    const auto& source_counts = cfg.class_weight_source == "capped"
                                    ? train_post_counts
                                    : train_pre_counts;
    weights = class_weights(
        std::vector<std::int64_t>(source_counts.begin(), source_counts.end()));
  }

  write_file((out / "train_listing.csv").string(), listing_csv(sp.train));
  st.add("train_listing.csv");
  write_file((out / "val_listing.csv").string(), listing_csv(sp.validation));
  st.add("val_listing.csv");
  write_file((out / "train_capped_listing.csv").string(), listing_csv(capped));
  st.add("train_capped_listing.csv");

  json weights_json;
  weights_json["source"] = cfg.class_weight_source;
  for (int c = 0; c < kNumClasses; ++c)
    weights_json["weights"][std::string(kClassNames[static_cast<std::size_t>(c)])] =
        weights[static_cast<std::size_t>(c)];
  write_file((out / "class_weights.json").string(), weights_json.dump(2) + "\n");
  st.add("class_weights.json");

  json report{{"total_records", records.size()},
              {"class_counts", counts_json(pre_counts)},
              {"train_counts_pre_cap", counts_json(train_pre_counts)},
              {"train_counts_post_cap", counts_json(train_post_counts)},
              {"val_counts", counts_json(val_counts)}};
  write_file((out / "prepare_report.json").string(), report.dump(2) + "\n");
  st.add("prepare_report.json");

  if (cfg.cache_preprocessed) {
    std::vector<SampleRecord> all = sp.train;
    all.insert(all.end(), sp.validation.begin(), sp.validation.end());
    std::vector<std::string> ids;
    for (const auto& r : all) ids.push_back(r.image_id);
    const auto images =
        load_preprocessed(cfg.image_dir, ids, cfg.network.input_hw, cfg.workers);
    std::map<std::string, Tensor> tensors;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      const ImageTensor& img = images[i];
      tensors.emplace(ids[i], Tensor({img.height, img.width, 3},
                                     std::vector<float>(img.data)));
    }
    NetworkT<float> shell;  // carries only the config in the archive header
    shell.cfg = cfg.network;
    shell.params = std::move(tensors);
    save_checkpoint(shell, CheckpointMeta{}, (out / "preprocessed_cache.ckpt").string());
    st.add("preprocessed_cache.ckpt");
  }
  return st;
}

struct MetricsBundle {
  double accuracy = 0.0;
  ConfusionMatrix cm;
  std::vector<std::optional<double>> tpr;
};

/// Inference over a listing, emitting confusion CSVs and a summary skeleton.
inline MetricsBundle evaluate_listing(Network& net, const std::string& image_dir,
                                      const Listing& listing, int batch_size,
                                      int workers) {
  if (listing.image_ids.empty()) raise(Err::EmptyInput, "empty evaluation listing");
  for (const int l : listing.labels)
    if (l < 0 || l >= net.cfg.num_classes)
      raise(Err::ShapeMismatch,
            "listing label " + std::to_string(l) + " outside checkpoint's " +
                std::to_string(net.cfg.num_classes) + " classes");

  const auto images = load_preprocessed(image_dir, listing.image_ids,
                                        net.cfg.input_hw, workers);
  ForwardCtx<float> ctx;
  std::vector<int> preds;
  preds.reserve(images.size());
  for (std::size_t start = 0; start < images.size();
       start += static_cast<std::size_t>(batch_size)) {
    const std::size_t end =
        std::min(images.size(), start + static_cast<std::size_t>(batch_size));
    std::vector<const ImageTensor*> batch;
    for (std::size_t i = start; i < end; ++i) batch.push_back(&images[i]);
    const Tensor input = to_batch<float>(batch);
    const Tensor& probs = forward(net, input, /*training=*/false, ctx);
    for (const int p : predict_labels(probs)) preds.push_back(p);
  }

  MetricsBundle mb;
  std::vector<std::string> names;
  for (const auto& n : kClassNames) names.emplace_back(n);
  if (net.cfg.num_classes != kNumClasses)
    names.resize(static_cast<std::size_t>(net.cfg.num_classes));
  mb.cm = confusion(preds, listing.labels, net.cfg.num_classes, names);
  mb.accuracy = accuracy(preds, listing.labels);
  mb.tpr = per_class_tpr(mb.cm);
  return mb;
}

inline json write_metrics_bundle(const std::string& out_dir, const MetricsBundle& mb,
                                 RunStatus& st) {
  const std::filesystem::path out(out_dir);
  write_file((out / "confusion.csv").string(), confusion_csv(mb.cm));
  st.add("confusion.csv");
  write_file((out / "confusion_normalized.csv").string(),
             confusion_csv(normalize_rows(mb.cm)));
  st.add("confusion_normalized.csv");

  json tpr;
  for (int c = 0; c < mb.cm.k; ++c) {
    const std::string name = c < static_cast<int>(mb.cm.labels.size())
                                 ? mb.cm.labels[static_cast<std::size_t>(c)]
                                 : "class" + std::to_string(c);
    tpr[name] = mb.tpr[static_cast<std::size_t>(c)]
                    ? json(*mb.tpr[static_cast<std::size_t>(c)])
                    : json(nullptr);
  }
  return json{{"n_samples", mb.cm.total()},
              {"accuracy", mb.accuracy},
              {"per_class_tpr", tpr},
              {"confusion_csv", "confusion.csv"},
              {"confusion_normalized_csv", "confusion_normalized.csv"}};
}

/// Builds TrainData from prepare outputs.
inline TrainData load_train_data(const RunConfig& cfg) {
  const std::filesystem::path out(cfg.output_dir);
  const Listing train = read_listing((out / "train_capped_listing.csv").string());
  const Listing val = read_listing((out / "val_listing.csv").string());
  TrainData data;
  data.train_images = load_preprocessed(cfg.image_dir, train.image_ids,
                                        cfg.network.input_hw, cfg.workers);
  data.train_labels = train.labels;
  data.val_images = load_preprocessed(cfg.image_dir, val.image_ids,
                                      cfg.network.input_hw, cfg.workers);
  data.val_labels = val.labels;
  data.augment = cfg.augment;
  data.workers = cfg.workers;
  return data;
}

inline std::vector<double> load_class_weights(const RunConfig& cfg) {
  const auto path =
      (std::filesystem::path(cfg.output_dir) / "class_weights.json").string();
  const json j = json::parse(read_file(path));
  std::vector<double> w(kNumClasses, 1.0);
  for (int c = 0; c < kNumClasses; ++c)
    w[static_cast<std::size_t>(c)] =
        j.at("weights").at(std::string(kClassNames[static_cast<std::size_t>(c)]));
  return w;
}

/// train: fit from scratch (or frozen fine-tune), then evaluate the best
/// checkpoint on the validation listing.
inline RunStatus cmd_train(const RunConfig& cfg) {
  cfg.validate();
  RunStatus st;
  st.command = "train";
  const std::filesystem::path out(cfg.output_dir);
  std::filesystem::create_directories(out);

  TrainData data = load_train_data(cfg);
  const std::vector<double> weights = load_class_weights(cfg);

  Network net = build_network<float>(cfg.network);
  init_parameters(net, cfg.network.seed);
  if (cfg.trainable_last_n > 0) freeze_for_fine_tuning(net, cfg.trainable_last_n);

  TrainConfig tc = cfg.train;
  tc.seed = cfg.derived_train_seed();
  const FitResult fr = fit(net, data, tc, cfg.optimizer, weights,
                           (out / "checkpoints").string(), EpochFn<float>{}, 1,
                           0.0, 1, cfg.trainable_last_n);

  write_file((out / "history.csv").string(), history_csv(fr.history));
  st.add("history.csv");
  st.add("checkpoints/best.ckpt", std::filesystem::exists(fr.best_checkpoint));
  if (fr.early_stopped) st.early_stop_epoch = fr.stopped_epoch;

  LoadedCheckpoint best = load_checkpoint(fr.best_checkpoint);
  const Listing val = read_listing((out / "val_listing.csv").string());
  const MetricsBundle mb = evaluate_listing(best.net, cfg.image_dir, val,
                                            cfg.train.batch_size, cfg.workers);
  json summary = write_metrics_bundle(cfg.output_dir, mb, st);
  summary["best_val_accuracy"] = fr.best_metric;
  summary["best_epoch"] = fr.best_epoch;
  summary["stopped_epoch"] = fr.stopped_epoch;
  summary["early_stopped"] = fr.early_stopped;
  summary["phase_bests"] =
      json::array({{{"phase", 1}, {"best", fr.best_metric}, {"epoch", fr.best_epoch}}});
  write_file((out / "summary.json").string(), summary.dump(2) + "\n");
  st.add("summary.json");

  write_file((out / "graph.txt").string(), graph_listing(net.layers));
  st.add("graph.txt");
  return st;
}

/// resume: rollback to the given checkpoint and train resume_epochs more.
inline RunStatus cmd_resume(const RunConfig& cfg, const std::string& checkpoint) {
  cfg.validate();
  RunStatus st;
  st.command = "resume";
  const std::filesystem::path out(cfg.output_dir);
  std::filesystem::create_directories(out);

  // Phase-1 history, if this directory has one.
  std::vector<EpochRecord> history;
  const std::string history_path = (out / "history.csv").string();
  if (std::filesystem::exists(history_path)) {
    const auto lines = split_lines(read_file(history_path));
    for (std::size_t i = 1; i < lines.size(); ++i) {
      const auto f = csv_split(lines[i]);
      if (f.size() < 5) continue;
      EpochRecord r;
      r.epoch = std::stoi(f[0]);
      r.train_loss = std::stod(f[1]);
      r.train_accuracy = std::stod(f[2]);
      r.val_loss = std::stod(f[3]);
      r.val_accuracy = std::stod(f[4]);
      r.phase = f.size() >= 6 ? std::stoi(f[5]) : 1;
      history.push_back(r);
    }
  }

  const LoadedCheckpoint before = load_checkpoint(checkpoint);

  FitResult fr;
  json phase_bests = json::array();
  phase_bests.push_back({{"phase", 1},
                         {"best", before.meta.best_metric},
                         {"epoch", before.meta.best_epoch}});

  if (cfg.train.resume_epochs > 0) {
    TrainData data = load_train_data(cfg);
    const std::vector<double> weights = load_class_weights(cfg);
    TrainConfig tc = cfg.train;
    tc.seed = cfg.derived_train_seed();
    fr = resume_from_best(checkpoint, data, cfg.train.resume_epochs, cfg.optimizer,
                          weights, tc, (out / "checkpoints").string());
    if (fr.early_stopped) st.early_stop_epoch = fr.stopped_epoch;
  } else {
    // metrics-only: make sure the final checkpoint exists in this run dir
    std::filesystem::create_directories(out / "checkpoints");
    const std::string best_path = (out / "checkpoints" / "best.ckpt").string();
    if (std::filesystem::absolute(best_path) != std::filesystem::absolute(checkpoint))
      std::filesystem::copy_file(checkpoint, best_path,
                                 std::filesystem::copy_options::overwrite_existing);
    fr.best_checkpoint = best_path;
    fr.best_metric = before.meta.best_metric;
    fr.best_epoch = before.meta.best_epoch;
    fr.stopped_epoch = before.meta.epoch;
  }
  phase_bests.push_back(
      {{"phase", 2}, {"best", fr.best_metric}, {"epoch", fr.best_epoch}});

  history.insert(history.end(), fr.history.begin(), fr.history.end());
  write_file(history_path, history_csv(history, /*with_phase=*/true));
  st.add("history.csv");
  st.add("checkpoints/best.ckpt", std::filesystem::exists(fr.best_checkpoint));

  LoadedCheckpoint best = load_checkpoint(fr.best_checkpoint);
  const Listing val = read_listing((out / "val_listing.csv").string());
  const MetricsBundle mb = evaluate_listing(best.net, cfg.image_dir, val,
                                            cfg.train.batch_size, cfg.workers);
  json summary = write_metrics_bundle(cfg.output_dir, mb, st);
  summary["best_val_accuracy"] = fr.best_metric;
  summary["best_epoch"] = fr.best_epoch;
  summary["stopped_epoch"] = fr.stopped_epoch;
  summary["phase_bests"] = phase_bests;
  write_file((out / "summary.json").string(), summary.dump(2) + "\n");
  st.add("summary.json");
  return st;
}

/// evaluate: inference-mode metrics for an arbitrary checkpoint + listing.
inline RunStatus cmd_evaluate(const RunConfig& cfg, const std::string& checkpoint,
                              const std::string& listing_path) {
  RunStatus st;
  st.command = "evaluate";
  std::filesystem::create_directories(cfg.output_dir);
  LoadedCheckpoint loaded = load_checkpoint(checkpoint);
  const Listing listing = read_listing(listing_path);
  const MetricsBundle mb = evaluate_listing(loaded.net, cfg.image_dir, listing,
                                            cfg.train.batch_size, cfg.workers);
  json summary = write_metrics_bundle(cfg.output_dir, mb, st);
  summary["checkpoint"] = checkpoint;
  summary["listing"] = listing_path;
  write_file((std::filesystem::path(cfg.output_dir) / "summary.json").string(),
             summary.dump(2) + "\n");
  st.add("summary.json");
  return st;
}

/// augment-preview: n augmented copies of one image + the drawn parameters.
inline RunStatus cmd_augment_preview(const RunConfig& cfg, const std::string& image_id,
                                     int n) {
  cfg.validate();
  RunStatus st;
  st.command = "augment-preview";
  const std::filesystem::path out(cfg.output_dir);
  std::filesystem::create_directories(out);

  const ImageTensor base =
      resize(load_image(image_path_for(cfg.image_dir, image_id)),
             cfg.network.input_hw, cfg.network.input_hw);

  std::ostringstream csv;
  csv << "index,rotation_deg,shear_deg,translate_x,translate_y,hflip,vflip\n";
  for (int i = 0; i < n; ++i) {
    Rng rng(mix_seed(cfg.augment.seed, 0, static_cast<std::uint64_t>(i)));
    const SampledTransform s =
        sample_transform(cfg.augment, base.width, base.height, rng);
    const ImageTensor warped = apply_transform(base, s.transform, s.hflip, s.vflip);
    std::ostringstream name;
    name << "preview_" << std::setw(3) << std::setfill('0') << i << ".png";
    save_png(warped, (out / name.str()).string());
    st.add(name.str());
    csv << i << ',' << fmt_double(s.rotation_deg) << ',' << fmt_double(s.shear_deg)
        << ',' << fmt_double(s.translate_x) << ',' << fmt_double(s.translate_y)
        << ',' << (s.hflip ? 1 : 0) << ',' << (s.vflip ? 1 : 0) << "\n";
  }
  write_file((out / "preview_transforms.csv").string(), csv.str());
  st.add("preview_transforms.csv");
  return st;
}

}  // namespace dermnet
