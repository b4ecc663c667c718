#include "intensivenet/trainer.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "intensivenet/ctc.hpp"
#include "intensivenet/layers.hpp"
#include "intensivenet/rng.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint blobs are little-endian float32");

namespace inet {

using nlohmann::json;
using nlohmann::ordered_json;

double lr_at(const LrSchedule& schedule, int epoch) {
  if (epoch < 0) throw ContractError("lr_at: negative epoch");
  switch (schedule.kind) {
    case SchedKind::Text:
      return epoch == 0 ? 0.001 : 0.005 * std::pow(0.4, epoch);
    case SchedKind::Mnist:
      if (epoch < 50) return 0.001;
      if (epoch <= 100) return 0.0001;
      return 0.00001;
    case SchedKind::Constant:
      return schedule.constant;
  }
  throw ContractError("lr_at: unknown schedule kind");
}

void validate(const TrainConfig& cfg) {
  if (cfg.batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (cfg.max_epochs < 1) throw ConfigError("max_epochs must be >= 1");
  if (cfg.weight_decay < 0) throw ConfigError("weight_decay must be >= 0");
  if (cfg.momentum < 0 || cfg.momentum >= 1) throw ConfigError("momentum must be in [0,1)");
  if (cfg.micro_batch < 1) throw ConfigError("micro_batch must be >= 1");
  if (cfg.schedule.kind == SchedKind::Constant && cfg.schedule.constant <= 0) {
    throw ConfigError("constant learning rate must be > 0");
  }
}

void sgd_step(ParamStore& params, const GradientMap& grads, double lr, double weight_decay,
              double momentum, GradientMap* velocity) {
  for (auto& [path, entry] : params) {
    if (!entry.learnable) continue;
    auto it = grads.find(path);
    if (it == grads.end()) throw ContractError("sgd_step: missing gradient for " + path);
    const Tensor& g = it->second;
    if (g.shape() != entry.value.shape()) {
      throw ContractError("sgd_step: gradient shape mismatch for " + path);
    }
    const double wd = entry.decay ? weight_decay : 0.0;
    double* v = entry.value.data();
    const double* gd = g.data();
    const std::int64_t count = entry.value.size();
    if (momentum > 0.0 && velocity != nullptr) {
      auto [vit, inserted] = velocity->try_emplace(path, Tensor(entry.value.shape(), 0.0));
      double* m = vit->second.data();
      for (std::int64_t i = 0; i < count; ++i) {
        m[i] = momentum * m[i] + gd[i] + wd * v[i];
        v[i] -= lr * m[i];
      }
    } else {
      for (std::int64_t i = 0; i < count; ++i) {
        v[i] -= lr * (gd[i] + wd * v[i]);
      }
    }
  }
}

std::string metrics_json_line(const EpochMetrics& m) {
  ordered_json j;
  j["epoch"] = m.epoch;
  j["lr"] = m.lr;
  j["train_loss"] = m.train_loss;
  j["train_acc"] = m.train_acc;
  j["test_loss"] = m.test_loss;
  j["test_acc"] = m.test_acc;
  return j.dump();
}

int early_stopping_index(const std::vector<double>& test_losses, double min_delta,
                         int patience) {
  double best = std::numeric_limits<double>::infinity();
  int stale = 0;
  for (int i = 0; i < int(test_losses.size()); ++i) {
    if (test_losses[i] < best - min_delta) {
      best = test_losses[i];
      stale = 0;
    } else if (++stale >= patience) {
      return i;
    }
  }
  return -1;
}

namespace {

/// Stacks samples [first, last) of `order` into one (m,h,w,1) batch.
Tensor stack_images(const std::vector<LabeledImage>& samples, const std::vector<int>& order,
                    int first, int last) {
  const Shape& s0 = samples[order[first]].image.shape();
  Tensor batch = Tensor::uninit({last - first, s0.h, s0.w, s0.c});
  const std::int64_t stride = s0.count();
  for (int i = first; i < last; ++i) {
    const Tensor& img = samples[order[i]].image;
    if (img.shape().h != s0.h || img.shape().w != s0.w || img.shape().c != s0.c) {
      throw ContractError("stack_images: mixed image shapes in one batch");
    }
    std::copy(img.data(), img.data() + stride, batch.data() + std::int64_t(i - first) * stride);
  }
  return batch;
}

Var batch_loss(Var logits, const std::vector<LabeledImage>& samples,
               const std::vector<int>& order, int first, int last, Task task) {
  if (task == Task::Classify) {
    std::vector<int> labels;
    labels.reserve(last - first);
    for (int i = first; i < last; ++i) labels.push_back(samples[order[i]].class_label);
    return ag::softmax_cross_entropy(logits, labels);
  }
  std::vector<LabelSequence> targets;
  targets.reserve(last - first);
  for (int i = first; i < last; ++i) targets.push_back(samples[order[i]].seq_label);
  return ag::ctc_loss_mean(logits, targets);
}

/// Correct-prediction count from raw logits (argmax ties to lowest index).
int count_correct(const Tensor& logits, const std::vector<LabeledImage>& samples,
                  const std::vector<int>& order, int first, int last, Task task) {
  const Shape& s = logits.shape();
  int correct = 0;
  for (int i = first; i < last; ++i) {
    const int b = i - first;
    if (task == Task::Classify) {
      int arg = 0;
      for (int k = 1; k < s.c; ++k) {
        if (logits.at(b, 0, 0, k) > logits.at(b, 0, 0, arg)) arg = k;
      }
      correct += (arg == samples[order[i]].class_label);
    } else {
      Matrix probs(s.w, s.c);
      for (int t = 0; t < s.w; ++t) {
        double mx = logits.at(b, 0, t, 0);
        for (int k = 1; k < s.c; ++k) mx = std::max(mx, logits.at(b, 0, t, k));
        double z = 0.0;
        for (int k = 0; k < s.c; ++k) z += std::exp(logits.at(b, 0, t, k) - mx);
        for (int k = 0; k < s.c; ++k) {
          probs.at(t, k) = std::exp(logits.at(b, 0, t, k) - mx) / z;
        }
      }
      correct += (greedy_decode(probs) == samples[order[i]].seq_label);
    }
  }
  return correct;
}

/// Per-sample eval losses summed over [first, last).
double sum_eval_loss(const Tensor& logits, const std::vector<LabeledImage>& samples,
                     const std::vector<int>& order, int first, int last, Task task) {
  const Shape& s = logits.shape();
  double total = 0.0;
  for (int i = first; i < last; ++i) {
    const int b = i - first;
    if (task == Task::Classify) {
      double mx = logits.at(b, 0, 0, 0);
      for (int k = 1; k < s.c; ++k) mx = std::max(mx, logits.at(b, 0, 0, k));
      double z = 0.0;
      for (int k = 0; k < s.c; ++k) z += std::exp(logits.at(b, 0, 0, k) - mx);
      const int y = samples[order[i]].class_label;
      total += -(logits.at(b, 0, 0, y) - mx - std::log(z));
    } else {
      Matrix probs(s.w, s.c);
      for (int t = 0; t < s.w; ++t) {
        double mx = logits.at(b, 0, t, 0);
        for (int k = 1; k < s.c; ++k) mx = std::max(mx, logits.at(b, 0, t, k));
        double z = 0.0;
        for (int k = 0; k < s.c; ++k) z += std::exp(logits.at(b, 0, t, k) - mx);
        for (int k = 0; k < s.c; ++k) {
          probs.at(t, k) = std::exp(logits.at(b, 0, t, k) - mx) / z;
        }
      }
      total += ctc_loss(probs, samples[order[i]].seq_label).loss;
    }
  }
  return total;
}

void accumulate_scaled(GradientMap& acc, const GradientMap& part, double scale) {
  for (const auto& [path, g] : part) {
    auto [it, inserted] = acc.try_emplace(path, Tensor(g.shape(), 0.0));
    double* a = it->second.data();
    const double* p = g.data();
    for (std::int64_t i = 0; i < g.size(); ++i) a[i] += scale * p[i];
  }
}

}  // namespace

EvalResult evaluate(ParamStore& params, const ModelConfig& cfg,
                    const std::vector<LabeledImage>& samples, int chunk) {
  if (samples.empty()) return {};
  if (chunk < 1) throw ConfigError("evaluate: chunk must be >= 1");
  std::vector<int> order(samples.size());
  std::iota(order.begin(), order.end(), 0);
  double loss_sum = 0.0;
  int correct = 0;
  for (int first = 0; first < int(samples.size()); first += chunk) {
    const int last = std::min<int>(first + chunk, int(samples.size()));
    Tensor logits = model_logits(stack_images(samples, order, first, last), params, cfg);
    loss_sum += sum_eval_loss(logits, samples, order, first, last, cfg.task);
    correct += count_correct(logits, samples, order, first, last, cfg.task);
  }
  return {loss_sum / double(samples.size()), double(correct) / double(samples.size())};
}

MetricLog train_model(ParamStore& params, const ModelConfig& model_cfg,
                      const TrainConfig& train_cfg, const Dataset& data,
                      const std::string& out_dir, std::ostream* progress) {
  validate(model_cfg);
  validate(train_cfg);
  if (data.train.empty()) throw ConfigError("train_model: empty training set");
  if (params.size() == 0) init_model(params, model_cfg);

  namespace fs = std::filesystem;
  std::string metrics_path;
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    metrics_path = (fs::path(out_dir) / "metrics.jsonl").string();
    std::ofstream truncate(metrics_path, std::ios::trunc);
    if (!truncate) throw IoError("cannot write " + metrics_path);
  }

  const int n_train = int(data.train.size());
  GradientMap velocity;
  MetricLog log;
  std::vector<double> test_losses;

  for (int epoch = 0; epoch < train_cfg.max_epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const double lr = lr_at(train_cfg.schedule, epoch);

    std::vector<int> order(n_train);
    std::iota(order.begin(), order.end(), 0);
    {
      std::mt19937_64 rng = rng_for(train_cfg.seed, "shuffle", std::uint64_t(epoch));
      std::shuffle(order.begin(), order.end(), rng);
    }

    double loss_sum = 0.0;
    int correct = 0;
    int batch_index = 0;
    for (int first = 0; first < n_train; first += train_cfg.batch_size, ++batch_index) {
      const int last = std::min(first + train_cfg.batch_size, n_train);
      const int batch_n = last - first;
      std::mt19937_64 dropout_rng = rng_for(
          train_cfg.seed, "dropout",
          (std::uint64_t(epoch) << 32) | std::uint64_t(batch_index));
      Mode mode{true, &dropout_rng};

      GradientMap batch_grads;
      for (int mf = first; mf < last; mf += train_cfg.micro_batch) {
        const int ml = std::min(mf + train_cfg.micro_batch, last);
        const int m = ml - mf;
        Tape tape;
        Var x = tape.leaf(stack_images(data.train, order, mf, ml));
        Var logits = model_forward(x, params, model_cfg, mode);
        Tensor logit_values = logits.value();  // copy; backward frees the node
        Var loss = batch_loss(logits, data.train, order, mf, ml, model_cfg.task);
        const double loss_value = loss.value()[0];
        if (!std::isfinite(loss_value)) {
          throw DivergenceError("non-finite loss at epoch " + std::to_string(epoch) +
                                ", batch " + std::to_string(batch_index));
        }
        loss_sum += loss_value * m;
        correct += count_correct(logit_values, data.train, order, mf, ml, model_cfg.task);
        accumulate_scaled(batch_grads, tape.backward(loss, params),
                          double(m) / double(batch_n));
      }
      sgd_step(params, batch_grads, lr, train_cfg.weight_decay, train_cfg.momentum,
               &velocity);
    }

    EpochMetrics m;
    m.epoch = epoch;
    m.lr = lr;
    m.train_loss = loss_sum / double(n_train);
    m.train_acc = double(correct) / double(n_train);
    const EvalResult ev = evaluate(params, model_cfg,
                                   data.test.empty() ? data.train : data.test);
    m.test_loss = ev.loss;
    m.test_acc = ev.accuracy;
    m.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    log.push_back(m);
    test_losses.push_back(m.test_loss);

    if (!out_dir.empty()) {
      std::ofstream out(metrics_path, std::ios::app);
      out << metrics_json_line(m) << "\n";
      if (!out) throw IoError("cannot append to " + metrics_path);

      char name[32];
      std::snprintf(name, sizeof(name), "ckpt-epoch-%04d", epoch);
      json meta;
      meta["epoch"] = epoch;
      meta["model"] = model_config_to_json(model_cfg);
      save_checkpoint(params, (fs::path(out_dir) / name).string(), meta);
    }
    if (progress != nullptr) {
      *progress << "epoch " << epoch << " lr " << lr << " train_loss " << m.train_loss
                << " train_acc " << m.train_acc << " test_loss " << m.test_loss
                << " test_acc " << m.test_acc << " wall " << m.wall_seconds << "s\n";
    }
    if (train_cfg.early_stop && early_stopping_index(test_losses, 1e-4, 2) == epoch) {
      break;
    }
  }
  return log;
}

// --- Checkpoints -------------------------------------------------------------

json model_config_to_json(const ModelConfig& cfg) {
  json j;
  j["task"] = cfg.task == Task::Classify ? "classify" : "sequence";
  j["input_height"] = cfg.input_shape.h;
  j["input_width"] = cfg.input_shape.w;
  j["input_channels"] = cfg.input_shape.c;
  j["class_count"] = cfg.class_count;
  j["alphabet_size"] = cfg.alphabet_size;
  j["growth_rate"] = cfg.block.growth_rate;
  j["layer_count"] = cfg.block.layer_count;
  j["compression"] = cfg.block.compression;
  j["conv_kind"] = cfg.block.conv_kind == ConvKind::Separable ? "separable" : "standard";
  j["first_conv_channels"] = cfg.first_conv_channels;
  j["first_conv_stride"] = cfg.first_conv_stride;
  j["dropout_rate"] = cfg.dropout_rate;
  j["seed"] = cfg.seed;
  j["intensive_blocks"] = cfg.intensive_blocks;
  j["init_damping"] = cfg.init_damping;
  return j;
}

ModelConfig model_config_from_json(const json& j) {
  ModelConfig cfg;
  try {
    const std::string task = j.at("task").get<std::string>();
    if (task == "classify") {
      cfg.task = Task::Classify;
    } else if (task == "sequence") {
      cfg.task = Task::Sequence;
    } else {
      throw ConfigError("unknown task: " + task);
    }
    cfg.input_shape = {1, j.at("input_height").get<int>(), j.at("input_width").get<int>(),
                       j.at("input_channels").get<int>()};
    cfg.class_count = j.at("class_count").get<int>();
    cfg.alphabet_size = j.at("alphabet_size").get<int>();
    cfg.block.growth_rate = j.at("growth_rate").get<int>();
    cfg.block.layer_count = j.at("layer_count").get<int>();
    cfg.block.compression = j.at("compression").get<double>();
    const std::string kind = j.at("conv_kind").get<std::string>();
    if (kind == "separable") {
      cfg.block.conv_kind = ConvKind::Separable;
    } else if (kind == "standard") {
      cfg.block.conv_kind = ConvKind::Standard;
    } else {
      throw ConfigError("unknown conv_kind: " + kind);
    }
    cfg.first_conv_channels = j.at("first_conv_channels").get<int>();
    cfg.first_conv_stride = j.at("first_conv_stride").get<int>();
    cfg.dropout_rate = j.at("dropout_rate").get<double>();
    cfg.seed = j.at("seed").get<std::uint64_t>();
    cfg.intensive_blocks = j.at("intensive_blocks").get<int>();
    cfg.init_damping = j.value("init_damping", cfg.init_damping);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad model config: ") + e.what());
  }
  return cfg;
}

namespace {
constexpr const char* kCheckpointFormat = "intensivenet-checkpoint-v1";

json shape_to_json(const Shape& s) { return json::array({s.n, s.h, s.w, s.c}); }

Shape shape_from_json(const json& j) {
  if (!j.is_array() || j.size() != 4) throw ManifestError("entry shape must be a 4-array");
  return {j[0].get<int>(), j[1].get<int>(), j[2].get<int>(), j[3].get<int>()};
}
}  // namespace

void save_checkpoint(const ParamStore& params, const std::string& prefix,
                     const json& metadata) {
  const std::string blob_path = prefix + ".bin";
  const std::string manifest_path = prefix + ".json";

  std::ofstream blob(blob_path, std::ios::binary | std::ios::trunc);
  if (!blob) throw IoError("cannot write " + blob_path);

  json entries = json::array();
  std::int64_t offset = 0;  // element offset into the float32 blob
  std::vector<float> buffer;
  for (const auto& [path, entry] : params) {
    json e;
    e["path"] = path;
    e["shape"] = shape_to_json(entry.value.shape());
    e["dtype"] = "float32";
    e["offset"] = offset;
    e["learnable"] = entry.learnable;
    e["decay"] = entry.decay;
    entries.push_back(std::move(e));

    buffer.resize(entry.value.size());
    for (std::int64_t i = 0; i < entry.value.size(); ++i) {
      buffer[i] = float(entry.value[i]);
    }
    blob.write(reinterpret_cast<const char*>(buffer.data()),
               std::streamsize(buffer.size() * sizeof(float)));
    offset += entry.value.size();
  }
  if (!blob) throw IoError("failed writing " + blob_path);
  blob.close();

  json manifest;
  manifest["format"] = kCheckpointFormat;
  manifest["blob"] = std::filesystem::path(blob_path).filename().string();
  manifest["entries"] = std::move(entries);
  manifest["metadata"] = metadata;

  std::ofstream out(manifest_path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + manifest_path);
  out << manifest.dump(2) << "\n";
}

namespace {

struct RawCheckpoint {
  json manifest;
  std::vector<float> blob;
};

RawCheckpoint read_checkpoint_files(const std::string& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw IoError("cannot open " + manifest_path);
  json manifest;
  try {
    in >> manifest;
  } catch (const json::exception& e) {
    throw ManifestError(std::string("invalid manifest JSON: ") + e.what());
  }
  if (!manifest.is_object() || manifest.value("format", "") != kCheckpointFormat) {
    throw ManifestError("unrecognized checkpoint format in " + manifest_path);
  }
  if (!manifest.contains("entries") || !manifest["entries"].is_array()) {
    throw ManifestError("manifest missing entries array");
  }
  const std::string blob_name = manifest.value("blob", "");
  if (blob_name.empty()) throw ManifestError("manifest missing blob name");
  const auto blob_path = std::filesystem::path(manifest_path).parent_path() / blob_name;

  std::ifstream blob(blob_path, std::ios::binary | std::ios::ate);
  if (!blob) throw IoError("cannot open " + blob_path.string());
  const std::streamsize bytes = blob.tellg();
  if (bytes % sizeof(float) != 0) {
    throw TruncatedBlobError("blob size is not a multiple of 4 bytes");
  }
  std::vector<float> values(std::size_t(bytes) / sizeof(float));
  blob.seekg(0);
  blob.read(reinterpret_cast<char*>(values.data()), bytes);
  if (!blob) throw IoError("failed reading " + blob_path.string());
  return {std::move(manifest), std::move(values)};
}

Tensor entry_tensor(const json& e, const std::vector<float>& blob) {
  Shape shape = shape_from_json(e.at("shape"));
  const std::int64_t offset = e.at("offset").get<std::int64_t>();
  const std::int64_t count = shape.count();
  if (e.value("dtype", "") != "float32") {
    throw ManifestError("unsupported dtype for " + e.value("path", "?"));
  }
  if (offset < 0 || offset + count > std::int64_t(blob.size())) {
    throw TruncatedBlobError("blob too small for entry " + e.value("path", "?"));
  }
  Tensor t(shape);
  for (std::int64_t i = 0; i < count; ++i) t[i] = double(blob[offset + i]);
  return t;
}

}  // namespace

LoadedCheckpoint load_checkpoint(const std::string& manifest_path) {
  RawCheckpoint raw = read_checkpoint_files(manifest_path);
  LoadedCheckpoint result;
  try {
    for (const json& e : raw.manifest["entries"]) {
      result.params.emplace(e.at("path").get<std::string>(), entry_tensor(e, raw.blob),
                            e.value("learnable", true), e.value("decay", true));
    }
  } catch (const json::exception& ex) {
    throw ManifestError(std::string("malformed manifest entry: ") + ex.what());
  }
  result.metadata = raw.manifest.value("metadata", json::object());
  return result;
}

void load_checkpoint_into(ParamStore& params, const std::string& manifest_path) {
  RawCheckpoint raw = read_checkpoint_files(manifest_path);
  std::size_t restored = 0;
  try {
    for (const json& e : raw.manifest["entries"]) {
      const std::string path = e.at("path").get<std::string>();
      if (!params.contains(path)) {
        throw ShapeMismatchError("checkpoint parameter not in model: " + path);
      }
      ParamEntry& entry = params.at(path);
      Tensor t = entry_tensor(e, raw.blob);
      if (t.shape() != entry.value.shape()) {
        throw ShapeMismatchError("checkpoint shape " + t.shape().str() + " vs model " +
                                 entry.value.shape().str() + " for " + path);
      }
      entry.value = std::move(t);
      ++restored;
    }
  } catch (const json::exception& ex) {
    throw ManifestError(std::string("malformed manifest entry: ") + ex.what());
  }
  if (restored != params.size()) {
    throw ShapeMismatchError("checkpoint restores " + std::to_string(restored) + " of " +
                             std::to_string(params.size()) + " model parameters");
  }
}

}  // namespace inet
