#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "intensivenet/data.hpp"
#include "intensivenet/model.hpp"

namespace inet {

enum class SchedKind { Text, Mnist, Constant };

/// text: 0.001 at epoch 0, then 0.005 * 0.4^epoch.
/// mnist: 0.001 for [0,50), 0.0001 for [50,100], 0.00001 beyond.
struct LrSchedule {
  SchedKind kind = SchedKind::Mnist;
  double constant = 0.001;
};

double lr_at(const LrSchedule& schedule, int epoch);

struct TrainConfig {
  int batch_size = 128;
  int max_epochs = 5;
  LrSchedule schedule;
  double weight_decay = 1e-4;
  double momentum = 0.0;  // plain SGD by default
  bool early_stop = false;
  std::uint64_t seed = 0;
  /// Forward/backward slice size within one SGD batch (memory bound);
  /// gradients are summed deterministically across slices.
  int micro_batch = 16;
};

void validate(const TrainConfig& cfg);

/// theta -= lr * (g + weight_decay * theta) for decaying entries
/// (kernels, biases); BN scale/shift update without decay; running stats
/// are untouched. Every learnable path must have a gradient.
void sgd_step(ParamStore& params, const GradientMap& grads, double lr, double weight_decay,
              double momentum = 0.0, GradientMap* velocity = nullptr);

struct EpochMetrics {
  int epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double test_loss = 0.0;
  double train_acc = 0.0;
  double test_acc = 0.0;
  double wall_seconds = 0.0;  // progress-log only; excluded from metrics.jsonl
};
using MetricLog = std::vector<EpochMetrics>;

/// Deterministic JSON line for metrics.jsonl (no wall-clock fields).
std::string metrics_json_line(const EpochMetrics& m);

/// Index of the epoch after which early stopping fires (test loss failed
/// to improve by >= min_delta for `patience` consecutive epochs), or -1.
int early_stopping_index(const std::vector<double>& test_losses, double min_delta = 1e-4,
                         int patience = 2);

struct EvalResult {
  double loss = 0.0;
  double accuracy = 0.0;  // top-1 or exact-sequence-match
};

/// Eval-mode loss/accuracy over a dataset slice.
EvalResult evaluate(ParamStore& params, const ModelConfig& cfg,
                    const std::vector<LabeledImage>& samples, int chunk = 64);

struct Dataset {
  std::vector<LabeledImage> train;
  std::vector<LabeledImage> test;
};

/// Full training loop: seeded shuffle, SGD with the configured schedule,
/// per-epoch test evaluation, metrics.jsonl + per-epoch checkpoints under
/// out_dir (skipped when out_dir is empty), optional early stopping.
/// Throws DivergenceError on a non-finite loss, leaving the last epoch's
/// checkpoint in place.
MetricLog train_model(ParamStore& params, const ModelConfig& model_cfg,
                      const TrainConfig& train_cfg, const Dataset& data,
                      const std::string& out_dir = "", std::ostream* progress = nullptr);

// --- Checkpoint format -----------------------------------------------------
// prefix + ".json": UTF-8 manifest {format, blob, entries: [{path, shape,
// dtype, offset, learnable, decay}], metadata}; entry order is
// lexicographic by path, but offsets are authoritative for the reader.
// prefix + ".bin": concatenated little-endian float32 values.

void save_checkpoint(const ParamStore& params, const std::string& prefix,
                     const nlohmann::json& metadata);

/// ModelConfig <-> JSON, used for checkpoint metadata and run configs.
nlohmann::json model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);

struct LoadedCheckpoint {
  ParamStore params;
  nlohmann::json metadata;
};
LoadedCheckpoint load_checkpoint(const std::string& manifest_path);

/// Loads values into an existing store; shapes must match.
void load_checkpoint_into(ParamStore& params, const std::string& manifest_path);

}  // namespace inet
