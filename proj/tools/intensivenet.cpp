// Command-line front end: train / eval / predict / gradcheck / ctc-oracle /
// plot. Machine-readable output is JSON (one object or JSON lines) on
// stdout; human progress goes to stderr.
//
// Exit codes: 0 success, 1 check failure, 2 config/usage, 3 data/IO,
// 4 checkpoint incompatibility.

#include <malloc.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "intensivenet/blocks.hpp"
#include "intensivenet/ctc.hpp"
#include "intensivenet/data.hpp"
#include "intensivenet/errors.hpp"
#include "intensivenet/layers.hpp"
#include "intensivenet/model.hpp"
#include "intensivenet/rng.hpp"
#include "intensivenet/trainer.hpp"

using nlohmann::json;
using nlohmann::ordered_json;
namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitCheckFailed = 1;
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitCheckpoint = 4;

std::string data_dir() {
  const char* env = std::getenv("INTENSIVENET_DATA_DIR");
  return env != nullptr && *env != '\0' ? std::string(env) : std::string("data");
}

void reject_unknown_keys(const json& j, const std::vector<std::string>& allowed,
                         const std::string& where) {
  if (!j.is_object()) throw inet::ConfigError(where + " must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      throw inet::ConfigError("unknown key \"" + where + "." + key + "\"");
    }
  }
}

// --- RunConfig ---------------------------------------------------------------

struct DataConfig {
  std::string kind = "mnist";  // mnist | lines
  std::string train_images, train_labels, test_images, test_labels;
  int train_limit = 0;  // 0 = all
  int test_limit = 0;
  // lines generation (glyphs drawn from train_images/train_labels)
  int line_count = 2000;
  inet::LineSpec line;
  double split_ratio = 0.9;
};

struct RunConfig {
  inet::ModelConfig model;
  inet::TrainConfig train;
  DataConfig data;
};

inet::TrainConfig train_config_from_json(const json& j) {
  reject_unknown_keys(j, {"batch_size", "max_epochs", "schedule", "learning_rate",
                          "weight_decay", "momentum", "early_stop", "seed", "micro_batch"},
                      "train");
  inet::TrainConfig cfg;
  cfg.batch_size = j.value("batch_size", cfg.batch_size);
  cfg.max_epochs = j.value("max_epochs", cfg.max_epochs);
  const std::string sched = j.value("schedule", std::string("mnist"));
  if (sched == "text") {
    cfg.schedule.kind = inet::SchedKind::Text;
  } else if (sched == "mnist") {
    cfg.schedule.kind = inet::SchedKind::Mnist;
  } else if (sched == "constant") {
    cfg.schedule.kind = inet::SchedKind::Constant;
    cfg.schedule.constant = j.value("learning_rate", 0.001);
  } else {
    throw inet::ConfigError("train.schedule must be text|mnist|constant");
  }
  cfg.weight_decay = j.value("weight_decay", cfg.weight_decay);
  cfg.momentum = j.value("momentum", cfg.momentum);
  cfg.early_stop = j.value("early_stop", cfg.early_stop);
  cfg.seed = j.value("seed", cfg.seed);
  cfg.micro_batch = j.value("micro_batch", cfg.micro_batch);
  return cfg;
}

json train_config_to_json(const inet::TrainConfig& cfg) {
  json j;
  j["batch_size"] = cfg.batch_size;
  j["max_epochs"] = cfg.max_epochs;
  switch (cfg.schedule.kind) {
    case inet::SchedKind::Text: j["schedule"] = "text"; break;
    case inet::SchedKind::Mnist: j["schedule"] = "mnist"; break;
    case inet::SchedKind::Constant:
      j["schedule"] = "constant";
      j["learning_rate"] = cfg.schedule.constant;
      break;
  }
  j["weight_decay"] = cfg.weight_decay;
  j["momentum"] = cfg.momentum;
  j["early_stop"] = cfg.early_stop;
  j["seed"] = cfg.seed;
  j["micro_batch"] = cfg.micro_batch;
  return j;
}

DataConfig data_config_from_json(const json& j) {
  reject_unknown_keys(j, {"kind", "train_images", "train_labels", "test_images",
                          "test_labels", "train_limit", "test_limit", "line_count",
                          "kmin", "kmax", "height", "width", "jitter", "line_seed",
                          "split_ratio"},
                      "data");
  DataConfig cfg;
  cfg.kind = j.value("kind", cfg.kind);
  if (cfg.kind != "mnist" && cfg.kind != "lines") {
    throw inet::ConfigError("data.kind must be mnist|lines");
  }
  const fs::path base = data_dir();
  cfg.train_images = j.value("train_images", (base / "mnist/train-images.idx3").string());
  cfg.train_labels = j.value("train_labels", (base / "mnist/train-labels.idx1").string());
  cfg.test_images = j.value("test_images", (base / "mnist/test-images.idx3").string());
  cfg.test_labels = j.value("test_labels", (base / "mnist/test-labels.idx1").string());
  cfg.train_limit = j.value("train_limit", cfg.train_limit);
  cfg.test_limit = j.value("test_limit", cfg.test_limit);
  cfg.line_count = j.value("line_count", cfg.line_count);
  cfg.line.kmin = j.value("kmin", cfg.line.kmin);
  cfg.line.kmax = j.value("kmax", cfg.line.kmax);
  cfg.line.height = j.value("height", cfg.line.height);
  cfg.line.width = j.value("width", cfg.line.width);
  cfg.line.jitter = j.value("jitter", cfg.line.jitter);
  cfg.line.seed = j.value("line_seed", std::uint64_t(0));
  cfg.split_ratio = j.value("split_ratio", cfg.split_ratio);
  return cfg;
}

json data_config_to_json(const DataConfig& cfg) {
  json j;
  j["kind"] = cfg.kind;
  j["train_images"] = cfg.train_images;
  j["train_labels"] = cfg.train_labels;
  j["test_images"] = cfg.test_images;
  j["test_labels"] = cfg.test_labels;
  j["train_limit"] = cfg.train_limit;
  j["test_limit"] = cfg.test_limit;
  if (cfg.kind == "lines") {
    j["line_count"] = cfg.line_count;
    j["kmin"] = cfg.line.kmin;
    j["kmax"] = cfg.line.kmax;
    j["height"] = cfg.line.height;
    j["width"] = cfg.line.width;
    j["jitter"] = cfg.line.jitter;
    j["line_seed"] = cfg.line.seed;
    j["split_ratio"] = cfg.split_ratio;
  }
  return j;
}

RunConfig run_config_from_json(const json& j) {
  reject_unknown_keys(j, {"model", "train", "data"}, "(root)");
  RunConfig cfg;
  if (j.contains("model")) {
    reject_unknown_keys(j["model"],
                        {"task", "input_height", "input_width", "input_channels",
                         "class_count", "alphabet_size", "growth_rate", "layer_count",
                         "compression", "conv_kind", "first_conv_channels",
                         "first_conv_stride", "dropout_rate", "seed", "intensive_blocks",
                         "init_damping"},
                        "model");
    json m = inet::model_config_to_json(inet::ModelConfig{});  // defaults
    m.update(j["model"]);
    cfg.model = inet::model_config_from_json(m);
  }
  if (j.contains("train")) cfg.train = train_config_from_json(j["train"]);
  if (j.contains("data")) cfg.data = data_config_from_json(j["data"]);
  inet::validate(cfg.model);
  inet::validate(cfg.train);
  return cfg;
}

/// Embedded one-command presets for the two desk-scale runs.
json preset_json(const std::string& name) {
  if (name == "mnist") {
    return json{
        {"model",
         {{"task", "classify"}, {"input_height", 28}, {"input_width", 28},
          {"dropout_rate", 0.0}, {"init_damping", 0.5}, {"seed", 7}}},
        {"train",
         {{"batch_size", 128}, {"max_epochs", 5}, {"schedule", "mnist"},
          {"weight_decay", 0.0001}, {"momentum", 0.98}, {"seed", 7}}},
        {"data", {{"kind", "mnist"}, {"train_limit", 5000}}}};
  }
  if (name == "digitlines") {
    return json{
        {"model",
         {{"task", "sequence"}, {"input_height", 32}, {"input_width", 200},
          {"first_conv_stride", 2}, {"dropout_rate", 0.2}, {"init_damping", 0.5},
          {"seed", 11}}},
        {"train",
         {{"batch_size", 32}, {"max_epochs", 10}, {"schedule", "text"},
          {"weight_decay", 0.0001}, {"momentum", 0.98}, {"micro_batch", 8},
          {"seed", 11}}},
        {"data",
         {{"kind", "lines"}, {"line_count", 2000}, {"kmin", 3}, {"kmax", 6},
          {"height", 32}, {"width", 200}, {"line_seed", 11}, {"split_ratio", 0.9}}}};
  }
  throw inet::ConfigError("unknown preset \"" + name + "\" (available: mnist, digitlines)");
}

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw inet::IoError("cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw inet::ConfigError("invalid JSON in " + path + ": " + e.what());
  }
}

RunConfig resolve_run_config(const std::string& config_path, const std::string& preset) {
  if (config_path.empty() && preset.empty()) {
    throw inet::ConfigError("give --config PATH or --preset NAME");
  }
  json j = preset.empty() ? json::object() : preset_json(preset);
  if (!config_path.empty()) {
    json file = read_json_file(config_path);
    reject_unknown_keys(file, {"model", "train", "data"}, "(root)");
    for (const char* section : {"model", "train", "data"}) {
      if (file.contains(section)) {
        if (!j.contains(section)) j[section] = json::object();
        j[section].update(file[section]);
      }
    }
  }
  return run_config_from_json(j);
}

// --- Dataset assembly --------------------------------------------------------

std::vector<inet::LabeledImage> take(std::vector<inet::LabeledImage> v, int limit) {
  if (limit > 0 && int(v.size()) > limit) v.resize(limit);
  return v;
}

inet::Dataset build_dataset(const RunConfig& cfg) {
  inet::Dataset d;
  auto train = inet::load_mnist_idx(cfg.data.train_images, cfg.data.train_labels);
  if (cfg.data.kind == "mnist") {
    d.train = take(std::move(train), cfg.data.train_limit);
    d.test = take(inet::load_mnist_idx(cfg.data.test_images, cfg.data.test_labels),
                  cfg.data.test_limit);
  } else {
    inet::LineSpec spec = cfg.data.line;
    spec.frame_budget = inet::trace_geometry(cfg.model).after_blocks.w;
    auto lines = inet::generate_lines(spec, train, cfg.data.line_count);
    std::tie(d.train, d.test) = inet::split(std::move(lines), cfg.data.split_ratio,
                                            cfg.data.line.seed);
    d.train = take(std::move(d.train), cfg.data.train_limit);
    d.test = take(std::move(d.test), cfg.data.test_limit);
  }
  return d;
}

// --- Subcommands -------------------------------------------------------------

int cmd_train(const std::string& config_path, const std::string& preset,
              const std::string& out_dir) {
  RunConfig cfg = resolve_run_config(config_path, preset);
  inet::Dataset data;
  try {
    data = build_dataset(cfg);
  } catch (const inet::ConfigError&) {
    throw;
  } catch (const inet::Error& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  }
  std::cerr << "training on " << data.train.size() << " samples, testing on "
            << data.test.size() << "\n";

  inet::ParamStore params;
  inet::MetricLog log;
  try {
    log = inet::train_model(params, cfg.model, cfg.train, data, out_dir, &std::cerr);
  } catch (const inet::DivergenceError& e) {
    std::cerr << "diverged: " << e.what() << "\n";
    return kExitCheckFailed;
  }

  ordered_json summary;
  summary["epochs_completed"] = log.size();
  summary["parameters"] = inet::count_parameters(params);
  if (!log.empty()) {
    const inet::EpochMetrics& last = log.back();
    summary["final"] = json::parse(inet::metrics_json_line(last));
  }
  summary["out_dir"] = out_dir;
  std::cout << summary.dump() << "\n";
  return kExitOk;
}

/// Model store initialized from the config, weights from the checkpoint.
inet::ParamStore restore_for_config(const inet::ModelConfig& model,
                                    const std::string& checkpoint) {
  inet::ParamStore params;
  inet::init_model(params, model);
  inet::load_checkpoint_into(params, checkpoint);
  return params;
}

int cmd_eval(const std::string& config_path, const std::string& preset,
             const std::string& checkpoint) {
  RunConfig cfg = resolve_run_config(config_path, preset);
  inet::Dataset data;
  try {
    data = build_dataset(cfg);
  } catch (const inet::ConfigError&) {
    throw;
  } catch (const inet::Error& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  }
  inet::ParamStore params = restore_for_config(cfg.model, checkpoint);
  const auto& samples = data.test.empty() ? data.train : data.test;
  inet::EvalResult r = inet::evaluate(params, cfg.model, samples);
  ordered_json out;
  out["loss"] = r.loss;
  out["accuracy"] = r.accuracy;
  std::cout << out.dump() << "\n";
  return kExitOk;
}

int cmd_predict(const std::string& checkpoint, const std::string& input) {
  inet::LoadedCheckpoint ck = inet::load_checkpoint(checkpoint);
  if (!ck.metadata.contains("model")) {
    throw inet::ManifestError("checkpoint metadata lacks a model section");
  }
  inet::ModelConfig model = inet::model_config_from_json(ck.metadata["model"]);

  std::vector<inet::LabeledImage> samples;
  bool input_is_lines = false;
  try {
    if (input.size() > 5 && input.substr(input.size() - 5) == ".json") {
      samples = inet::load_lines(input);
      input_is_lines = true;
    } else {
      // single-image (or batched) IDX without labels is not a thing in this
      // corpus; accept the images file and synthesize void labels
      std::string labels = input;
      const auto pos = labels.rfind("images");
      if (pos != std::string::npos) labels.replace(pos, 6, "labels");
      if (labels.size() > 5 && labels.substr(labels.size() - 5) == ".idx3") {
        labels.replace(labels.size() - 5, 5, ".idx1");
      }
      samples = inet::load_mnist_idx(input, labels);
    }
  } catch (const inet::Error& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return kExitData;
  }
  if (model.task == inet::Task::Classify && input_is_lines) {
    throw inet::ConfigError("classify checkpoint cannot predict on line input");
  }

  inet::ParamStore params;
  inet::init_model(params, model);
  inet::load_checkpoint_into(params, checkpoint + "");  // same manifest path
  for (std::size_t i = 0; i < samples.size(); ++i) {
    ordered_json line;
    line["index"] = i;
    if (model.task == inet::Task::Classify) {
      line["label"] = inet::predict_classify(samples[i].image, params, model).at(0);
    } else {
      std::string text;
      for (int label : inet::predict_sequence(samples[i].image, params, model).at(0)) {
        text += char('0' + (label - 1));
      }
      line["text"] = text;
    }
    std::cout << line.dump() << "\n";
  }
  return kExitOk;
}

// --- gradcheck ---------------------------------------------------------------

struct GradCase {
  std::string name;
  inet::ParamStore params;
  inet::LossBuilder builder;
};

inet::Tensor random_tensor(inet::Shape s, std::uint64_t seed, const std::string& tag) {
  std::mt19937_64 rng = inet::rng_for(seed, tag);
  std::normal_distribution<double> dist(0.0, 1.0);
  inet::Tensor t(s);
  for (std::int64_t i = 0; i < t.size(); ++i) t[i] = dist(rng);
  return t;
}

/// Scalarizes a Var with fixed random weights so every output influences
/// the loss.
inet::Var weighted_sum(inet::Tape& tape, inet::Var y, std::uint64_t seed) {
  inet::Var w = tape.leaf(random_tensor(y.shape(), seed, "readout"));
  return inet::ag::sum(inet::ag::mul(y, w));
}

std::vector<GradCase> gradcheck_suite(bool small) {
  std::vector<GradCase> cases;
  const std::uint64_t seed = 20260826;

  auto unit_case = [&](const std::string& name, inet::ConvUnitSpec spec, inet::Shape in,
                       bool train_mode) {
    GradCase c;
    c.name = name;
    inet::init_conv_unit(c.params, "u", spec, seed);
    inet::Tensor x = random_tensor(in, seed, name);
    c.builder = [=, spec = spec](inet::Tape& tape, inet::ParamStore& p) {
      inet::Mode mode{train_mode, nullptr};
      inet::Var y = inet::conv_unit(tape.leaf(x), p, "u", spec, mode);
      return weighted_sum(tape, y, seed);
    };
    cases.push_back(std::move(c));
  };

  // Composite cases run BN in eval mode: under batch statistics the loss is
  // exactly invariant to the pre-BN bias, so its true gradient is zero and
  // the relative-error quotient measures only finite-difference noise.
  // Train-mode BN is checked standalone below.
  inet::ConvUnitSpec sep;
  sep.kh = sep.kw = 3;
  sep.c_in = 3;
  sep.c_out = 4;
  unit_case("separable_conv_unit", sep, {2, 5, 6, 3}, false);

  inet::ConvUnitSpec std_unit = sep;
  std_unit.kind = inet::ConvKind::Standard;
  unit_case("standard_conv_unit", std_unit, {2, 5, 6, 3}, false);

  inet::ConvUnitSpec strided = sep;
  strided.stride = {2, 2};
  unit_case("strided_separable_unit", strided, {2, 6, 7, 3}, false);

  {
    GradCase c;
    c.name = "batch_norm_train";
    c.params.emplace("x", random_tensor({2, 4, 4, 3}, seed, "bn-x"));
    c.params.emplace("gamma", random_tensor({1, 1, 1, 3}, seed, "bn-g"), true, false);
    c.params.emplace("beta", random_tensor({1, 1, 1, 3}, seed, "bn-b"), true, false);
    c.params.emplace("rm", inet::Tensor({1, 1, 1, 3}, 0.0), false, false);
    c.params.emplace("rv", inet::Tensor({1, 1, 1, 3}, 1.0), false, false);
    c.builder = [seed](inet::Tape& tape, inet::ParamStore& p) {
      inet::Var y = inet::ag::batch_norm(tape.param(p, "x"), tape.param(p, "gamma"),
                                         tape.param(p, "beta"), p.at("rm"), p.at("rv"),
                                         0.9, 1e-5, true);
      return weighted_sum(tape, y, seed);
    };
    cases.push_back(std::move(c));
  }

  {
    GradCase c;
    c.name = "softmax_cross_entropy";
    c.params.emplace("logits", random_tensor({4, 1, 1, 5}, seed, "sce"));
    c.builder = [](inet::Tape& tape, inet::ParamStore& p) {
      return inet::ag::softmax_cross_entropy(tape.param(p, "logits"), {1, 0, 4, 2});
    };
    cases.push_back(std::move(c));
  }
  {
    GradCase c;
    c.name = "ctc_logits";
    c.params.emplace("logits", random_tensor({2, 1, 6, 4}, seed, "ctc"));
    c.builder = [](inet::Tape& tape, inet::ParamStore& p) {
      return inet::ag::ctc_loss_mean(tape.param(p, "logits"), {{1, 2, 1}, {3, 3}});
    };
    cases.push_back(std::move(c));
  }
  {
    GradCase c;
    c.name = "dropout_train";
    c.params.emplace("x", random_tensor({2, 3, 3, 2}, seed, "drop"));
    c.builder = [seed](inet::Tape& tape, inet::ParamStore& p) {
      std::mt19937_64 rng(seed);  // identical mask on every call
      inet::Mode mode{true, &rng};
      inet::Var y = inet::ag::dropout(tape.param(p, "x"), 0.3, mode);
      return weighted_sum(tape, y, seed);
    };
    cases.push_back(std::move(c));
  }

  inet::BlockConfig tiny_block;
  tiny_block.growth_rate = 2;
  tiny_block.layer_count = 2;
  {
    GradCase c;
    c.name = "dense_block";
    inet::init_dense_block(c.params, "b", 3, tiny_block, seed);
    inet::Tensor x = random_tensor({2, 4, 5, 3}, seed, "dense");
    c.builder = [=](inet::Tape& tape, inet::ParamStore& p) {
      inet::Mode mode{false, nullptr};
      inet::Var y = inet::dense_block(tape.leaf(x), p, "b", tiny_block, mode);
      return weighted_sum(tape, y, seed);
    };
    cases.push_back(std::move(c));
  }

  if (!small) return cases;

  {
    GradCase c;
    c.name = "intensive_block";
    inet::init_intensive_block(c.params, "ib", 3, tiny_block, seed);
    inet::Tensor x = random_tensor({2, 4, 6, 3}, seed, "intensive");
    c.builder = [=](inet::Tape& tape, inet::ParamStore& p) {
      inet::Mode mode{false, nullptr};
      inet::Var y = inet::intensive_block(tape.leaf(x), p, "ib", tiny_block, mode);
      return weighted_sum(tape, y, seed);
    };
    cases.push_back(std::move(c));
  }

  auto model_case = [&](const std::string& name, inet::ModelConfig mc,
                        std::vector<int> labels, std::vector<inet::LabelSequence> targets) {
    GradCase c;
    c.name = name;
    inet::init_model(c.params, mc);
    inet::Tensor x = random_tensor({2, mc.input_shape.h, mc.input_shape.w, 1}, seed, name);
    c.builder = [=](inet::Tape& tape, inet::ParamStore& p) {
      inet::Mode mode{false, nullptr};
      inet::Var logits = inet::model_forward(tape.leaf(x), p, mc, mode);
      if (mc.task == inet::Task::Classify) {
        return inet::ag::softmax_cross_entropy(logits, labels);
      }
      return inet::ag::ctc_loss_mean(logits, targets);
    };
    cases.push_back(std::move(c));
  };

  inet::ModelConfig mini;
  mini.task = inet::Task::Classify;
  mini.input_shape = {1, 8, 8, 1};
  mini.class_count = 3;
  mini.block = tiny_block;
  mini.first_conv_channels = 3;
  mini.intensive_blocks = 1;
  mini.seed = seed;
  model_case("miniature_classify_model", mini, {0, 2}, {});

  inet::ModelConfig mseq = mini;
  mseq.task = inet::Task::Sequence;
  mseq.input_shape = {1, 8, 16, 1};
  mseq.alphabet_size = 3;
  model_case("miniature_sequence_model", mseq, {}, {{1, 2}, {3}});

  return cases;
}

int cmd_gradcheck(const std::string& size) {
  if (size != "tiny" && size != "small") {
    throw inet::ConfigError("--size must be tiny or small");
  }
  bool all_pass = true;
  for (GradCase& c : gradcheck_suite(size == "small")) {
    const double err = inet::finite_difference_check(c.builder, c.params);
    const bool pass = err < 1e-4;
    all_pass = all_pass && pass;
    ordered_json line;
    line["component"] = c.name;
    line["max_rel_error"] = err;
    line["pass"] = pass;
    std::cout << line.dump() << "\n";
  }
  return all_pass ? kExitOk : kExitCheckFailed;
}

int cmd_ctc_oracle(int tmax, int alphabet) {
  if (tmax < 1 || alphabet < 1) throw inet::ConfigError("--tmax and --alphabet must be >= 1");
  if (std::pow(alphabet + 1, tmax) > 1e7) {
    throw inet::ConfigError("grid too large: (A+1)^tmax exceeds 1e7");
  }
  double worst = 0.0;
  long comparisons = 0;
  std::mt19937_64 rng = inet::rng_for(4242, "ctc-oracle");
  std::uniform_real_distribution<double> dist(0.05, 1.0);

  // every target of length <= 3 (including empty), labels in [1, alphabet]
  std::vector<inet::LabelSequence> targets{{}};
  for (int a = 1; a <= alphabet; ++a) {
    targets.push_back({a});
    for (int b = 1; b <= alphabet; ++b) {
      targets.push_back({a, b});
      for (int c = 1; c <= alphabet; ++c) targets.push_back({a, b, c});
    }
  }

  for (int t = 1; t <= tmax; ++t) {
    inet::Matrix probs(t, alphabet + 1);
    for (int r = 0; r < t; ++r) {
      double z = 0.0;
      for (int k = 0; k <= alphabet; ++k) z += (probs.at(r, k) = dist(rng));
      for (int k = 0; k <= alphabet; ++k) probs.at(r, k) /= z;
    }
    for (const inet::LabelSequence& target : targets) {
      if (inet::ctc_min_frames(target) > t) continue;
      const double dp = inet::ctc_loss(probs, target).loss;
      const double brute = inet::ctc_bruteforce(probs, target);
      worst = std::max(worst, std::abs(dp - brute));
      ++comparisons;
    }
  }
  ordered_json out;
  out["tmax"] = tmax;
  out["alphabet"] = alphabet;
  out["comparisons"] = comparisons;
  out["worst_abs_deviation"] = worst;
  out["pass"] = worst < 1e-10;
  std::cout << out.dump() << "\n";
  return worst < 1e-10 ? kExitOk : kExitCheckFailed;
}

// --- plot --------------------------------------------------------------------

int cmd_plot(const std::string& metrics_path, const std::string& out_path) {
  std::ifstream in(metrics_path);
  if (!in) throw inet::IoError("cannot open " + metrics_path);
  std::vector<json> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      rows.push_back(json::parse(line));
    } catch (const json::parse_error& e) {
      throw inet::ParseError("bad metrics line: " + std::string(e.what()));
    }
  }
  if (rows.empty()) throw inet::ParseError("no metric rows in " + metrics_path);

  const int width = 640, height = 400, margin = 50;
  auto polyline = [&](const std::string& key, double lo, double hi,
                      const std::string& color) {
    std::ostringstream s;
    s << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const double v = rows[i].value(key, 0.0);
      const double x =
          margin + (rows.size() == 1
                        ? 0.0
                        : double(i) * (width - 2 * margin) / double(rows.size() - 1));
      const double y = height - margin - (v - lo) / std::max(hi - lo, 1e-12) *
                                             (height - 2 * margin);
      s << x << "," << y << " ";
    }
    s << "\"/>";
    return s.str();
  };

  double lo = 0.0, hi = 0.0;
  for (const json& r : rows) {
    hi = std::max({hi, r.value("train_loss", 0.0), r.value("test_loss", 0.0)});
  }
  std::ofstream out(out_path);
  if (!out) throw inet::IoError("cannot write " + out_path);
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
      << height << "\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      << polyline("train_loss", lo, hi, "#d33") << "\n"
      << polyline("test_loss", lo, hi, "#33d") << "\n"
      << polyline("train_acc", 0.0, 1.0, "#d93") << "\n"
      << polyline("test_acc", 0.0, 1.0, "#39d") << "\n"
      << "<text x=\"" << margin << "\" y=\"20\" font-size=\"13\">loss (red/blue), "
      << "accuracy (orange/cyan) over " << rows.size() << " epochs</text>\n"
      << "</svg>\n";
  std::cerr << "wrote " << out_path << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  // Large activation buffers churn every step; keep them in the heap
  // instead of round-tripping through mmap.
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, -1);

  CLI::App app{"IntensiveNet OCR network: training, evaluation and checks"};
  app.require_subcommand(1);

  std::string config_path, preset, out_dir = "runs/latest", checkpoint, input;
  std::string size = "small", metrics_path, plot_out = "curves.svg";
  int tmax = 6, alphabet = 2;

  CLI::App* train = app.add_subcommand("train", "Train a model from a RunConfig or preset");
  train->add_option("--config", config_path, "RunConfig JSON path");
  train->add_option("--preset", preset, "Embedded preset: mnist | digitlines");
  train->add_option("--out", out_dir, "Output directory for checkpoints and metrics");

  CLI::App* evalc = app.add_subcommand("eval", "Evaluate a checkpoint on the config's test split");
  evalc->add_option("--config", config_path, "RunConfig JSON path");
  evalc->add_option("--preset", preset, "Embedded preset: mnist | digitlines");
  evalc->add_option("--checkpoint", checkpoint, "Checkpoint manifest (.json)")->required();

  CLI::App* predict = app.add_subcommand("predict", "Decode labels for IDX images or a line set");
  predict->add_option("--checkpoint", checkpoint, "Checkpoint manifest (.json)")->required();
  predict->add_option("--input", input, "IDX images file or line-set manifest")->required();

  CLI::App* gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient audit");
  gradcheck->add_option("--size", size, "tiny | small");

  CLI::App* oracle = app.add_subcommand("ctc-oracle", "CTC loss vs exhaustive path enumeration");
  oracle->add_option("--tmax", tmax, "Max frame count");
  oracle->add_option("--alphabet", alphabet, "Alphabet size (excluding blank)");

  CLI::App* plot = app.add_subcommand("plot", "Render metrics.jsonl as an SVG");
  plot->add_option("--metrics", metrics_path, "metrics.jsonl path")->required();
  plot->add_option("--out", plot_out, "Output SVG path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (train->parsed()) return cmd_train(config_path, preset, out_dir);
    if (evalc->parsed()) return cmd_eval(config_path, preset, checkpoint);
    if (predict->parsed()) return cmd_predict(checkpoint, input);
    if (gradcheck->parsed()) return cmd_gradcheck(size);
    if (oracle->parsed()) return cmd_ctc_oracle(tmax, alphabet);
    if (plot->parsed()) return cmd_plot(metrics_path, plot_out);
  } catch (const inet::CheckpointError& e) {
    std::cerr << "checkpoint error: " << e.what() << "\n";
    return kExitCheckpoint;
  } catch (const inet::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const inet::ParseError& e) {
    std::cerr << "parse error: " << e.what() << "\n";
    return kExitData;
  } catch (const inet::IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kExitData;
  } catch (const inet::GenerationError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const inet::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitCheckFailed;
  }
  return kExitConfig;
}
