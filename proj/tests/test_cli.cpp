#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "intensivenet/data.hpp"
#include "intensivenet/tensor.hpp"

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string cli_path() {
  const char* env = std::getenv("INTENSIVENET_CLI");
  REQUIRE_MESSAGE(env != nullptr, "INTENSIVENET_CLI must point at the CLI binary");
  return env;
}

fs::path temp_dir() {
  static fs::path dir = [] {
    fs::path p = fs::temp_directory_path() / "intensivenet-cli-tests";
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
  }();
  return dir;
}

struct RunResult {
  int exit_code;
  std::string stdout_text;
};

RunResult run_cli(const std::string& args) {
  const fs::path out = temp_dir() / "stdout.txt";
  const std::string cmd =
      cli_path() + " " + args + " > " + out.string() + " 2> /dev/null";
  const int status = std::system(cmd.c_str());
  RunResult r;
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream in(out);
  std::stringstream ss;
  ss << in.rdbuf();
  r.stdout_text = ss.str();
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// A self-contained tiny dataset + config on disk; every CLI test reuses it.
struct Fixture {
  fs::path config;
  fs::path idx_images;
  fs::path idx_labels;

  Fixture() {
    const fs::path dir = temp_dir();
    idx_images = dir / "tiny-images.idx3";
    idx_labels = dir / "tiny-labels.idx1";
    std::vector<inet::LabeledImage> samples;
    for (int i = 0; i < 24; ++i) {
      inet::LabeledImage s;
      s.image = inet::Tensor({1, 8, 8, 1});
      s.class_label = i % 2;
      for (int h = 0; h < 8; ++h)
        for (int w = 0; w < 8; ++w) {
          const bool bright = (s.class_label == 0) ? (w < 4) : (w >= 4);
          s.image.at(0, h, w, 0) = bright ? 0.9 : 0.05;
        }
      samples.push_back(std::move(s));
    }
    inet::save_mnist_idx(idx_images.string(), idx_labels.string(), samples);

    json cfg{
        {"model",
         {{"task", "classify"}, {"input_height", 8}, {"input_width", 8}, {"class_count", 2},
          {"growth_rate", 2}, {"layer_count", 1}, {"first_conv_channels", 2}, {"seed", 3}}},
        {"train",
         {{"batch_size", 8}, {"max_epochs", 2}, {"schedule", "constant"}, {"learning_rate", 0.01},
          {"weight_decay", 0.0}, {"seed", 3}}},
        {"data",
         {{"kind", "mnist"}, {"train_images", idx_images.string()},
          {"train_labels", idx_labels.string()}, {"test_images", idx_images.string()},
          {"test_labels", idx_labels.string()}, {"train_limit", 16}, {"test_limit", 8}}}};
    config = dir / "tiny-config.json";
    std::ofstream out(config);
    out << cfg.dump(2);
  }
};

const Fixture& fixture() {
  static Fixture f;
  return f;
}

}  // namespace

TEST_CASE("invalid JSON config exits 2") {
  const fs::path bad = temp_dir() / "bad.json";
  std::ofstream(bad) << "{ this is not json";
  RunResult r = run_cli("train --config " + bad.string() + " --out " +
                        (temp_dir() / "never").string());
  CHECK(r.exit_code == 2);
}

TEST_CASE("unknown config keys exit 2") {
  const fs::path bad = temp_dir() / "unknown-key.json";
  std::ofstream(bad) << R"({"model": {"growht_rate": 8}})";
  RunResult r = run_cli("train --config " + bad.string() + " --out " +
                        (temp_dir() / "never").string());
  CHECK(r.exit_code == 2);
}

TEST_CASE("train writes metrics.jsonl with one line per epoch, deterministically") {
  const Fixture& f = fixture();
  const fs::path out1 = temp_dir() / "run1";
  const fs::path out2 = temp_dir() / "run2";
  RunResult r1 = run_cli("train --config " + f.config.string() + " --out " + out1.string());
  REQUIRE(r1.exit_code == 0);
  RunResult r2 = run_cli("train --config " + f.config.string() + " --out " + out2.string());
  REQUIRE(r2.exit_code == 0);

  const std::string m1 = slurp(out1 / "metrics.jsonl");
  CHECK(!m1.empty());
  int lines = 0;
  for (char ch : m1) lines += (ch == '\n');
  CHECK(lines == 2);
  CHECK(m1 == slurp(out2 / "metrics.jsonl"));

  // Summary on stdout is one JSON object.
  json summary = json::parse(r1.stdout_text);
  CHECK(summary.at("epochs_completed") == 2);
}

TEST_CASE("eval prints one JSON object and is deterministic") {
  const Fixture& f = fixture();
  const fs::path out = temp_dir() / "eval-run";
  REQUIRE(run_cli("train --config " + f.config.string() + " --out " + out.string()).exit_code ==
          0);
  const std::string ckpt = (out / "ckpt-epoch-0001.json").string();
  RunResult a = run_cli("eval --config " + f.config.string() + " --checkpoint " + ckpt);
  RunResult b = run_cli("eval --config " + f.config.string() + " --checkpoint " + ckpt);
  REQUIRE(a.exit_code == 0);
  CHECK(a.stdout_text == b.stdout_text);
  json result = json::parse(a.stdout_text);
  CHECK(result.at("accuracy").get<double>() >= 0.0);
  CHECK(result.at("accuracy").get<double>() <= 1.0);
}

TEST_CASE("shape-incompatible checkpoint exits 4") {
  const Fixture& f = fixture();
  const fs::path out = temp_dir() / "mismatch-run";
  REQUIRE(run_cli("train --config " + f.config.string() + " --out " + out.string()).exit_code ==
          0);
  // Same checkpoint against a wider model.
  const fs::path wider = temp_dir() / "wider.json";
  json cfg = json::parse(slurp(fixture().config));
  cfg["model"]["first_conv_channels"] = 6;
  std::ofstream(wider) << cfg.dump();
  RunResult r = run_cli("eval --config " + wider.string() + " --checkpoint " +
                        (out / "ckpt-epoch-0001.json").string());
  CHECK(r.exit_code == 4);
}

TEST_CASE("predict decodes IDX images with a classify checkpoint") {
  const Fixture& f = fixture();
  const fs::path out = temp_dir() / "predict-run";
  REQUIRE(run_cli("train --config " + f.config.string() + " --out " + out.string()).exit_code ==
          0);
  RunResult r = run_cli("predict --checkpoint " + (out / "ckpt-epoch-0001.json").string() +
                        " --input " + f.idx_images.string());
  REQUIRE(r.exit_code == 0);
  int lines = 0;
  std::istringstream in(r.stdout_text);
  for (std::string line; std::getline(in, line);) {
    json obj = json::parse(line);
    CHECK(obj.contains("label"));
    ++lines;
  }
  CHECK(lines == 24);
}

TEST_CASE("classify checkpoint with a line-set input exits 2") {
  const Fixture& f = fixture();
  const fs::path out = temp_dir() / "task-mismatch-run";
  REQUIRE(run_cli("train --config " + f.config.string() + " --out " + out.string()).exit_code ==
          0);

  // Build a tiny line set from the IDX glyphs.
  auto glyphs = inet::load_mnist_idx(f.idx_images.string(), f.idx_labels.string());
  // Ensure every digit class is populated for the generator.
  std::vector<inet::LabeledImage> pool;
  for (int d = 0; d < 10; ++d) {
    inet::LabeledImage g = glyphs[std::size_t(d % 2)];
    g.class_label = d;
    pool.push_back(std::move(g));
  }
  inet::LineSpec spec;
  spec.seed = 1;
  auto lines = inet::generate_lines(spec, pool, 2);
  const std::string prefix = (temp_dir() / "lineset").string();
  inet::save_lines(prefix, lines);

  RunResult r = run_cli("predict --checkpoint " + (out / "ckpt-epoch-0001.json").string() +
                        " --input " + prefix + ".json");
  CHECK(r.exit_code == 2);
}

TEST_CASE("unreadable predict input exits 3") {
  const Fixture& f = fixture();
  const fs::path out = temp_dir() / "io-run";
  REQUIRE(run_cli("train --config " + f.config.string() + " --out " + out.string()).exit_code ==
          0);
  RunResult r = run_cli("predict --checkpoint " + (out / "ckpt-epoch-0001.json").string() +
                        " --input " + (temp_dir() / "missing.idx3").string());
  CHECK(r.exit_code == 3);
}

TEST_CASE("gradcheck tiny suite exits 0 and lists one line per component") {
  RunResult r = run_cli("gradcheck --size tiny");
  CHECK(r.exit_code == 0);
  int lines = 0;
  std::istringstream in(r.stdout_text);
  for (std::string line; std::getline(in, line);) {
    json obj = json::parse(line);
    CHECK(obj.contains("component"));
    CHECK(obj.contains("max_rel_error"));
    CHECK(obj.at("pass") == true);
    ++lines;
  }
  CHECK(lines >= 5);
}

TEST_CASE("ctc oracle: small grid exits 0, oversized grid exits 2") {
  RunResult ok = run_cli("ctc-oracle --tmax 4 --alphabet 1");
  CHECK(ok.exit_code == 0);
  json report = json::parse(ok.stdout_text);
  CHECK(report.at("worst_abs_deviation").get<double>() < 1e-10);

  RunResult big = run_cli("ctc-oracle --tmax 20 --alphabet 5");
  CHECK(big.exit_code == 2);
}

TEST_CASE("plot renders an SVG from metrics.jsonl") {
  const Fixture& f = fixture();
  const fs::path out = temp_dir() / "plot-run";
  REQUIRE(run_cli("train --config " + f.config.string() + " --out " + out.string()).exit_code ==
          0);
  const fs::path svg = temp_dir() / "curves.svg";
  RunResult r = run_cli("plot --metrics " + (out / "metrics.jsonl").string() + " --out " +
                        svg.string());
  CHECK(r.exit_code == 0);
  const std::string text = slurp(svg);
  CHECK(text.find("<svg") != std::string::npos);
}
