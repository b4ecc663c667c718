#include "intensivenet/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include <json.hpp>

#include "intensivenet/rng.hpp"

namespace inet {

namespace {

constexpr std::uint32_t kImageMagic = 0x00000803;
constexpr std::uint32_t kLabelMagic = 0x00000801;

std::uint32_t read_be32(std::istream& in, const std::string& what) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) {
    throw ParseError("idx: truncated while reading " + what);
  }
  return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) |
         (std::uint32_t(b[2]) << 8) | std::uint32_t(b[3]);
}

void write_be32(std::ostream& out, std::uint32_t v) {
  const unsigned char b[4] = {(unsigned char)(v >> 24), (unsigned char)(v >> 16),
                              (unsigned char)(v >> 8), (unsigned char)v};
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::ifstream open_for_read(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  return in;
}

}  // namespace

std::vector<LabeledImage> load_mnist_idx(const std::string& images_path,
                                         const std::string& labels_path) {
  std::ifstream img = open_for_read(images_path);
  const std::uint32_t img_magic = read_be32(img, "image magic");
  if (img_magic != kImageMagic) {
    throw ParseError("idx: wrong image magic in " + images_path + " (got " +
                     std::to_string(img_magic) + ")");
  }
  const int count = int(read_be32(img, "image count"));
  const int rows = int(read_be32(img, "row count"));
  const int cols = int(read_be32(img, "column count"));

  std::ifstream lab = open_for_read(labels_path);
  const std::uint32_t lab_magic = read_be32(lab, "label magic");
  if (lab_magic != kLabelMagic) {
    throw ParseError("idx: wrong label magic in " + labels_path + " (got " +
                     std::to_string(lab_magic) + ")");
  }
  const int label_count = int(read_be32(lab, "label count"));
  if (label_count != count) {
    throw ParseError("idx: image count " + std::to_string(count) +
                     " != label count " + std::to_string(label_count));
  }

  std::vector<unsigned char> pixels(std::size_t(rows) * cols);
  std::vector<LabeledImage> out;
  out.reserve(std::size_t(count));
  for (int i = 0; i < count; ++i) {
    if (!img.read(reinterpret_cast<char*>(pixels.data()), std::streamsize(pixels.size()))) {
      throw ParseError("idx: truncated image payload at sample " + std::to_string(i));
    }
    char label;
    if (!lab.read(&label, 1)) {
      throw ParseError("idx: truncated label payload at sample " + std::to_string(i));
    }
    LabeledImage sample;
    sample.image = Tensor({1, rows, cols, 1});
    for (std::size_t p = 0; p < pixels.size(); ++p) {
      sample.image[std::int64_t(p)] = double(pixels[p]) / 255.0;
    }
    sample.class_label = int((unsigned char)label);
    out.push_back(std::move(sample));
  }
  return out;
}

void save_mnist_idx(const std::string& images_path, const std::string& labels_path,
                    const std::vector<LabeledImage>& samples) {
  if (samples.empty()) throw ContractError("save_mnist_idx: no samples");
  const Shape& s = samples[0].image.shape();
  std::ofstream img(images_path, std::ios::binary);
  std::ofstream lab(labels_path, std::ios::binary);
  if (!img || !lab) throw IoError("cannot open output files for IDX write");
  write_be32(img, kImageMagic);
  write_be32(img, std::uint32_t(samples.size()));
  write_be32(img, std::uint32_t(s.h));
  write_be32(img, std::uint32_t(s.w));
  write_be32(lab, kLabelMagic);
  write_be32(lab, std::uint32_t(samples.size()));
  for (const LabeledImage& sample : samples) {
    if (!(sample.image.shape() == s)) {
      throw DimensionError("save_mnist_idx: inconsistent image shapes");
    }
    for (std::int64_t p = 0; p < sample.image.size(); ++p) {
      const double v = std::clamp(sample.image[p], 0.0, 1.0);
      const unsigned char byte = (unsigned char)std::lround(v * 255.0);
      img.write(reinterpret_cast<const char*>(&byte), 1);
    }
    const char label = char(sample.class_label);
    lab.write(&label, 1);
  }
}

namespace {

/// Nearest-neighbor resize of a single-channel (1,h,w,1) glyph.
Tensor resize_nearest(const Tensor& src, int out_h, int out_w) {
  const Shape& s = src.shape();
  Tensor out({1, out_h, out_w, 1});
  for (int y = 0; y < out_h; ++y) {
    const int sy = std::min(s.h - 1, y * s.h / out_h);
    for (int x = 0; x < out_w; ++x) {
      const int sx = std::min(s.w - 1, x * s.w / out_w);
      out.at(0, y, x, 0) = src.at(0, sy, sx, 0);
    }
  }
  return out;
}

}  // namespace

std::vector<LabeledImage> generate_lines(const LineSpec& spec,
                                         const std::vector<LabeledImage>& glyph_source,
                                         int count) {
  if (spec.kmin < 1 || spec.kmax < spec.kmin) {
    throw ConfigError("LineSpec: need 1 <= kmin <= kmax");
  }
  const int glyph_w = spec.height;  // square glyphs after the resize to line height
  if (spec.width < glyph_w + (spec.kmax - 1) * glyph_w / 2) {
    throw GenerationError("canvas width " + std::to_string(spec.width) +
                          " cannot fit " + std::to_string(spec.kmax) + " glyphs");
  }
  if (spec.frame_budget > 0 && 2 * spec.kmax - 1 > spec.frame_budget) {
    throw GenerationError("kmax " + std::to_string(spec.kmax) +
                          " violates the CTC frame budget " +
                          std::to_string(spec.frame_budget));
  }

  std::vector<std::vector<int>> by_class(10);
  for (std::size_t i = 0; i < glyph_source.size(); ++i) {
    const int label = glyph_source[i].class_label;
    if (label >= 0 && label < 10) by_class[std::size_t(label)].push_back(int(i));
  }
  for (int d = 0; d < 10; ++d) {
    if (by_class[std::size_t(d)].empty()) {
      throw ContractError("generate_lines: no glyphs for digit " + std::to_string(d));
    }
  }

  std::vector<LabeledImage> lines;
  lines.reserve(std::size_t(count));
  for (int i = 0; i < count; ++i) {
    std::mt19937_64 rng = rng_for(spec.seed, "line", std::uint64_t(i));
    std::uniform_int_distribution<int> k_dist(spec.kmin, spec.kmax);
    std::uniform_int_distribution<int> digit_dist(0, 9);
    const int k = k_dist(rng);

    LabeledImage line;
    line.image = Tensor({1, spec.height, spec.width, 1}, 0.0);
    line.seq_label.reserve(std::size_t(k));
    for (int j = 0; j < k; ++j) {
      const int digit = digit_dist(rng);
      const auto& pool = by_class[std::size_t(digit)];
      std::uniform_int_distribution<int> pick(0, int(pool.size()) - 1);
      const Tensor glyph =
          resize_nearest(glyph_source[std::size_t(pool[std::size_t(pick(rng))])].image,
                         spec.height, glyph_w);
      int x0 = k == 1 ? 0 : j * (spec.width - glyph_w) / (k - 1);
      if (spec.jitter > 0) {
        std::uniform_int_distribution<int> wiggle(-spec.jitter, spec.jitter);
        x0 = std::clamp(x0 + wiggle(rng), 0, spec.width - glyph_w);
      }
      for (int y = 0; y < spec.height; ++y) {
        for (int x = 0; x < glyph_w; ++x) {
          double& dst = line.image.at(0, y, x0 + x, 0);
          dst = std::max(dst, glyph.at(0, y, x, 0));
        }
      }
      line.seq_label.push_back(digit + 1);  // blank is 0
    }
    lines.push_back(std::move(line));
  }
  return lines;
}

std::pair<std::vector<LabeledImage>, std::vector<LabeledImage>> split(
    std::vector<LabeledImage> data, double ratio, std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw ConfigError("split: ratio must lie in (0,1)");
  std::mt19937_64 rng = rng_for(seed, "split");
  std::shuffle(data.begin(), data.end(), rng);
  const std::size_t train_count = std::size_t(std::floor(ratio * double(data.size())));
  std::vector<LabeledImage> test(std::make_move_iterator(data.begin() + std::ptrdiff_t(train_count)),
                                 std::make_move_iterator(data.end()));
  data.resize(train_count);
  return {std::move(data), std::move(test)};
}

void save_lines(const std::string& prefix, const std::vector<LabeledImage>& lines) {
  if (lines.empty()) throw ContractError("save_lines: no lines");
  const Shape& s = lines[0].image.shape();
  nlohmann::json index;
  index["format"] = "intensivenet-lines-v1";
  index["height"] = s.h;
  index["width"] = s.w;
  index["count"] = lines.size();
  index["blob"] = prefix.substr(prefix.find_last_of('/') + 1) + ".bin";
  nlohmann::json labels = nlohmann::json::array();

  std::ofstream blob(prefix + ".bin", std::ios::binary);
  if (!blob) throw IoError("cannot open " + prefix + ".bin");
  for (const LabeledImage& line : lines) {
    if (!(line.image.shape() == s)) throw DimensionError("save_lines: inconsistent shapes");
    labels.push_back(line.seq_label);
    for (std::int64_t p = 0; p < line.image.size(); ++p) {
      const float v = float(line.image[p]);
      blob.write(reinterpret_cast<const char*>(&v), sizeof(float));
    }
  }
  index["labels"] = std::move(labels);
  std::ofstream manifest(prefix + ".json");
  if (!manifest) throw IoError("cannot open " + prefix + ".json");
  manifest << index.dump(2) << "\n";
}

std::vector<LabeledImage> load_lines(const std::string& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw IoError("cannot open " + manifest_path);
  nlohmann::json index;
  try {
    in >> index;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("lines manifest: " + std::string(e.what()));
  }
  if (index.value("format", "") != "intensivenet-lines-v1") {
    throw ParseError("lines manifest: unknown format");
  }
  const int h = index.at("height").get<int>();
  const int w = index.at("width").get<int>();
  const std::size_t count = index.at("count").get<std::size_t>();
  const auto& labels = index.at("labels");
  if (labels.size() != count) throw ParseError("lines manifest: label count mismatch");

  const std::string dir = manifest_path.substr(0, manifest_path.find_last_of('/') + 1);
  std::ifstream blob(dir + index.at("blob").get<std::string>(), std::ios::binary);
  if (!blob) throw IoError("cannot open line pixel blob");

  std::vector<LabeledImage> out;
  out.reserve(count);
  std::vector<float> pixels(std::size_t(h) * w);
  for (std::size_t i = 0; i < count; ++i) {
    if (!blob.read(reinterpret_cast<char*>(pixels.data()),
                   std::streamsize(pixels.size() * sizeof(float)))) {
      throw ParseError("lines blob: truncated at line " + std::to_string(i));
    }
    LabeledImage line;
    line.image = Tensor({1, h, w, 1});
    for (std::size_t p = 0; p < pixels.size(); ++p) line.image[std::int64_t(p)] = pixels[p];
    line.seq_label = labels.at(i).get<LabelSequence>();
    out.push_back(std::move(line));
  }
  return out;
}

}  // namespace inet
