#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "intensivenet/ctc.hpp"
#include "intensivenet/tensor.hpp"

namespace inet {

/// One sample: a (1,h,w,1) image with values in [0,1], labeled with either
/// a class index (classify) or a CTC label sequence (sequence task).
struct LabeledImage {
  Tensor image;
  int class_label = -1;
  LabelSequence seq_label;  // labels in [1, A]; digit d maps to label d+1
};

/// Parses big-endian IDX files (image magic 0x803, label magic 0x801).
/// Pixels are scaled by 1/255 into [0,1].
std::vector<LabeledImage> load_mnist_idx(const std::string& images_path,
                                         const std::string& labels_path);

/// Reference IDX writer (fixtures, dataset export). Images must share one
/// (h,w); values are clamped to [0,1] and quantized to bytes.
void save_mnist_idx(const std::string& images_path, const std::string& labels_path,
                    const std::vector<LabeledImage>& samples);

/// Synthetic text-line recipe: K in [kmin,kmax] digit glyphs, resized to
/// 32 rows (nearest neighbor), spread left to right over a zero canvas
/// with +-jitter pixels of horizontal noise.
struct LineSpec {
  int kmin = 3;
  int kmax = 6;
  int height = 32;
  int width = 200;
  int jitter = 2;
  std::uint64_t seed = 0;
  /// When > 0, every line must satisfy 2K-1 <= frame_budget (CTC
  /// feasibility against the model's frame count).
  int frame_budget = 0;
};

/// Composes `count` sequence-labeled lines from classify-labeled glyphs.
/// Deterministic: line i draws from an RNG stream keyed by (seed, i).
std::vector<LabeledImage> generate_lines(const LineSpec& spec,
                                         const std::vector<LabeledImage>& glyph_source,
                                         int count);

/// Seeded shuffle then partition; |train| = floor(ratio * n).
std::pair<std::vector<LabeledImage>, std::vector<LabeledImage>> split(
    std::vector<LabeledImage> data, double ratio, std::uint64_t seed);

/// Persists sequence lines as a JSON index (prefix + ".json") plus a raw
/// little-endian float32 pixel blob (prefix + ".bin").
void save_lines(const std::string& prefix, const std::vector<LabeledImage>& lines);
std::vector<LabeledImage> load_lines(const std::string& manifest_path);

}  // namespace inet
