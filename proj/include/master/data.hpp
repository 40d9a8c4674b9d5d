#pragma once

#include <random>
#include <string>
#include <vector>

#include "master/tensor.hpp"

namespace master {

struct Sample {
  Tensor image;  // H x W grayscale in [0, 1]
  std::string transcription;
  std::string source_path;
};

struct RenderStyle {
  int glyph_scale = 4;      // integer upscaling of the 5x7 cells
  int spacing = 3;          // base inter-glyph gap, px
  int jitter = 2;           // max |horizontal offset| per glyph, px
  double noise_sigma = 0.02;
  double background = 0.1;
  double foreground = 0.9;
  int margin = 6;
  int height = 48;
};

/// Draws `text` with the built-in 5x7 font. Deterministic for a given rng
/// state and style; width depends on the text length.
Sample render_sample(const std::string& text, std::mt19937_64& rng,
                     const RenderStyle& style = {});

Tensor resize_bilinear(const Tensor& image, std::int64_t out_h, std::int64_t out_w);

/// Resize/pad rule: aspect ratios above 160/48 resize directly to 48x160;
/// anything else resizes height to 48 and right-pads with zeros to width 160.
Tensor preprocess(const Tensor& image);  // -> 1 x 48 x 160

/// Binary PGM (P5, maxval 255) is the single supported raster format.
Tensor load_pgm(const std::string& path);
void save_pgm(const std::string& path, const Tensor& image);

struct ManifestEntry {
  std::string path;
  std::string transcription;
};

/// TSV manifest: image path, tab, transcription.
std::vector<ManifestEntry> read_manifest(const std::string& path);
void write_manifest(const std::string& path, const std::vector<ManifestEntry>& entries);

/// Loads every manifest row; relative image paths resolve against the
/// manifest's directory.
std::vector<Sample> load_corpus(const std::string& manifest_path);

struct SynthSpec {
  std::int64_t count = 0;
  int min_len = 3;
  int max_len = 8;
  std::string charset = "0123456789";
  std::uint64_t seed = 0;
  RenderStyle style;
};

/// Reproducible corpus: sample i is rendered from its own seed derived from
/// spec.seed, so generation can be partitioned.
std::vector<Sample> synth_corpus(const SynthSpec& spec);

}  // namespace master
