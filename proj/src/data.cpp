#include "master/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "master/font.hpp"
#include "master/ops.hpp"

namespace master {

Sample render_sample(const std::string& text, std::mt19937_64& rng, const RenderStyle& style) {
  if (text.empty()) throw ContractError("render_sample: empty text");
  for (char c : text) {
    if (!glyph_rows(c)) {
      throw ContractError(std::string("render_sample: symbol '") + c + "' is not renderable");
    }
  }
  const int gw = kGlyphWidth * style.glyph_scale;
  const int gh = kGlyphHeight * style.glyph_scale;
  if (gh > style.height) {
    throw ConfigError("render_sample: glyph height " + std::to_string(gh) +
                      " exceeds image height " + std::to_string(style.height));
  }
  const auto n = static_cast<int>(text.size());
  const std::int64_t width = 2 * (style.margin + style.jitter) + n * gw + (n - 1) * style.spacing;
  Tensor img = Tensor::full({style.height, width}, style.background);

  std::uniform_int_distribution<int> jitter_dist(-style.jitter, style.jitter);
  const int y0 = (style.height - gh) / 2;
  for (int k = 0; k < n; ++k) {
    const int dx = style.jitter > 0 ? jitter_dist(rng) : 0;
    const int x0 = style.margin + style.jitter + k * (gw + style.spacing) + dx;
    const std::uint8_t* rows = glyph_rows(text[static_cast<std::size_t>(k)]);
    for (int gy = 0; gy < kGlyphHeight; ++gy) {
      for (int gx = 0; gx < kGlyphWidth; ++gx) {
        if (!(rows[gy] & (1u << (kGlyphWidth - 1 - gx)))) continue;
        for (int sy = 0; sy < style.glyph_scale; ++sy) {
          for (int sx = 0; sx < style.glyph_scale; ++sx) {
            const std::int64_t y = y0 + gy * style.glyph_scale + sy;
            const std::int64_t x = x0 + gx * style.glyph_scale + sx;
            img[y * width + x] = style.foreground;
          }
        }
      }
    }
  }
  if (style.noise_sigma > 0.0) {
    std::normal_distribution<double> noise(0.0, style.noise_sigma);
    for (std::int64_t i = 0; i < img.size(); ++i) {
      img[i] = std::clamp(img[i] + noise(rng), 0.0, 1.0);
    }
  }
  return Sample{img, text, ""};
}

Tensor resize_bilinear(const Tensor& image, std::int64_t out_h, std::int64_t out_w) {
  if (image.rank() != 2) {
    throw ShapeError("resize: expects H x W, got " + shape_str(image.shape()));
  }
  const std::int64_t h = image.extent(0), w = image.extent(1);
  if (h == out_h && w == out_w) return image;
  Tensor out({out_h, out_w});
  const double sy = static_cast<double>(h) / static_cast<double>(out_h);
  const double sx = static_cast<double>(w) / static_cast<double>(out_w);
  for (std::int64_t oy = 0; oy < out_h; ++oy) {
    double fy = (static_cast<double>(oy) + 0.5) * sy - 0.5;
    fy = std::clamp(fy, 0.0, static_cast<double>(h - 1));
    const auto y0 = static_cast<std::int64_t>(fy);
    const std::int64_t y1 = std::min(y0 + 1, h - 1);
    const double wy = fy - static_cast<double>(y0);
    for (std::int64_t ox = 0; ox < out_w; ++ox) {
      double fx = (static_cast<double>(ox) + 0.5) * sx - 0.5;
      fx = std::clamp(fx, 0.0, static_cast<double>(w - 1));
      const auto x0 = static_cast<std::int64_t>(fx);
      const std::int64_t x1 = std::min(x0 + 1, w - 1);
      const double wx = fx - static_cast<double>(x0);
      const double top = image[y0 * w + x0] * (1.0 - wx) + image[y0 * w + x1] * wx;
      const double bot = image[y1 * w + x0] * (1.0 - wx) + image[y1 * w + x1] * wx;
      out[oy * out_w + ox] = top * (1.0 - wy) + bot * wy;
    }
  }
  return out;
}

Tensor preprocess(const Tensor& image) {
  if (!image.defined()) throw ContractError("preprocess: empty image");
  if (image.rank() != 2) {
    throw ShapeError("preprocess: expects H x W grayscale, got " + shape_str(image.shape()));
  }
  constexpr std::int64_t kH = 48, kW = 160;
  const std::int64_t h = image.extent(0), w = image.extent(1);
  Tensor resized;
  if (w * kH > kW * h) {  // wider than 160/48: squeeze directly
    resized = resize_bilinear(image, kH, kW);
  } else {
    std::int64_t new_w = static_cast<std::int64_t>(
        std::llround(static_cast<double>(w) * static_cast<double>(kH) / static_cast<double>(h)));
    new_w = std::clamp<std::int64_t>(new_w, 1, kW);
    Tensor scaled = resize_bilinear(image, kH, new_w);
    if (new_w == kW) {
      resized = scaled;
    } else {
      resized = Tensor({kH, kW});  // zero right padding
      for (std::int64_t y = 0; y < kH; ++y) {
        std::copy(scaled.data() + y * new_w, scaled.data() + (y + 1) * new_w,
                  resized.data() + y * kW);
      }
    }
  }
  return reshape(resized, {1, kH, kW});
}

namespace {

struct PgmReader {
  std::vector<char> bytes;
  std::size_t pos = 0;
  std::string path;

  [[noreturn]] void fail(const std::string& msg) const {
    throw ParseError("pgm: " + path + ": " + msg + " at byte " + std::to_string(pos));
  }
  int peek() const { return pos < bytes.size() ? static_cast<unsigned char>(bytes[pos]) : -1; }
  void skip_space_and_comments() {
    while (pos < bytes.size()) {
      const char c = bytes[pos];
      if (c == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (c == ' ' || c == '\t' || c == '\r' || c == '\n') {
        ++pos;
      } else {
        break;
      }
    }
  }
  std::int64_t read_int() {
    skip_space_and_comments();
    if (pos >= bytes.size() || !std::isdigit(peek())) fail("expected integer");
    std::int64_t v = 0;
    while (pos < bytes.size() && std::isdigit(peek())) {
      v = v * 10 + (bytes[pos] - '0');
      ++pos;
    }
    return v;
  }
};

}  // namespace

Tensor load_pgm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("pgm: cannot open " + path);
  PgmReader r;
  r.path = path;
  r.bytes.assign(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
  if (r.bytes.size() < 2) r.fail("truncated header");
  if (r.bytes[0] != 'P' || r.bytes[1] != '5') {
    const std::string magic(r.bytes.data(), std::min<std::size_t>(2, r.bytes.size()));
    r.fail("unsupported magic '" + magic + "' (only binary P5 is supported)");
  }
  r.pos = 2;
  const std::int64_t w = r.read_int();
  const std::int64_t h = r.read_int();
  const std::int64_t maxval = r.read_int();
  if (w <= 0 || h <= 0) r.fail("bad dimensions " + std::to_string(w) + "x" + std::to_string(h));
  if (maxval != 255) r.fail("unsupported maxval " + std::to_string(maxval) + " (must be 255)");
  if (r.pos >= r.bytes.size()) r.fail("missing payload");
  ++r.pos;  // single whitespace byte after maxval
  if (r.bytes.size() - r.pos < static_cast<std::size_t>(w * h)) {
    r.pos = r.bytes.size();
    r.fail("truncated payload, expected " + std::to_string(w * h) + " bytes");
  }
  Tensor img({h, w});
  for (std::int64_t i = 0; i < w * h; ++i) {
    img[i] = static_cast<double>(static_cast<unsigned char>(r.bytes[r.pos + i])) / 255.0;
  }
  return img;
}

void save_pgm(const std::string& path, const Tensor& image) {
  if (image.rank() != 2) {
    throw ShapeError("pgm: expects H x W, got " + shape_str(image.shape()));
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("pgm: cannot open " + path + " for writing");
  const std::int64_t h = image.extent(0), w = image.extent(1);
  f << "P5\n" << w << " " << h << "\n255\n";
  std::vector<char> row(static_cast<std::size_t>(w));
  for (std::int64_t y = 0; y < h; ++y) {
    for (std::int64_t x = 0; x < w; ++x) {
      const double v = std::clamp(image[y * w + x], 0.0, 1.0);
      row[static_cast<std::size_t>(x)] = static_cast<char>(std::lround(v * 255.0));
    }
    f.write(row.data(), static_cast<std::streamsize>(row.size()));
  }
  if (!f) throw IoError("pgm: write failed for " + path);
}

std::vector<ManifestEntry> read_manifest(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("manifest: cannot open " + path);
  std::vector<ManifestEntry> entries;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::size_t tab = line.find('\t');
    if (tab == std::string::npos) {
      throw ParseError("manifest: " + path + " line " + std::to_string(lineno) +
                       " is not path<TAB>transcription");
    }
    entries.push_back({line.substr(0, tab), line.substr(tab + 1)});
  }
  return entries;
}

void write_manifest(const std::string& path, const std::vector<ManifestEntry>& entries) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("manifest: cannot open " + path + " for writing");
  for (const auto& e : entries) f << e.path << '\t' << e.transcription << '\n';
  if (!f) throw IoError("manifest: write failed for " + path);
}

std::vector<Sample> load_corpus(const std::string& manifest_path) {
  const auto entries = read_manifest(manifest_path);
  const auto base = std::filesystem::path(manifest_path).parent_path();
  std::vector<Sample> samples;
  samples.reserve(entries.size());
  for (const auto& e : entries) {
    std::filesystem::path p(e.path);
    if (p.is_relative()) p = base / p;
    Sample s;
    s.image = load_pgm(p.string());
    s.transcription = e.transcription;
    s.source_path = p.string();
    samples.push_back(std::move(s));
  }
  return samples;
}

std::vector<Sample> synth_corpus(const SynthSpec& spec) {
  if (spec.count < 0) throw ContractError("synth: count must be >= 0");
  if (spec.min_len < 1 || spec.max_len < spec.min_len) {
    throw ContractError("synth: need 1 <= min_len <= max_len");
  }
  if (spec.charset.empty()) throw ContractError("synth: empty charset");
  std::mt19937_64 master_rng(spec.seed);
  std::vector<Sample> out;
  out.reserve(static_cast<std::size_t>(spec.count));
  for (std::int64_t i = 0; i < spec.count; ++i) {
    const std::uint64_t sample_seed = master_rng();
    std::mt19937_64 rng(sample_seed);
    std::uniform_int_distribution<int> len_dist(spec.min_len, spec.max_len);
    std::uniform_int_distribution<std::size_t> char_dist(0, spec.charset.size() - 1);
    const int len = len_dist(rng);
    std::string text;
    for (int k = 0; k < len; ++k) text.push_back(spec.charset[char_dist(rng)]);
    out.push_back(render_sample(text, rng, spec.style));
  }
  return out;
}

}  // namespace master
