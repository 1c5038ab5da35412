#include "viva/scenario.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <vector>

#include "viva/image_io.hpp"

namespace viva::ingest {
namespace {

namespace fs = std::filesystem;

constexpr char kPipeMagic[] = "VIVAFRM0";

std::uint32_t read_be32(const unsigned char* p) {
  return (std::uint32_t{p[0]} << 24) | (std::uint32_t{p[1]} << 16) | (std::uint32_t{p[2]} << 8) |
         std::uint32_t{p[3]};
}

bool starts_with(const std::string& s, std::string_view prefix) {
  return s.size() >= prefix.size() && s.compare(0, prefix.size(), prefix) == 0;
}

fs::path resolve(const ScenarioManifest& m, const std::string& p) {
  fs::path path(p);
  if (path.is_relative() && !m.base_dir.empty()) path = m.base_dir / path;
  return path;
}

Frame make_frame(std::int64_t index, std::shared_ptr<const Image> pixels, double fps) {
  return Frame{index, std::move(pixels), static_cast<double>(index) / fps};
}

class DirectorySource final : public FrameSource {
 public:
  DirectorySource(const ScenarioManifest& m, fs::path dir) : manifest_(m) {
    std::error_code ec;
    if (!fs::is_directory(dir, ec)) {
      throw FrameSourceError("frame source: not a directory: " + dir.string());
    }
    struct Entry {
      std::uint64_t number;
      fs::path path;
    };
    std::vector<Entry> entries;
    std::size_t digits = 0;
    for (const auto& de : fs::directory_iterator(dir)) {
      if (!de.is_regular_file()) continue;
      std::string ext = de.path().extension().string();
      std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
      if (ext != ".png" && ext != ".jpg" && ext != ".jpeg") continue;
      const std::string stem = de.path().stem().string();
      if (stem.empty() || !std::all_of(stem.begin(), stem.end(), [](unsigned char c) { return std::isdigit(c); })) {
        continue;
      }
      if (digits == 0) digits = stem.size();
      if (stem.size() != digits) {
        throw FrameSourceError("frame source: image names are not equal-width zero-padded indices: " +
                               de.path().filename().string());
      }
      std::uint64_t n = 0;
      std::from_chars(stem.data(), stem.data() + stem.size(), n);
      entries.push_back({n, de.path()});
    }
    if (entries.empty()) throw FrameSourceError("frame source: no numbered images in " + dir.string());
    std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) { return a.number < b.number; });
    for (std::size_t i = 1; i < entries.size(); ++i) {
      if (entries[i].number == entries[i - 1].number) {
        throw FrameSourceError("frame source: duplicate frame index in " + dir.string());
      }
    }
    for (auto& e : entries) files_.push_back(std::move(e.path));

    // Decoding the first frame both checks dimensions and warms the cache.
    auto first = load(0);
    if (first->width() != m.width || first->height() != m.height) {
      throw FrameSourceError("frame source: dimension mismatch: first frame is " + std::to_string(first->width()) +
                             "x" + std::to_string(first->height()) + ", manifest declares " +
                             std::to_string(m.width) + "x" + std::to_string(m.height));
    }
  }

  int width() const override { return manifest_.width; }
  int height() const override { return manifest_.height; }
  bool random_access() const override { return true; }
  std::optional<std::int64_t> frame_count() const override { return static_cast<std::int64_t>(files_.size()); }

  std::optional<Frame> read(std::int64_t index) override {
    if (index < 0 || index >= static_cast<std::int64_t>(files_.size())) return std::nullopt;
    auto pixels = load(index);
    if (pixels->width() != manifest_.width || pixels->height() != manifest_.height) {
      throw FrameSourceError("frame source: dimension mismatch in " + files_[static_cast<std::size_t>(index)].string());
    }
    return make_frame(index, std::move(pixels), manifest_.fps);
  }

 private:
  std::shared_ptr<const Image> load(std::int64_t index) {
    if (cached_ && cached_index_ == index) return cached_;
    const auto& path = files_[static_cast<std::size_t>(index)];
    try {
      cached_ = std::make_shared<const Image>(image_io::read_image(path));
    } catch (const image_io::CodecError& e) {
      throw FrameSourceError("frame source: decode failure: " + std::string(e.what()));
    }
    cached_index_ = index;
    return cached_;
  }

  ScenarioManifest manifest_;
  std::vector<fs::path> files_;
  std::shared_ptr<const Image> cached_;
  std::int64_t cached_index_ = -1;
};

class PipeSource final : public FrameSource {
 public:
  PipeSource(const ScenarioManifest& m, const std::string& locator) : manifest_(m) {
    if (locator == "-") {
      file_ = stdin;
      owns_ = false;
    } else {
      const auto path = resolve(m, locator);
      file_ = std::fopen(path.c_str(), "rb");
      if (file_ == nullptr) throw FrameSourceError("frame source: cannot open pipe " + path.string());
    }
    unsigned char header[16];
    if (std::fread(header, 1, sizeof header, file_) != sizeof header) {
      close();
      throw FrameSourceError("frame source: broken pipe: stream header truncated");
    }
    if (std::string_view(reinterpret_cast<const char*>(header), 8) != kPipeMagic) {
      close();
      throw FrameSourceError("frame source: bad pipe magic (expected VIVAFRM0)");
    }
    const auto w = read_be32(header + 8);
    const auto h = read_be32(header + 12);
    if (w != static_cast<std::uint32_t>(m.width) || h != static_cast<std::uint32_t>(m.height)) {
      close();
      throw FrameSourceError("frame source: dimension mismatch: pipe declares " + std::to_string(w) + "x" +
                             std::to_string(h) + ", manifest declares " + std::to_string(m.width) + "x" +
                             std::to_string(m.height));
    }
  }
  ~PipeSource() override { close(); }
  PipeSource(const PipeSource&) = delete;
  PipeSource& operator=(const PipeSource&) = delete;

  int width() const override { return manifest_.width; }
  int height() const override { return manifest_.height; }
  bool random_access() const override { return false; }
  std::optional<std::int64_t> frame_count() const override {
    if (eof_) return next_index_;
    return std::nullopt;
  }

  std::optional<Frame> read(std::int64_t index) override {
    if (index < 0) return std::nullopt;
    if (current_ && index == current_index_) return make_frame(index, current_, manifest_.fps);
    if (index < next_index_) {
      throw FrameSourceError("frame source: sequential pipe asked for past frame " + std::to_string(index) +
                             " (next is " + std::to_string(next_index_) + ")");
    }
    while (next_index_ <= index) {
      if (eof_) return std::nullopt;
      std::vector<std::uint8_t> raster(Image::byte_size(manifest_.width, manifest_.height));
      const std::size_t got = std::fread(raster.data(), 1, raster.size(), file_);
      if (got == 0 && std::feof(file_)) {
        eof_ = true;
        return std::nullopt;
      }
      if (got != raster.size()) {
        throw FrameSourceError("frame source: broken pipe: frame " + std::to_string(next_index_) + " truncated");
      }
      if (next_index_ == index) {
        current_ = std::make_shared<const Image>(manifest_.width, manifest_.height, std::move(raster));
        current_index_ = index;
      }
      ++next_index_;
    }
    return make_frame(index, current_, manifest_.fps);
  }

  // Last delivered frame, used by clamp-last once the stream is exhausted.
  std::optional<Frame> last() const {
    if (!current_) return std::nullopt;
    return make_frame(current_index_, current_, manifest_.fps);
  }

 private:
  void close() {
    if (file_ != nullptr && owns_) std::fclose(file_);
    file_ = nullptr;
  }

  ScenarioManifest manifest_;
  std::FILE* file_ = nullptr;
  bool owns_ = true;
  bool eof_ = false;
  std::int64_t next_index_ = 0;
  std::int64_t current_index_ = -1;
  std::shared_ptr<const Image> current_;
};

class SyntheticSource final : public FrameSource {
 public:
  SyntheticSource(const ScenarioManifest& m, int cell, std::int64_t frames)
      : manifest_(m), cell_(cell), frames_(frames) {}

  int width() const override { return manifest_.width; }
  int height() const override { return manifest_.height; }
  bool random_access() const override { return true; }
  std::optional<std::int64_t> frame_count() const override { return frames_; }

  std::optional<Frame> read(std::int64_t index) override {
    if (index < 0 || index >= frames_) return std::nullopt;
    if (!cached_ || cached_index_ != index) {
      cached_ = std::make_shared<const Image>(synthetic_checkerboard(manifest_.width, manifest_.height, cell_, index));
      cached_index_ = index;
    }
    return make_frame(index, cached_, manifest_.fps);
  }

 private:
  ScenarioManifest manifest_;
  int cell_;
  std::int64_t frames_;
  std::shared_ptr<const Image> cached_;
  std::int64_t cached_index_ = -1;
};

// "synthetic:checkerboard?cell=64&frames=300"
std::unique_ptr<FrameSource> open_synthetic(const ScenarioManifest& m, const std::string& spec) {
  const auto q = spec.find('?');
  const std::string pattern = spec.substr(0, q);
  if (pattern != "checkerboard") throw FrameSourceError("frame source: unknown synthetic pattern \"" + pattern + "\"");
  int cell = 64;
  std::int64_t frames = 1;
  if (q != std::string::npos) {
    std::string rest = spec.substr(q + 1);
    std::size_t pos = 0;
    while (pos <= rest.size()) {
      const auto amp = rest.find('&', pos);
      const std::string kv = rest.substr(pos, amp == std::string::npos ? std::string::npos : amp - pos);
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw FrameSourceError("frame source: bad synthetic parameter \"" + kv + "\"");
      const std::string key = kv.substr(0, eq);
      const std::string value = kv.substr(eq + 1);
      std::int64_t n = 0;
      auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), n);
      if (ec != std::errc() || ptr != value.data() + value.size() || n <= 0) {
        throw FrameSourceError("frame source: synthetic parameter \"" + key + "\" must be a positive integer");
      }
      if (key == "cell") {
        cell = static_cast<int>(n);
      } else if (key == "frames") {
        frames = n;
      } else {
        throw FrameSourceError("frame source: unknown synthetic parameter \"" + key + "\"");
      }
      if (amp == std::string::npos) break;
      pos = amp + 1;
    }
  }
  return std::make_unique<SyntheticSource>(m, cell, frames);
}

}  // namespace

Image synthetic_checkerboard(int width, int height, int cell, std::int64_t index) {
  Image img(width, height);
  const auto shift = static_cast<int>(index % (2 * static_cast<std::int64_t>(cell)));
  for (int y = 0; y < height; ++y) {
    std::uint8_t* row = img.row(y);
    const int cy = y / cell;
    const auto gy = static_cast<std::uint8_t>((static_cast<std::int64_t>(y) * 255) / std::max(1, height - 1));
    for (int x = 0; x < width; ++x) {
      const bool light = (((x + shift) / cell + cy) & 1) == 0;
      const int v = light ? 220 : 35;
      const auto gx = static_cast<int>((static_cast<std::int64_t>(x) * 255) / std::max(1, width - 1));
      row[3 * x + 0] = static_cast<std::uint8_t>(v);
      row[3 * x + 1] = static_cast<std::uint8_t>((v + gx) / 2);
      row[3 * x + 2] = static_cast<std::uint8_t>((v + gy) / 2);
    }
  }
  return img;
}

std::string raw_pipe_header(int width, int height) {
  std::string h(kPipeMagic, 8);
  for (std::uint32_t v : {static_cast<std::uint32_t>(width), static_cast<std::uint32_t>(height)}) {
    h.push_back(static_cast<char>((v >> 24) & 0xFF));
    h.push_back(static_cast<char>((v >> 16) & 0xFF));
    h.push_back(static_cast<char>((v >> 8) & 0xFF));
    h.push_back(static_cast<char>(v & 0xFF));
  }
  return h;
}

std::unique_ptr<FrameSource> open_frame_source(const ScenarioManifest& m) {
  const std::string& loc = m.frame_source;
  if (starts_with(loc, "synthetic:")) return open_synthetic(m, loc.substr(10));
  if (starts_with(loc, "pipe:")) {
    if (m.end_policy == EndPolicy::loop) {
      throw FrameSourceError("frame source: end_policy loop requires a random-access source, not a pipe");
    }
    return std::make_unique<PipeSource>(m, loc.substr(5));
  }
  if (starts_with(loc, "dir:")) return std::make_unique<DirectorySource>(m, resolve(m, loc.substr(4)));
  return std::make_unique<DirectorySource>(m, resolve(m, loc));
}

std::int64_t frame_index_for_time(double sim_time_s, double fps) {
  if (!(sim_time_s >= 0.0)) throw std::invalid_argument("frame_at: sim_time_s must be >= 0");
  return static_cast<std::int64_t>(std::floor(sim_time_s * fps + 1e-9));
}

std::optional<Frame> frame_by_index(FrameSource& source, const ScenarioManifest& m, std::int64_t logical) {
  if (logical < 0) throw std::invalid_argument("frame_at: negative frame index");
  const auto count = source.frame_count();
  if (count && *count == 0) throw FrameSourceError("frame source: stream contained no frames");
  if (count && logical >= *count) {
    switch (m.end_policy) {
      case EndPolicy::terminate:
        return std::nullopt;
      case EndPolicy::loop:
        return source.read(logical % *count);
      case EndPolicy::clamp_last:
        if (auto* pipe = dynamic_cast<PipeSource*>(&source)) return pipe->last();
        return source.read(*count - 1);
    }
  }
  auto frame = source.read(logical);
  if (frame) return frame;
  // A sequential stream just hit its end; re-apply the policy with the now-known count.
  if (!source.frame_count()) throw FrameSourceError("frame source: read failed for frame " + std::to_string(logical));
  return frame_by_index(source, m, logical);
}

std::optional<std::int64_t> physical_frame_index(std::int64_t logical, std::int64_t count, EndPolicy policy) {
  if (logical < 0) throw std::invalid_argument("frame index must be >= 0");
  if (count <= 0) throw FrameSourceError("frame source: stream contained no frames");
  if (logical < count) return logical;
  switch (policy) {
    case EndPolicy::terminate: return std::nullopt;
    case EndPolicy::loop: return logical % count;
    case EndPolicy::clamp_last: return count - 1;
  }
  return std::nullopt;
}

std::optional<Frame> frame_at(FrameSource& source, const ScenarioManifest& m, double sim_time_s) {
  return frame_by_index(source, m, frame_index_for_time(sim_time_s, m.fps));
}

}  // namespace viva::ingest
