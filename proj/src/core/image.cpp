#include "xseg/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "json.hpp"
#include "xseg/error.hpp"
#include "xseg/png_io.hpp"

namespace xseg {

namespace {

constexpr std::pair<ChannelRole, std::string_view> kRoleNames[] = {
    {ChannelRole::pseudo_r, "pseudo_r"}, {ChannelRole::pseudo_g, "pseudo_g"},
    {ChannelRole::pseudo_b, "pseudo_b"}, {ChannelRole::high, "high"},
    {ChannelRole::low, "low"},           {ChannelRole::effective_z, "effective_z"},
};

constexpr std::pair<ChannelMode, std::string_view> kModeNames[] = {
    {ChannelMode::pseudo, "pseudo"}, {ChannelMode::h, "h"},     {ChannelMode::l, "l"},
    {ChannelMode::z, "z"},           {ChannelMode::hlz, "hlz"},
};

std::uint32_t max_code(int bit_depth) {
  if (bit_depth != 8 && bit_depth != 16)
    fail(ErrorCode::invalid_argument, "bit depth must be 8 or 16, got " + std::to_string(bit_depth));
  return (1u << bit_depth) - 1u;
}

ObjectMask load_mask(const std::filesystem::path& path, int width, int height) {
  const png::GrayImage gray = png::read_gray(path);
  if (gray.width != width || gray.height != height)
    fail(ErrorCode::data, "mask '" + path.string() + "' dimensions do not match the image");
  std::vector<std::uint8_t> bits(gray.samples.size());
  for (std::size_t i = 0; i < bits.size(); ++i) bits[i] = gray.samples[i] != 0 ? 1 : 0;
  return ObjectMask(width, height, std::move(bits));
}

void write_mask(const std::filesystem::path& path, const ObjectMask& mask) {
  png::GrayImage gray{mask.width, mask.height, 8, {}};
  gray.samples.resize(mask.bits.size());
  for (std::size_t i = 0; i < mask.bits.size(); ++i) gray.samples[i] = mask.bits[i] ? 255 : 0;
  png::write_gray(path, gray);
}

nlohmann::json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::io, "cannot read '" + path.string() + "'");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::data, "malformed JSON in '" + path.string() + "': " + e.what());
  }
}

struct Manifest {
  int width = 0;
  int height = 0;
  std::vector<ManifestChannel> channels;
  std::optional<std::string> object_mask;
  std::optional<std::string> anomaly_mask;
};

Manifest parse_manifest(const std::filesystem::path& dir) {
  const nlohmann::json j = read_json(dir / "manifest.json");
  Manifest m;
  try {
    m.width = j.at("width").get<int>();
    m.height = j.at("height").get<int>();
    std::set<ChannelRole> seen;
    for (const auto& c : j.at("channels")) {
      ManifestChannel ch{parse_channel_role(c.at("role").get<std::string>()),
                         c.at("file").get<std::string>(), c.at("bit_depth").get<int>()};
      if (!seen.insert(ch.role).second)
        fail(ErrorCode::data, "duplicate channel role '" + std::string(to_string(ch.role)) + "'");
      m.channels.push_back(std::move(ch));
    }
    if (j.contains("masks")) {
      const auto& masks = j.at("masks");
      if (masks.contains("object") && !masks.at("object").is_null())
        m.object_mask = masks.at("object").get<std::string>();
      if (masks.contains("anomaly") && !masks.at("anomaly").is_null())
        m.anomaly_mask = masks.at("anomaly").get<std::string>();
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::data, "invalid manifest in '" + dir.string() + "': " + e.what());
  }
  if (m.channels.empty()) fail(ErrorCode::data, "manifest lists no channels");
  if (m.width <= 0 || m.height <= 0) fail(ErrorCode::data, "manifest dimensions must be positive");
  return m;
}

}  // namespace

std::string_view to_string(ChannelRole role) {
  for (const auto& [r, name] : kRoleNames)
    if (r == role) return name;
  return "unknown";
}

std::string_view to_string(ChannelMode mode) {
  for (const auto& [m, name] : kModeNames)
    if (m == mode) return name;
  return "unknown";
}

ChannelRole parse_channel_role(std::string_view text) {
  for (const auto& [r, name] : kRoleNames)
    if (name == text) return r;
  fail(ErrorCode::data, "unknown channel role '" + std::string(text) + "'");
}

ChannelMode parse_channel_mode(std::string_view text) {
  for (const auto& [m, name] : kModeNames)
    if (name == text) return m;
  fail(ErrorCode::invalid_argument, "unknown channel mode '" + std::string(text) + "'");
}

std::vector<ChannelRole> roles_for(ChannelMode mode) {
  switch (mode) {
    case ChannelMode::pseudo:
      return {ChannelRole::pseudo_r, ChannelRole::pseudo_g, ChannelRole::pseudo_b};
    case ChannelMode::h: return {ChannelRole::high};
    case ChannelMode::l: return {ChannelRole::low};
    case ChannelMode::z: return {ChannelRole::effective_z};
    case ChannelMode::hlz: return {ChannelRole::high, ChannelRole::low, ChannelRole::effective_z};
  }
  return {};
}

MultiChannelImage::MultiChannelImage(int width, int height, std::vector<Plane> planes)
    : width_(width), height_(height), planes_(std::move(planes)) {
  if (width_ <= 0 || height_ <= 0) fail(ErrorCode::data, "image dimensions must be positive");
  if (planes_.empty()) fail(ErrorCode::data, "image needs at least one plane");
  std::set<ChannelRole> seen;
  for (const Plane& p : planes_) {
    if (!seen.insert(p.role).second)
      fail(ErrorCode::data, "duplicate channel role '" + std::string(to_string(p.role)) + "'");
    if (p.samples.size() != pixel_count())
      fail(ErrorCode::data, "dimension mismatch: plane '" + std::string(to_string(p.role)) +
                                "' has " + std::to_string(p.samples.size()) + " samples");
    for (float v : p.samples)
      if (!(v >= 0.0f && v <= 1.0f))
        fail(ErrorCode::data, "intensity outside [0,1] in plane '" +
                                  std::string(to_string(p.role)) + "'");
  }
}

std::optional<std::size_t> MultiChannelImage::find(ChannelRole role) const {
  for (std::size_t i = 0; i < planes_.size(); ++i)
    if (planes_[i].role == role) return i;
  return std::nullopt;
}

ObjectMask::ObjectMask(int w, int h, std::vector<std::uint8_t> b)
    : width(w), height(h), bits(std::move(b)) {
  if (bits.size() != static_cast<std::size_t>(w) * static_cast<std::size_t>(h))
    fail(ErrorCode::data, "mask size does not match its dimensions");
}

std::size_t ObjectMask::count() const {
  return static_cast<std::size_t>(std::count_if(bits.begin(), bits.end(), [](auto b) { return b != 0; }));
}

float normalize_sample(std::uint32_t raw, int bit_depth) {
  const std::uint32_t top = max_code(bit_depth);
  if (raw > top)
    fail(ErrorCode::data, "sample " + std::to_string(raw) + " exceeds bit depth " +
                              std::to_string(bit_depth));
  return static_cast<float>(static_cast<double>(raw) / static_cast<double>(top));
}

std::vector<float> normalize_plane(std::span<const std::uint16_t> raw, int bit_depth) {
  std::vector<float> out(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) out[i] = normalize_sample(raw[i], bit_depth);
  return out;
}

std::vector<std::uint16_t> quantize_plane(std::span<const float> samples, int bit_depth) {
  const double top = max_code(bit_depth);
  std::vector<std::uint16_t> out(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const double v = std::clamp(static_cast<double>(samples[i]), 0.0, 1.0);
    out[i] = static_cast<std::uint16_t>(std::lround(v * top));
  }
  return out;
}

float quantize_sample(float value, int bit_depth) {
  const double top = max_code(bit_depth);
  const double v = std::clamp(static_cast<double>(value), 0.0, 1.0);
  return normalize_sample(static_cast<std::uint32_t>(std::lround(v * top)), bit_depth);
}

int default_bit_depth(ChannelRole role) {
  switch (role) {
    case ChannelRole::pseudo_r:
    case ChannelRole::pseudo_g:
    case ChannelRole::pseudo_b: return 8;
    default: return 16;
  }
}

Sample load_sample(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir))
    fail(ErrorCode::io, "manifest directory '" + dir.string() + "' does not exist");
  const Manifest m = parse_manifest(dir);
  std::vector<Plane> planes;
  planes.reserve(m.channels.size());
  for (const ManifestChannel& ch : m.channels) {
    const png::GrayImage gray = png::read_gray(dir / ch.file);
    if (gray.width != m.width || gray.height != m.height)
      fail(ErrorCode::data, "dimension mismatch: '" + ch.file + "' is " +
                                std::to_string(gray.width) + "x" + std::to_string(gray.height) +
                                ", manifest says " + std::to_string(m.width) + "x" +
                                std::to_string(m.height));
    planes.push_back({ch.role, normalize_plane(gray.samples, ch.bit_depth)});
  }
  Sample s{MultiChannelImage(m.width, m.height, std::move(planes)), std::nullopt, std::nullopt};
  if (m.object_mask) s.object_mask = load_mask(dir / *m.object_mask, m.width, m.height);
  if (m.anomaly_mask) s.anomaly_mask = load_mask(dir / *m.anomaly_mask, m.width, m.height);
  return s;
}

MultiChannelImage load_manifest(const std::filesystem::path& dir) { return load_sample(dir).image; }

void write_manifest(const std::filesystem::path& dir, const MultiChannelImage& image,
                    const ObjectMask* object_mask, const ObjectMask* anomaly_mask,
                    std::optional<int> bit_depth_override) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) fail(ErrorCode::io, "cannot create '" + dir.string() + "': " + ec.message());

  nlohmann::json j;
  j["width"] = image.width();
  j["height"] = image.height();
  j["channels"] = nlohmann::json::array();
  for (const Plane& p : image.planes()) {
    const int depth = bit_depth_override.value_or(default_bit_depth(p.role));
    const std::string file = std::string(to_string(p.role)) + ".png";
    png::write_gray(dir / file, {image.width(), image.height(), depth, quantize_plane(p.samples, depth)});
    j["channels"].push_back({{"role", to_string(p.role)}, {"file", file}, {"bit_depth", depth}});
  }
  nlohmann::json masks = nlohmann::json::object();
  if (object_mask) {
    write_mask(dir / "object_mask.png", *object_mask);
    masks["object"] = "object_mask.png";
  }
  if (anomaly_mask) {
    write_mask(dir / "anomaly_mask.png", *anomaly_mask);
    masks["anomaly"] = "anomaly_mask.png";
  }
  j["masks"] = masks;

  std::ofstream out(dir / "manifest.json");
  if (!out) fail(ErrorCode::io, "cannot write manifest in '" + dir.string() + "'");
  out << j.dump(2) << '\n';
}

MultiChannelImage select_channels(const MultiChannelImage& image, ChannelMode mode) {
  std::vector<Plane> planes;
  for (ChannelRole role : roles_for(mode)) {
    const auto index = image.find(role);
    if (!index)
      fail(ErrorCode::data, "required plane absent: mode '" + std::string(to_string(mode)) +
                                "' needs '" + std::string(to_string(role)) + "'");
    planes.push_back(image.plane(*index));
  }
  return MultiChannelImage(image.width(), image.height(), std::move(planes));
}

std::pair<MultiChannelImage, Offset> apply_object_mask(const MultiChannelImage& image,
                                                       const ObjectMask& mask) {
  if (mask.width != image.width() || mask.height != image.height())
    fail(ErrorCode::data, "mask dimension mismatch");
  int x0 = mask.width, y0 = mask.height, x1 = -1, y1 = -1;
  for (int y = 0; y < mask.height; ++y)
    for (int x = 0; x < mask.width; ++x)
      if (mask.at(x, y)) {
        x0 = std::min(x0, x);
        y0 = std::min(y0, y);
        x1 = std::max(x1, x);
        y1 = std::max(y1, y);
      }
  if (x1 < 0) fail(ErrorCode::data, "empty mask");

  const int w = x1 - x0 + 1;
  const int h = y1 - y0 + 1;
  std::vector<Plane> planes;
  for (const Plane& p : image.planes()) {
    Plane out{p.role, std::vector<float>(static_cast<std::size_t>(w) * h, 0.0f)};
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        if (mask.at(x0 + x, y0 + y))
          out.samples[static_cast<std::size_t>(y) * w + x] =
              p.samples[static_cast<std::size_t>(y0 + y) * image.width() + x0 + x];
    planes.push_back(std::move(out));
  }
  return {MultiChannelImage(w, h, std::move(planes)), Offset{x0, y0}};
}

ObjectMask crop_mask(const ObjectMask& mask, Offset offset, int width, int height) {
  std::vector<std::uint8_t> bits(static_cast<std::size_t>(width) * height);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x)
      bits[static_cast<std::size_t>(y) * width + x] = mask.at(offset.x + x, offset.y + y) ? 1 : 0;
  return ObjectMask(width, height, std::move(bits));
}

}  // namespace xseg
