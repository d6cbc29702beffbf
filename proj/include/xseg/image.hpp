#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace xseg {

enum class ChannelRole { pseudo_r, pseudo_g, pseudo_b, high, low, effective_z };

enum class ChannelMode { pseudo, h, l, z, hlz };

std::string_view to_string(ChannelRole role);
std::string_view to_string(ChannelMode mode);
ChannelRole parse_channel_role(std::string_view text);
ChannelMode parse_channel_mode(std::string_view text);

/// Roles a mode selects, in output order.
std::vector<ChannelRole> roles_for(ChannelMode mode);

struct Plane {
  ChannelRole role;
  std::vector<float> samples;  // row-major, width*height
};

/// Width x height planes of intensities in [0,1], each tagged with a
/// distinct channel role. Immutable once constructed.
class MultiChannelImage {
 public:
  MultiChannelImage(int width, int height, std::vector<Plane> planes);

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  std::size_t pixel_count() const noexcept {
    return static_cast<std::size_t>(width_) * static_cast<std::size_t>(height_);
  }
  std::size_t plane_count() const noexcept { return planes_.size(); }

  const Plane& plane(std::size_t i) const { return planes_.at(i); }
  std::span<const float> samples(std::size_t i) const { return planes_.at(i).samples; }
  std::optional<std::size_t> find(ChannelRole role) const;

  float at(std::size_t plane, int x, int y) const {
    return planes_[plane].samples[static_cast<std::size_t>(y) * width_ + x];
  }

  const std::vector<Plane>& planes() const noexcept { return planes_; }

 private:
  int width_;
  int height_;
  std::vector<Plane> planes_;
};

/// Binary plane; 1 marks pixels inside the object.
struct ObjectMask {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> bits;

  ObjectMask() = default;
  ObjectMask(int w, int h, std::vector<std::uint8_t> b);
  static ObjectMask empty(int w, int h) {
    return ObjectMask(w, h, std::vector<std::uint8_t>(static_cast<std::size_t>(w) * h, 0));
  }

  bool at(int x, int y) const { return bits[static_cast<std::size_t>(y) * width + x] != 0; }
  std::size_t count() const;
};

/// An image with the optional ground-truth masks named in its manifest.
struct Sample {
  MultiChannelImage image;
  std::optional<ObjectMask> object_mask;
  std::optional<ObjectMask> anomaly_mask;
};

struct ManifestChannel {
  ChannelRole role;
  std::string file;
  int bit_depth;
};

/// out = raw / (2^bit_depth - 1). Throws on samples outside the bit depth.
std::vector<float> normalize_plane(std::span<const std::uint16_t> raw, int bit_depth);
float normalize_sample(std::uint32_t raw, int bit_depth);
/// Inverse of normalize_plane; rounds to the nearest code.
std::vector<std::uint16_t> quantize_plane(std::span<const float> samples, int bit_depth);
/// Snaps a value to the grid normalize_plane produces for the given depth.
float quantize_sample(float value, int bit_depth);

MultiChannelImage load_manifest(const std::filesystem::path& dir);
Sample load_sample(const std::filesystem::path& dir);

/// Writes manifest.json plus one PNG per plane (and masks when given).
/// Pseudo planes default to 8 bits, the rest to 16 bits.
void write_manifest(const std::filesystem::path& dir, const MultiChannelImage& image,
                    const ObjectMask* object_mask = nullptr,
                    const ObjectMask* anomaly_mask = nullptr,
                    std::optional<int> bit_depth_override = std::nullopt);

int default_bit_depth(ChannelRole role);

MultiChannelImage select_channels(const MultiChannelImage& image, ChannelMode mode);

struct Offset {
  int x = 0;
  int y = 0;
};

/// Tight bounding-box crop of the mask region with outside-mask pixels zeroed.
std::pair<MultiChannelImage, Offset> apply_object_mask(const MultiChannelImage& image,
                                                       const ObjectMask& mask);

/// Crops a mask with the same rectangle apply_object_mask used.
ObjectMask crop_mask(const ObjectMask& mask, Offset offset, int width, int height);

}  // namespace xseg
