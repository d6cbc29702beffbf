#pragma once

#include <atomic>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "xseg/image.hpp"
#include "xseg/rng.hpp"

namespace xseg::test {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    const auto stamp = std::chrono::steady_clock::now().time_since_epoch().count();
    path_ = std::filesystem::temp_directory_path() /
            ("xseg_" + tag + "_" + std::to_string(stamp) + "_" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline std::vector<ChannelRole> first_roles(int channels) {
  const std::vector<ChannelRole> all{ChannelRole::high, ChannelRole::low, ChannelRole::effective_z,
                                     ChannelRole::pseudo_r, ChannelRole::pseudo_g, ChannelRole::pseudo_b};
  return {all.begin(), all.begin() + channels};
}

/// Image whose plane c holds fn(c, x, y).
template <typename F>
MultiChannelImage make_image(int w, int h, int channels, F fn) {
  std::vector<Plane> planes;
  for (ChannelRole role : first_roles(channels)) {
    const int c = static_cast<int>(planes.size());
    Plane p{role, std::vector<float>(static_cast<std::size_t>(w) * h)};
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) p.samples[static_cast<std::size_t>(y) * w + x] = static_cast<float>(fn(c, x, y));
    planes.push_back(std::move(p));
  }
  return MultiChannelImage(w, h, std::move(planes));
}

inline MultiChannelImage constant_image(int w, int h, int channels, double v) {
  return make_image(w, h, channels, [v](int, int, int) { return v; });
}

inline MultiChannelImage random_image(int w, int h, int channels, Rng& rng) {
  return make_image(w, h, channels, [&rng](int, int, int) { return rng.uniform(); });
}

inline std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace xseg::test
