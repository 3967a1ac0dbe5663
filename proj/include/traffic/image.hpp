#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "traffic/core.hpp"

namespace traffic {

class InvalidImage : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Interleaved 8-bit RGB pixel buffer.
class Image {
public:
    Image() = default;
    /// Throws InvalidImage on a zero dimension.
    Image(int width, int height, std::uint8_t fill = 0);
    Image(int width, int height, std::vector<std::uint8_t> rgb);

    int width() const noexcept { return width_; }
    int height() const noexcept { return height_; }
    bool empty() const noexcept { return pixels_.empty(); }

    std::uint8_t* pixel(int x, int y) { return &pixels_[offset(x, y)]; }
    const std::uint8_t* pixel(int x, int y) const { return &pixels_[offset(x, y)]; }
    std::span<const std::uint8_t> data() const noexcept { return pixels_; }

    void fill_rect(int x, int y, int w, int h, std::uint8_t r, std::uint8_t g, std::uint8_t b);

    bool operator==(const Image&) const = default;

private:
    std::size_t offset(int x, int y) const {
        return (static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) +
                static_cast<std::size_t>(x)) * 3;
    }

    int width_ = 0;
    int height_ = 0;
    std::vector<std::uint8_t> pixels_;
};

std::vector<std::uint8_t> encode_jpeg(const Image& image, int quality = 85);
/// Throws InvalidImage when the bytes are not a decodable JPEG.
Image decode_jpeg(std::span<const std::uint8_t> bytes);

inline constexpr int kDetectorInputSize = 352;
inline constexpr std::uint8_t kLetterboxPad = 114;

struct LetterboxInfo {
    double scale = 1.0;
    int pad_x = 0;  // left
    int pad_y = 0;  // top
    int resized_width = 0;
    int resized_height = 0;

    /// Maps a point in the letterboxed image back to source coordinates.
    std::pair<double, double> to_source(double x, double y) const {
        return {(x - pad_x) / scale, (y - pad_y) / scale};
    }
    std::pair<double, double> to_letterbox(double x, double y) const {
        return {x * scale + pad_x, y * scale + pad_y};
    }
};

struct Letterboxed {
    Image image;
    LetterboxInfo info;
};

/// Aspect-preserving resize of the longest side to `target`, then symmetric gray padding.
Letterboxed letterbox(const Image& image, int target = kDetectorInputSize);

/// Count header rendered as 16x16 black/white blocks so it survives JPEG.
namespace pattern {

inline constexpr int kBlock = 16;
inline constexpr std::uint8_t kMagic = 0xA5;
inline constexpr int kBits = 8 * (1 + kVehicleClassCount + 1);

/// Counts are clamped to [0, 255]. Throws InvalidImage if the image is too small for the header.
void encode(Image& image, const ClassCounts& counts);
/// nullopt when the header is absent or its checksum fails.
std::optional<ClassCounts> decode(const Image& image);

/// Synthetic camera frame: gray scene with the count header.
Image render_frame(int width, int height, const ClassCounts& counts);

}  // namespace pattern

}  // namespace traffic
