#include "traffic/image.hpp"

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <string>

#include <jpeglib.h>

namespace traffic {

Image::Image(int width, int height, std::uint8_t fill) : width_(width), height_(height) {
    if (width <= 0 || height <= 0) throw InvalidImage("image dimensions must be positive");
    pixels_.assign(static_cast<std::size_t>(width) * static_cast<std::size_t>(height) * 3, fill);
}

Image::Image(int width, int height, std::vector<std::uint8_t> rgb)
    : width_(width), height_(height), pixels_(std::move(rgb)) {
    if (width <= 0 || height <= 0) throw InvalidImage("image dimensions must be positive");
    if (pixels_.size() != static_cast<std::size_t>(width) * static_cast<std::size_t>(height) * 3)
        throw InvalidImage("pixel buffer size does not match dimensions");
}

void Image::fill_rect(int x, int y, int w, int h, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
    int x1 = std::min(width_, x + w);
    int y1 = std::min(height_, y + h);
    for (int yy = std::max(0, y); yy < y1; ++yy) {
        for (int xx = std::max(0, x); xx < x1; ++xx) {
            auto* p = pixel(xx, yy);
            p[0] = r;
            p[1] = g;
            p[2] = b;
        }
    }
}

namespace {

struct JpegErrorManager {
    jpeg_error_mgr pub;
    std::jmp_buf jump;
    char message[JMSG_LENGTH_MAX];
};

void on_jpeg_error(j_common_ptr cinfo) {
    auto* err = reinterpret_cast<JpegErrorManager*>(cinfo->err);
    (*cinfo->err->format_message)(cinfo, err->message);
    std::longjmp(err->jump, 1);
}

void silence_jpeg_warning(j_common_ptr, int) {}

}  // namespace

std::vector<std::uint8_t> encode_jpeg(const Image& image, int quality) {
    if (image.empty()) throw InvalidImage("cannot encode an empty image");

    jpeg_compress_struct cinfo{};
    JpegErrorManager jerr{};
    cinfo.err = jpeg_std_error(&jerr.pub);
    jerr.pub.error_exit = on_jpeg_error;
    unsigned char* buffer = nullptr;
    unsigned long size = 0;

    if (setjmp(jerr.jump)) {
        jpeg_destroy_compress(&cinfo);
        std::free(buffer);
        throw InvalidImage(std::string("jpeg encode failed: ") + jerr.message);
    }

    jpeg_create_compress(&cinfo);
    jpeg_mem_dest(&cinfo, &buffer, &size);
    cinfo.image_width = static_cast<JDIMENSION>(image.width());
    cinfo.image_height = static_cast<JDIMENSION>(image.height());
    cinfo.input_components = 3;
    cinfo.in_color_space = JCS_RGB;
    jpeg_set_defaults(&cinfo);
    jpeg_set_quality(&cinfo, quality, TRUE);
    jpeg_start_compress(&cinfo, TRUE);
    while (cinfo.next_scanline < cinfo.image_height) {
        auto* row = const_cast<JSAMPLE*>(image.pixel(0, static_cast<int>(cinfo.next_scanline)));
        jpeg_write_scanlines(&cinfo, &row, 1);
    }
    jpeg_finish_compress(&cinfo);
    jpeg_destroy_compress(&cinfo);

    std::vector<std::uint8_t> out(buffer, buffer + size);
    std::free(buffer);
    return out;
}

Image decode_jpeg(std::span<const std::uint8_t> bytes) {
    if (bytes.empty()) throw InvalidImage("empty jpeg payload");

    jpeg_decompress_struct cinfo{};
    JpegErrorManager jerr{};
    cinfo.err = jpeg_std_error(&jerr.pub);
    jerr.pub.error_exit = on_jpeg_error;
    jerr.pub.emit_message = silence_jpeg_warning;
    std::vector<std::uint8_t> rgb;
    int width = 0;
    int height = 0;

    if (setjmp(jerr.jump)) {
        jpeg_destroy_decompress(&cinfo);
        throw InvalidImage(std::string("jpeg decode failed: ") + jerr.message);
    }

    jpeg_create_decompress(&cinfo);
    jpeg_mem_src(&cinfo, bytes.data(), static_cast<unsigned long>(bytes.size()));
    jpeg_read_header(&cinfo, TRUE);
    cinfo.out_color_space = JCS_RGB;
    jpeg_start_decompress(&cinfo);
    width = static_cast<int>(cinfo.output_width);
    height = static_cast<int>(cinfo.output_height);
    rgb.resize(static_cast<std::size_t>(width) * static_cast<std::size_t>(height) * 3);
    while (cinfo.output_scanline < cinfo.output_height) {
        JSAMPROW row = rgb.data() + static_cast<std::size_t>(cinfo.output_scanline) * width * 3;
        jpeg_read_scanlines(&cinfo, &row, 1);
    }
    jpeg_finish_decompress(&cinfo);
    jpeg_destroy_decompress(&cinfo);
    return Image{width, height, std::move(rgb)};
}

namespace {

Image resize_bilinear(const Image& src, int width, int height) {
    if (width == src.width() && height == src.height()) return src;
    Image out{width, height};
    const double sx = static_cast<double>(src.width()) / width;
    const double sy = static_cast<double>(src.height()) / height;
    for (int y = 0; y < height; ++y) {
        double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(src.height() - 1));
        int y0 = static_cast<int>(fy);
        int y1 = std::min(y0 + 1, src.height() - 1);
        double wy = fy - y0;
        for (int x = 0; x < width; ++x) {
            double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(src.width() - 1));
            int x0 = static_cast<int>(fx);
            int x1 = std::min(x0 + 1, src.width() - 1);
            double wx = fx - x0;
            auto* o = out.pixel(x, y);
            for (int c = 0; c < 3; ++c) {
                double top = src.pixel(x0, y0)[c] * (1 - wx) + src.pixel(x1, y0)[c] * wx;
                double bottom = src.pixel(x0, y1)[c] * (1 - wx) + src.pixel(x1, y1)[c] * wx;
                o[c] = static_cast<std::uint8_t>(std::lround(top * (1 - wy) + bottom * wy));
            }
        }
    }
    return out;
}

}  // namespace

Letterboxed letterbox(const Image& image, int target) {
    if (image.empty()) throw InvalidImage("cannot letterbox an empty image");
    if (target <= 0) throw InvalidImage("letterbox target must be positive");

    LetterboxInfo info;
    info.scale = static_cast<double>(target) / std::max(image.width(), image.height());
    info.resized_width = std::clamp(static_cast<int>(std::lround(image.width() * info.scale)), 1, target);
    info.resized_height = std::clamp(static_cast<int>(std::lround(image.height() * info.scale)), 1, target);
    info.pad_x = (target - info.resized_width) / 2;
    info.pad_y = (target - info.resized_height) / 2;

    Image resized = resize_bilinear(image, info.resized_width, info.resized_height);
    Image out{target, target, kLetterboxPad};
    for (int y = 0; y < info.resized_height; ++y)
        std::copy_n(resized.pixel(0, y), static_cast<std::size_t>(info.resized_width) * 3,
                    out.pixel(info.pad_x, info.pad_y + y));
    return {std::move(out), info};
}

namespace pattern {

namespace {

std::uint8_t checksum(const ClassCounts& counts) {
    unsigned sum = 0x5A;
    for (auto v : counts.values) sum = (sum * 31u + std::min<std::uint32_t>(v, 255)) & 0xFFu;
    return static_cast<std::uint8_t>(sum);
}

std::vector<bool> header_bits(const ClassCounts& counts) {
    std::vector<std::uint8_t> bytes{kMagic};
    for (auto v : counts.values) bytes.push_back(static_cast<std::uint8_t>(std::min<std::uint32_t>(v, 255)));
    bytes.push_back(checksum(counts));
    std::vector<bool> bits;
    for (auto b : bytes)
        for (int i = 7; i >= 0; --i) bits.push_back(((b >> i) & 1) != 0);
    return bits;
}

int grid_cols(const Image& image) { return image.width() / kBlock; }

bool fits(const Image& image) {
    int cols = grid_cols(image);
    if (cols == 0) return false;
    int rows = (kBits + cols - 1) / cols;
    return rows * kBlock <= image.height();
}

}  // namespace

void encode(Image& image, const ClassCounts& counts) {
    if (!fits(image)) throw InvalidImage("image too small for the count header");
    int cols = grid_cols(image);
    auto bits = header_bits(counts);
    for (int i = 0; i < kBits; ++i) {
        std::uint8_t v = bits[static_cast<std::size_t>(i)] ? 255 : 0;
        image.fill_rect((i % cols) * kBlock, (i / cols) * kBlock, kBlock, kBlock, v, v, v);
    }
}

std::optional<ClassCounts> decode(const Image& image) {
    if (image.empty() || !fits(image)) return std::nullopt;
    int cols = grid_cols(image);
    std::vector<std::uint8_t> bytes((kBits + 7) / 8, 0);
    for (int i = 0; i < kBits; ++i) {
        int bx = (i % cols) * kBlock;
        int by = (i / cols) * kBlock;
        // Sample the block interior; edges carry JPEG ringing.
        unsigned sum = 0;
        for (int y = by + 4; y < by + 12; ++y)
            for (int x = bx + 4; x < bx + 12; ++x) {
                const auto* p = image.pixel(x, y);
                sum += (p[0] + p[1] + p[2]) / 3u;
            }
        if (sum / 64 >= 128) bytes[static_cast<std::size_t>(i / 8)] |= static_cast<std::uint8_t>(1u << (7 - i % 8));
    }
    if (bytes[0] != kMagic) return std::nullopt;
    ClassCounts counts;
    for (std::size_t c = 0; c < kVehicleClassCount; ++c) counts.values[c] = bytes[1 + c];
    if (bytes.back() != checksum(counts)) return std::nullopt;
    return counts;
}

Image render_frame(int width, int height, const ClassCounts& counts) {
    Image image{width, height, 96};
    // Road band below the header.
    image.fill_rect(0, height / 2, width, height / 3, 60, 60, 64);
    encode(image, counts);
    return image;
}

}  // namespace pattern

}  // namespace traffic
