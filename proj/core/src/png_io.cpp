#include "nextpoi/png_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>

#include "nextpoi/common.hpp"

namespace nextpoi {

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

} // namespace

RawImage read_png_rgb8(const std::string& path) {
    FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw IoError("cannot open PNG file: " + path);

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw IoError("libpng read struct allocation failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw IoError("libpng info struct allocation failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw ParseError("corrupt PNG file: " + path);
    }

    png_init_io(png, fp.get());
    png_read_info(png, info);

    const png_uint_32 width = png_get_image_width(png, info);
    const png_uint_32 height = png_get_image_height(png, info);
    const png_byte color_type = png_get_color_type(png, info);
    const png_byte bit_depth = png_get_bit_depth(png, info);

    if (bit_depth == 16) png_set_strip_16(png);
    if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    if (color_type == PNG_COLOR_TYPE_GRAY || color_type == PNG_COLOR_TYPE_GRAY_ALPHA)
        png_set_gray_to_rgb(png);
    png_set_strip_alpha(png);
    png_read_update_info(png, info);

    RawImage img;
    img.width = static_cast<int>(width);
    img.height = static_cast<int>(height);
    img.rgb.resize(size_t(width) * height * 3);

    std::vector<png_bytep> rows(height);
    for (png_uint_32 y = 0; y < height; ++y) rows[y] = img.rgb.data() + size_t(y) * width * 3;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return img;
}

void write_png_rgb8(const std::string& path, const RawImage& img) {
    FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw IoError("cannot create PNG file: " + path);

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw IoError("libpng write struct allocation failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw IoError("libpng info struct allocation failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoError("PNG write failed: " + path);
    }

    png_init_io(png, fp.get());
    png_set_compression_level(png, 6);
    png_set_IHDR(png, info, img.width, img.height, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);

    std::vector<png_const_bytep> rows(img.height);
    for (int y = 0; y < img.height; ++y) rows[y] = img.rgb.data() + size_t(y) * img.width * 3;
    png_write_image(png, const_cast<png_bytepp>(rows.data()));
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

TileImage tile_from_raw(const RawImage& img, int64_t tile_id, bool* resampled) {
    if (img.width <= 0 || img.height <= 0 || img.rgb.size() != size_t(img.width) * img.height * 3)
        throw ParseError("raw image has inconsistent dimensions");

    TileImage t;
    t.tile_id = tile_id;
    t.pixels.resize(TileImage::pixel_count());
    const int N = TileImage::kSize;

    if (img.width == N && img.height == N) {
        if (resampled) *resampled = false;
        for (size_t i = 0; i < t.pixels.size(); ++i)
            t.pixels[i] = float(img.rgb[i]) / 255.0f;
        return t;
    }

    if (resampled) *resampled = true;
    // Bilinear resample; preserves constant images exactly.
    for (int y = 0; y < N; ++y) {
        const double sy = (double(y) + 0.5) * img.height / N - 0.5;
        const int y0 = std::clamp(int(std::floor(sy)), 0, img.height - 1);
        const int y1 = std::min(y0 + 1, img.height - 1);
        const double fy = std::clamp(sy - y0, 0.0, 1.0);
        for (int x = 0; x < N; ++x) {
            const double sx = (double(x) + 0.5) * img.width / N - 0.5;
            const int x0 = std::clamp(int(std::floor(sx)), 0, img.width - 1);
            const int x1 = std::min(x0 + 1, img.width - 1);
            const double fx = std::clamp(sx - x0, 0.0, 1.0);
            for (int c = 0; c < 3; ++c) {
                const double v00 = img.rgb[(size_t(y0) * img.width + x0) * 3 + c];
                const double v01 = img.rgb[(size_t(y0) * img.width + x1) * 3 + c];
                const double v10 = img.rgb[(size_t(y1) * img.width + x0) * 3 + c];
                const double v11 = img.rgb[(size_t(y1) * img.width + x1) * 3 + c];
                const double v = (1 - fy) * ((1 - fx) * v00 + fx * v01) +
                                 fy * ((1 - fx) * v10 + fx * v11);
                t.at(y, x, c) = float(v / 255.0);
            }
        }
    }
    return t;
}

RawImage raw_from_tile(const TileImage& tile) {
    RawImage img;
    img.width = TileImage::kSize;
    img.height = TileImage::kSize;
    img.rgb.resize(tile.pixels.size());
    for (size_t i = 0; i < tile.pixels.size(); ++i) {
        const float v = std::clamp(tile.pixels[i], 0.0f, 1.0f);
        img.rgb[i] = static_cast<uint8_t>(std::lround(v * 255.0f));
    }
    return img;
}

} // namespace nextpoi
