#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nextpoi/types.hpp"

namespace nextpoi {

struct RawImage {
    int width = 0;
    int height = 0;
    std::vector<uint8_t> rgb; // width * height * 3, row-major
};

// Decodes any 8/16-bit gray/palette/RGB(A) PNG into 8-bit RGB.
RawImage read_png_rgb8(const std::string& path);

// Writes 8-bit RGB with a fixed compression setup so identical pixels
// always produce identical bytes.
void write_png_rgb8(const std::string& path, const RawImage& img);

// Raster conversions between byte images and unit-range tiles. Images that
// are not 256x256 are resampled bilinearly.
TileImage tile_from_raw(const RawImage& img, int64_t tile_id, bool* resampled = nullptr);
RawImage raw_from_tile(const TileImage& tile);

} // namespace nextpoi
