#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace cdul {

// Dense HWC float image, values in [0,1]. Channel count is fixed at 3.
struct Image {
    int height = 0;
    int width = 0;
    std::vector<float> data; // height*width*3, row-major HWC

    Image() = default;
    Image(int h, int w) : height(h), width(w), data(static_cast<size_t>(h) * w * 3, 0.0f) {}

    float* pixel(int row, int col) {
        return data.data() + (static_cast<size_t>(row) * width + col) * 3;
    }
    const float* pixel(int row, int col) const {
        return data.data() + (static_cast<size_t>(row) * width + col) * 3;
    }

    bool empty() const { return height == 0 || width == 0; }

    void fill_rect(int row0, int col0, int row1, int col1, std::array<float, 3> rgb);

    // Copies the half-open pixel window [row0,row1) x [col0,col1).
    Image crop(int row0, int col0, int row1, int col1) const;
};

// 8-bit binary PPM (P6). Round-trips exactly for values that are n/255.
void save_ppm(const Image& image, const std::filesystem::path& path);
Image load_ppm(const std::filesystem::path& path);

Image load_jpeg(const std::filesystem::path& path);

// Dispatches on extension: .ppm, .jpg, .jpeg.
Image load_image(const std::filesystem::path& path);

Image resize_bilinear(const Image& image, int out_height, int out_width);

// Stable 64-bit content hash (FNV-1a over the quantized pixel bytes).
std::uint64_t image_content_hash(const Image& image);

} // namespace cdul
