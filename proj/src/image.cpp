#include "cdul/image.hpp"

#include "cdul/error.hpp"

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <fstream>

#include <jpeglib.h>

namespace cdul {

namespace {

std::uint8_t quantize(float v) {
    float scaled = std::clamp(v, 0.0f, 1.0f) * 255.0f;
    return static_cast<std::uint8_t>(std::lround(scaled));
}

} // namespace

void Image::fill_rect(int row0, int col0, int row1, int col1, std::array<float, 3> rgb) {
    row0 = std::clamp(row0, 0, height);
    row1 = std::clamp(row1, 0, height);
    col0 = std::clamp(col0, 0, width);
    col1 = std::clamp(col1, 0, width);
    for (int r = row0; r < row1; ++r) {
        for (int c = col0; c < col1; ++c) {
            float* p = pixel(r, c);
            p[0] = rgb[0];
            p[1] = rgb[1];
            p[2] = rgb[2];
        }
    }
}

Image Image::crop(int row0, int col0, int row1, int col1) const {
    if (row0 < 0 || col0 < 0 || row1 > height || col1 > width || row0 >= row1 || col0 >= col1)
        fail(ErrorKind::internal, "crop window out of bounds");
    Image out(row1 - row0, col1 - col0);
    for (int r = row0; r < row1; ++r) {
        const float* src = pixel(r, col0);
        float* dst = out.pixel(r - row0, 0);
        std::copy(src, src + static_cast<size_t>(col1 - col0) * 3, dst);
    }
    return out;
}

void save_ppm(const Image& image, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) fail(ErrorKind::io, "cannot open " + path.string() + " for writing");
    out << "P6\n" << image.width << " " << image.height << "\n255\n";
    std::vector<std::uint8_t> row(static_cast<size_t>(image.width) * 3);
    for (int r = 0; r < image.height; ++r) {
        const float* src = image.pixel(r, 0);
        for (size_t i = 0; i < row.size(); ++i) row[i] = quantize(src[i]);
        out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
    }
    if (!out) fail(ErrorKind::io, "write failed: " + path.string());
}

Image load_ppm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::io, "cannot open " + path.string());

    auto next_token = [&]() -> std::string {
        std::string tok;
        for (;;) {
            int c = in.get();
            if (c == EOF) fail(ErrorKind::data, "truncated PPM header: " + path.string());
            if (c == '#') { // comment to end of line
                while (c != EOF && c != '\n') c = in.get();
                continue;
            }
            if (std::isspace(c)) {
                if (!tok.empty()) return tok;
                continue;
            }
            tok.push_back(static_cast<char>(c));
        }
    };

    if (next_token() != "P6") fail(ErrorKind::data, "not a binary PPM file: " + path.string());
    int width = std::stoi(next_token());
    int height = std::stoi(next_token());
    int maxval = std::stoi(next_token());
    if (width <= 0 || height <= 0 || maxval != 255)
        fail(ErrorKind::data, "unsupported PPM geometry in " + path.string());

    Image image(height, width);
    std::vector<std::uint8_t> raw(static_cast<size_t>(width) * height * 3);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (in.gcount() != static_cast<std::streamsize>(raw.size()))
        fail(ErrorKind::data, "truncated PPM payload: " + path.string());
    for (size_t i = 0; i < raw.size(); ++i) image.data[i] = static_cast<float>(raw[i]) / 255.0f;
    return image;
}

namespace {

struct JpegErrorMgr {
    jpeg_error_mgr pub;
    std::jmp_buf setjmp_buffer;
    std::string message;
};

void jpeg_error_exit(j_common_ptr cinfo) {
    auto* err = reinterpret_cast<JpegErrorMgr*>(cinfo->err);
    char buffer[JMSG_LENGTH_MAX];
    (*cinfo->err->format_message)(cinfo, buffer);
    err->message = buffer;
    std::longjmp(err->setjmp_buffer, 1);
}

} // namespace

Image load_jpeg(const std::filesystem::path& path) {
    std::FILE* f = std::fopen(path.string().c_str(), "rb");
    if (f == nullptr) fail(ErrorKind::io, "cannot open " + path.string());

    jpeg_decompress_struct cinfo{};
    JpegErrorMgr jerr{};
    cinfo.err = jpeg_std_error(&jerr.pub);
    jerr.pub.error_exit = jpeg_error_exit;

    if (setjmp(jerr.setjmp_buffer)) {
        jpeg_destroy_decompress(&cinfo);
        std::fclose(f);
        fail(ErrorKind::data, "JPEG decode failed for " + path.string() + ": " + jerr.message);
    }

    jpeg_create_decompress(&cinfo);
    jpeg_stdio_src(&cinfo, f);
    jpeg_read_header(&cinfo, TRUE);
    cinfo.out_color_space = JCS_RGB;
    jpeg_start_decompress(&cinfo);

    Image image(static_cast<int>(cinfo.output_height), static_cast<int>(cinfo.output_width));
    std::vector<std::uint8_t> row(static_cast<size_t>(image.width) * 3);
    std::uint8_t* rowp = row.data();
    while (cinfo.output_scanline < cinfo.output_height) {
        int r = static_cast<int>(cinfo.output_scanline);
        jpeg_read_scanlines(&cinfo, &rowp, 1);
        float* dst = image.pixel(r, 0);
        for (size_t i = 0; i < row.size(); ++i) dst[i] = static_cast<float>(row[i]) / 255.0f;
    }
    jpeg_finish_decompress(&cinfo);
    jpeg_destroy_decompress(&cinfo);
    std::fclose(f);
    return image;
}

Image load_image(const std::filesystem::path& path) {
    std::string ext = path.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    if (ext == ".ppm") return load_ppm(path);
    if (ext == ".jpg" || ext == ".jpeg") return load_jpeg(path);
    fail(ErrorKind::data, "unsupported image format '" + ext + "' for " + path.string());
}

Image resize_bilinear(const Image& image, int out_height, int out_width) {
    if (image.empty()) fail(ErrorKind::data, "cannot resize an empty image");
    if (out_height < 1 || out_width < 1) fail(ErrorKind::internal, "bad resize target");
    if (out_height == image.height && out_width == image.width) return image;
    Image out(out_height, out_width);
    const float sy = static_cast<float>(image.height) / static_cast<float>(out_height);
    const float sx = static_cast<float>(image.width) / static_cast<float>(out_width);
    for (int r = 0; r < out_height; ++r) {
        float fy = (static_cast<float>(r) + 0.5f) * sy - 0.5f;
        int y0 = static_cast<int>(std::floor(fy));
        float wy = fy - static_cast<float>(y0);
        int y1 = std::min(std::max(y0 + 1, 0), image.height - 1);
        y0 = std::min(std::max(y0, 0), image.height - 1);
        for (int c = 0; c < out_width; ++c) {
            float fx = (static_cast<float>(c) + 0.5f) * sx - 0.5f;
            int x0 = static_cast<int>(std::floor(fx));
            float wx = fx - static_cast<float>(x0);
            int x1 = std::min(std::max(x0 + 1, 0), image.width - 1);
            x0 = std::min(std::max(x0, 0), image.width - 1);
            const float* p00 = image.pixel(y0, x0);
            const float* p01 = image.pixel(y0, x1);
            const float* p10 = image.pixel(y1, x0);
            const float* p11 = image.pixel(y1, x1);
            float* dst = out.pixel(r, c);
            for (int ch = 0; ch < 3; ++ch) {
                float top = p00[ch] + (p01[ch] - p00[ch]) * wx;
                float bottom = p10[ch] + (p11[ch] - p10[ch]) * wx;
                dst[ch] = top + (bottom - top) * wy;
            }
        }
    }
    return out;
}

std::uint64_t image_content_hash(const Image& image) {
    std::uint64_t h = 1469598103934665603ull;
    auto mix = [&](std::uint8_t byte) {
        h ^= byte;
        h *= 1099511628211ull;
    };
    auto mix32 = [&](std::uint32_t v) {
        mix(static_cast<std::uint8_t>(v));
        mix(static_cast<std::uint8_t>(v >> 8));
        mix(static_cast<std::uint8_t>(v >> 16));
        mix(static_cast<std::uint8_t>(v >> 24));
    };
    mix32(static_cast<std::uint32_t>(image.height));
    mix32(static_cast<std::uint32_t>(image.width));
    for (float v : image.data) mix(quantize(v));
    return h;
}

} // namespace cdul
