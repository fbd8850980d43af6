#include "swp/image.hpp"

#include <cstdio>
#include <memory>

#include <png.h>

#include "swp/error.hpp"

namespace swp {

namespace {

struct FileCloser {
    void operator()(FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;

// Skips PNM whitespace and '#' comment lines, then parses one integer.
int64_t pnm_int(FILE* f, const std::string& path) {
    int c = std::fgetc(f);
    while (c == ' ' || c == '\t' || c == '\r' || c == '\n' || c == '#') {
        if (c == '#')
            while (c != '\n' && c != EOF)
                c = std::fgetc(f);
        c = std::fgetc(f);
    }
    int64_t v = 0;
    bool any = false;
    while (c >= '0' && c <= '9') {
        v = v * 10 + (c - '0');
        any = true;
        c = std::fgetc(f);
    }
    if (!any)
        throw IoError("malformed PNM header in " + path);
    return v;
}

ImageU8 read_pnm(FILE* f, int64_t channels, const std::string& path) {
    ImageU8 img;
    img.channels = channels;
    img.width = pnm_int(f, path);
    img.height = pnm_int(f, path);
    const int64_t maxval = pnm_int(f, path);
    if (maxval <= 0 || maxval > 255)
        throw IoError("unsupported PNM maxval " + std::to_string(maxval) + " in " + path);
    img.pixels.resize(static_cast<size_t>(img.width * img.height * channels));
    if (std::fread(img.pixels.data(), 1, img.pixels.size(), f) != img.pixels.size())
        throw IoError("truncated PNM payload in " + path);
    return img;
}

ImageU8 read_png_file(FILE* f, const std::string& path) {
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png)
        throw IoError("libpng init failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw IoError("libpng init failed");
    }
    std::vector<png_bytep> row_ptrs;
    ImageU8 img;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("failed to decode PNG " + path);
    }
    png_init_io(png, f);
    png_read_info(png, info);

    // normalize everything to 8-bit gray or rgb
    png_set_strip_16(png);
    png_set_strip_alpha(png);
    if (png_get_color_type(png, info) == PNG_COLOR_TYPE_PALETTE)
        png_set_palette_to_rgb(png);
    if (png_get_color_type(png, info) == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8)
        png_set_expand_gray_1_2_4_to_8(png);
    png_read_update_info(png, info);

    img.width = png_get_image_width(png, info);
    img.height = png_get_image_height(png, info);
    img.channels = png_get_channels(png, info);
    if (img.channels != 1 && img.channels != 3) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("unsupported PNG channel count in " + path);
    }
    img.pixels.resize(static_cast<size_t>(img.width * img.height * img.channels));
    row_ptrs.resize(static_cast<size_t>(img.height));
    for (int64_t y = 0; y < img.height; ++y)
        row_ptrs[static_cast<size_t>(y)] = img.pixels.data() + y * img.width * img.channels;
    png_read_image(png, row_ptrs.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return img;
}

} // namespace

ImageU8 read_image(const std::string& path) {
    FilePtr f(std::fopen(path.c_str(), "rb"));
    if (!f)
        throw IoError("cannot open image " + path);
    unsigned char magic[2];
    if (std::fread(magic, 1, 2, f.get()) != 2)
        throw IoError("cannot read image header " + path);
    if (magic[0] == 'P' && magic[1] == '5')
        return read_pnm(f.get(), 1, path);
    if (magic[0] == 'P' && magic[1] == '6')
        return read_pnm(f.get(), 3, path);
    if (magic[0] == 0x89 && magic[1] == 'P') {
        std::rewind(f.get());
        return read_png_file(f.get(), path);
    }
    throw IoError("unrecognized image format in " + path + " (PNG, PGM or PPM expected)");
}

void write_pgm(const std::string& path, int64_t width, int64_t height, const uint8_t* gray) {
    FilePtr f(std::fopen(path.c_str(), "wb"));
    if (!f)
        throw IoError("cannot open " + path + " for writing");
    std::fprintf(f.get(), "P5\n%lld %lld\n255\n", static_cast<long long>(width),
                 static_cast<long long>(height));
    const size_t n = static_cast<size_t>(width * height);
    if (std::fwrite(gray, 1, n, f.get()) != n)
        throw IoError("short write to " + path);
}

Tensor image_to_rgb_tensor(const ImageU8& img) {
    Tensor t({3, img.height, img.width});
    const int64_t plane = img.height * img.width;
    for (int64_t i = 0; i < plane; ++i) {
        if (img.channels == 1) {
            const float v = static_cast<float>(img.pixels[static_cast<size_t>(i)]) / 255.0f;
            t[i] = v;
            t[plane + i] = v;
            t[2 * plane + i] = v;
        } else {
            t[i] = static_cast<float>(img.pixels[static_cast<size_t>(3 * i)]) / 255.0f;
            t[plane + i] = static_cast<float>(img.pixels[static_cast<size_t>(3 * i + 1)]) / 255.0f;
            t[2 * plane + i] = static_cast<float>(img.pixels[static_cast<size_t>(3 * i + 2)]) / 255.0f;
        }
    }
    return t;
}

} // namespace swp
