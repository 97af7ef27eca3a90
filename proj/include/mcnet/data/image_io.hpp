#pragma once

#include <algorithm>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <png.h>

#include "mcnet/core/errors.hpp"
#include "mcnet/core/tensor.hpp"

namespace mcnet::data {

// Raw decoded image, interleaved uint8, 1 or 3 channels.
struct RawImage {
    int width = 0, height = 0, channels = 0;
    std::vector<unsigned char> pixels;
};

namespace detail {

inline RawImage read_png(const std::string& path) {
    FILE* fp = std::fopen(path.c_str(), "rb");
    if (!fp) throw IoError("cannot open image file: " + path);
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        if (png) png_destroy_read_struct(&png, &info, nullptr);
        std::fclose(fp);
        throw IoError("libpng init failed for: " + path);
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        std::fclose(fp);
        throw IoError("corrupt png: " + path);
    }
    png_init_io(png, fp);
    png_read_info(png, info);
    png_uint_32 w, h;
    int bit_depth, color_type;
    png_get_IHDR(png, info, &w, &h, &bit_depth, &color_type, nullptr, nullptr, nullptr);
    if (bit_depth == 16) png_set_strip_16(png);
    if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    if (color_type & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    png_read_update_info(png, info);
    const int ch = static_cast<int>(png_get_channels(png, info));
    RawImage img;
    img.width = static_cast<int>(w);
    img.height = static_cast<int>(h);
    img.channels = ch;
    img.pixels.resize(static_cast<std::size_t>(w) * h * ch);
    std::vector<png_bytep> rows(h);
    for (png_uint_32 y = 0; y < h; ++y)
        rows[y] = img.pixels.data() + static_cast<std::size_t>(y) * w * ch;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    return img;
}

inline void skip_pnm_ws(std::istream& in) {
    while (true) {
        int c = in.peek();
        if (c == '#') {
            std::string line;
            std::getline(in, line);
        } else if (std::isspace(c)) {
            in.get();
        } else {
            break;
        }
    }
}

inline RawImage read_pnm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open image file: " + path);
    std::string magic;
    in >> magic;
    const bool gray = (magic == "P5" || magic == "P2");
    const bool rgb = (magic == "P6" || magic == "P3");
    if (!gray && !rgb) throw IoError("unsupported pnm magic '" + magic + "' in " + path);
    const bool ascii = (magic == "P2" || magic == "P3");
    skip_pnm_ws(in);
    int w, h, maxv;
    in >> w;
    skip_pnm_ws(in);
    in >> h;
    skip_pnm_ws(in);
    in >> maxv;
    if (!in || w < 1 || h < 1 || maxv < 1 || maxv > 255) throw IoError("bad pnm header in " + path);
    RawImage img;
    img.width = w;
    img.height = h;
    img.channels = gray ? 1 : 3;
    const std::size_t n = static_cast<std::size_t>(w) * h * img.channels;
    img.pixels.resize(n);
    if (ascii) {
        for (std::size_t i = 0; i < n; ++i) {
            int v;
            in >> v;
            if (!in) throw IoError("truncated pnm: " + path);
            img.pixels[i] = static_cast<unsigned char>(std::clamp(v, 0, 255));
        }
    } else {
        in.get();  // single whitespace after header
        in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(n));
        if (in.gcount() != static_cast<std::streamsize>(n)) throw IoError("truncated pnm: " + path);
    }
    return img;
}

}  // namespace detail

inline RawImage read_image(const std::string& path) {
    auto dot = path.find_last_of('.');
    std::string ext = dot == std::string::npos ? "" : path.substr(dot + 1);
    for (auto& c : ext) c = static_cast<char>(std::tolower(c));
    if (ext == "png") return detail::read_png(path);
    if (ext == "pgm" || ext == "ppm" || ext == "pnm") return detail::read_pnm(path);
    throw IoError("unsupported image format '." + ext + "': " + path);
}

// Bilinear resample + channel conversion + scale to [0,1].
inline Tensor to_tensor(const RawImage& img, int out_channels, int out_size) {
    Tensor out({out_channels, out_size, out_size});
    const double sy = static_cast<double>(img.height) / out_size;
    const double sx = static_cast<double>(img.width) / out_size;
    auto px = [&](int y, int x, int c) -> double {
        y = std::clamp(y, 0, img.height - 1);
        x = std::clamp(x, 0, img.width - 1);
        int ch = img.channels == 1 ? 0 : std::min(c, img.channels - 1);
        return img.pixels[(static_cast<std::size_t>(y) * img.width + x) * img.channels + ch] / 255.0;
    };
    for (int c = 0; c < out_channels; ++c)
        for (int y = 0; y < out_size; ++y)
            for (int x = 0; x < out_size; ++x) {
                const double fy = (y + 0.5) * sy - 0.5;
                const double fx = (x + 0.5) * sx - 0.5;
                const int y0 = static_cast<int>(std::floor(fy)), x0 = static_cast<int>(std::floor(fx));
                const double wy = fy - y0, wx = fx - x0;
                double v = 0.0;
                if (img.channels >= 3 && out_channels == 1) {
                    // luminance of the interpolated rgb
                    double rgb[3];
                    for (int k = 0; k < 3; ++k)
                        rgb[k] = (1 - wy) * ((1 - wx) * px(y0, x0, k) + wx * px(y0, x0 + 1, k)) +
                                 wy * ((1 - wx) * px(y0 + 1, x0, k) + wx * px(y0 + 1, x0 + 1, k));
                    v = 0.299 * rgb[0] + 0.587 * rgb[1] + 0.114 * rgb[2];
                } else {
                    v = (1 - wy) * ((1 - wx) * px(y0, x0, c) + wx * px(y0, x0 + 1, c)) +
                        wy * ((1 - wx) * px(y0 + 1, x0, c) + wx * px(y0 + 1, x0 + 1, c));
                }
                out.at(c, y, x) = std::clamp(v, 0.0, 1.0);
            }
    return out;
}

inline void write_png(const std::string& path, const RawImage& img) {
    FILE* fp = std::fopen(path.c_str(), "wb");
    if (!fp) throw IoError("cannot write image file: " + path);
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        if (png) png_destroy_write_struct(&png, &info);
        std::fclose(fp);
        throw IoError("libpng init failed for: " + path);
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        std::fclose(fp);
        throw IoError("png write failed: " + path);
    }
    png_init_io(png, fp);
    const int color = img.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB;
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), 8,
                 color, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<png_bytep> rows(static_cast<std::size_t>(img.height));
    for (int y = 0; y < img.height; ++y)
        rows[static_cast<std::size_t>(y)] =
            const_cast<png_bytep>(img.pixels.data() + static_cast<std::size_t>(y) * img.width * img.channels);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
}

}  // namespace mcnet::data
