// 8-bit RGB image input/output: PNG (libpng) and binary PPM (P6).
// Pixels map to [0,1] tensors of shape [3,H,W]; writes clamp then quantize
// round-half-up.

#ifndef NALSUPER_IMAGE_IO_HPP
#define NALSUPER_IMAGE_IO_HPP

#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include <png.h>

#include "nalsuper/tensor.hpp"

namespace nalsuper {

namespace detail {

inline bool ends_with(const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() &&
           s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

template <class Real>
Tensor<Real> rgb8_to_tensor(const std::vector<unsigned char>& rgb, int h, int w) {
    std::vector<Real> vals(static_cast<std::size_t>(3) * h * w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c)
                vals[(static_cast<std::size_t>(c) * h + y) * w + x] =
                    static_cast<Real>(rgb[(static_cast<std::size_t>(y) * w + x) * 3 + c]) / Real(255);
    return Tensor<Real>::from({3, h, w}, std::move(vals));
}

template <class Real>
std::vector<unsigned char> tensor_to_rgb8(const Tensor<Real>& t) {
    if (t.shape.size() != 3 || t.shape[0] != 3)
        throw DimError("image tensor must be [3,H,W]");
    int h = t.shape[1], w = t.shape[2];
    std::vector<unsigned char> rgb(static_cast<std::size_t>(3) * h * w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c) {
                double v = static_cast<double>((*t.data)[(static_cast<std::size_t>(c) * h + y) * w + x]);
                v = std::min(1.0, std::max(0.0, v));
                rgb[(static_cast<std::size_t>(y) * w + x) * 3 + c] =
                    static_cast<unsigned char>(std::floor(v * 255.0 + 0.5));
            }
    return rgb;
}

struct FileCloser {
    void operator()(std::FILE* f) const { if (f) std::fclose(f); }
};

}  // namespace detail

template <class Real>
Tensor<Real> read_ppm(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cannot open '" + path + "'");
    std::string magic;
    is >> magic;
    if (magic != "P6") throw FormatError("'" + path + "' is not a binary PPM (P6)");
    auto next_token = [&is, &path]() {
        // skips whitespace and '#' comments
        std::string tok;
        while (is >> tok) {
            if (tok[0] == '#') { std::string rest; std::getline(is, rest); continue; }
            return tok;
        }
        throw FormatError("truncated PPM header in '" + path + "'");
    };
    int w = std::stoi(next_token());
    int h = std::stoi(next_token());
    int maxval = std::stoi(next_token());
    if (maxval != 255) throw FormatError("PPM maxval must be 255 in '" + path + "'");
    is.get();  // single whitespace after maxval
    std::vector<unsigned char> rgb(static_cast<std::size_t>(3) * h * w);
    if (!is.read(reinterpret_cast<char*>(rgb.data()), static_cast<std::streamsize>(rgb.size())))
        throw FormatError("truncated PPM payload in '" + path + "'");
    return detail::rgb8_to_tensor<Real>(rgb, h, w);
}

template <class Real>
void write_ppm(const Tensor<Real>& t, const std::string& path) {
    auto rgb = detail::tensor_to_rgb8(t);
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("cannot open '" + path + "' for writing");
    os << "P6\n" << t.shape[2] << " " << t.shape[1] << "\n255\n";
    os.write(reinterpret_cast<const char*>(rgb.data()), static_cast<std::streamsize>(rgb.size()));
    if (!os) throw FormatError("write failed for '" + path + "'");
}

template <class Real>
Tensor<Real> read_png(const std::string& path) {
    std::unique_ptr<std::FILE, detail::FileCloser> fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw FormatError("cannot open '" + path + "'");
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw FormatError("libpng init failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw FormatError("failed to decode PNG '" + path + "'");
    }
    png_init_io(png, fp.get());
    png_read_info(png, info);
    // normalize any input to 8-bit RGB
    png_set_strip_16(png);
    png_set_palette_to_rgb(png);
    png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    png_set_strip_alpha(png);
    png_set_gray_to_rgb(png);
    png_read_update_info(png, info);
    int w = static_cast<int>(png_get_image_width(png, info));
    int h = static_cast<int>(png_get_image_height(png, info));
    std::vector<unsigned char> rgb(static_cast<std::size_t>(3) * h * w);
    std::vector<png_bytep> rows(static_cast<std::size_t>(h));
    for (int y = 0; y < h; ++y) rows[static_cast<std::size_t>(y)] = rgb.data() + static_cast<std::size_t>(y) * w * 3;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return detail::rgb8_to_tensor<Real>(rgb, h, w);
}

template <class Real>
void write_png(const Tensor<Real>& t, const std::string& path) {
    auto rgb = detail::tensor_to_rgb8(t);
    int h = t.shape[1], w = t.shape[2];
    std::unique_ptr<std::FILE, detail::FileCloser> fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw FormatError("cannot open '" + path + "' for writing");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw FormatError("libpng init failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw FormatError("failed to encode PNG '" + path + "'");
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8,
                 PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<png_bytep> rows(static_cast<std::size_t>(h));
    for (int y = 0; y < h; ++y) rows[static_cast<std::size_t>(y)] = rgb.data() + static_cast<std::size_t>(y) * w * 3;
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

template <class Real>
Tensor<Real> read_image(const std::string& path) {
    if (detail::ends_with(path, ".ppm")) return read_ppm<Real>(path);
    return read_png<Real>(path);
}

template <class Real>
void write_image(const Tensor<Real>& t, const std::string& path) {
    if (detail::ends_with(path, ".ppm")) write_ppm(t, path);
    else write_png(t, path);
}

}  // namespace nalsuper

#endif  // NALSUPER_IMAGE_IO_HPP
