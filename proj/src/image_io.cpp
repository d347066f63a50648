#include "mgbp/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <vector>

namespace mgbp {

Tensor read_png(const std::filesystem::path& path) {
    png_image image;
    std::memset(&image, 0, sizeof image);
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&image, path.c_str())) {
        throw ImageError("cannot read " + path.string() + ": " + image.message);
    }
    image.format = PNG_FORMAT_RGB;
    std::vector<png_byte> buf(PNG_IMAGE_SIZE(image));
    if (!png_image_finish_read(&image, nullptr, buf.data(), 0, nullptr)) {
        png_image_free(&image);
        throw ImageError("cannot decode " + path.string() + ": " + image.message);
    }
    const int64_t h = image.height, w = image.width;
    std::vector<float> v(static_cast<size_t>(3 * h * w));
    for (int64_t p = 0; p < h * w; ++p)
        for (int64_t c = 0; c < 3; ++c) v[c * h * w + p] = static_cast<float>(buf[p * 3 + c]) / 255.0f;
    return Tensor({1, 3, h, w}, std::move(v));
}

void write_png(const std::filesystem::path& path, const Tensor& img) {
    const Shape s = img.shape();
    if (s.n != 1 || s.c != 3) throw ShapeError("write_png expects one 3-channel image, got " + s.str());
    const auto x = img.data();
    const int64_t P = s.plane();
    std::vector<png_byte> buf(static_cast<size_t>(3 * P));
    for (int64_t p = 0; p < P; ++p)
        for (int64_t c = 0; c < 3; ++c) {
            const float v = std::isnan(x[c * P + p]) ? 0.0f : std::clamp(x[c * P + p], 0.0f, 1.0f);
            buf[p * 3 + c] = static_cast<png_byte>(std::lround(v * 255.0f));
        }
    png_image image;
    std::memset(&image, 0, sizeof image);
    image.version = PNG_IMAGE_VERSION;
    image.width = static_cast<png_uint_32>(s.w);
    image.height = static_cast<png_uint_32>(s.h);
    image.format = PNG_FORMAT_RGB;
    if (!png_image_write_to_file(&image, path.c_str(), 0, buf.data(), 0, nullptr)) {
        throw ImageError("cannot write " + path.string() + ": " + image.message);
    }
}

}  // namespace mgbp
