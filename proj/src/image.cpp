#include "abn/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace abn {

Tensor upsample_nearest(const Tensor& maps, std::size_t height, std::size_t width) {
    if (maps.rank() != 4) throw ShapeError("upsample expects [N,C,h,w], got " + shape_str(maps.shape()));
    const std::size_t n = maps.dim(0), c = maps.dim(1), h = maps.dim(2), w = maps.dim(3);
    Tensor out = Tensor::zeros({n, c, height, width});
    for (std::size_t i = 0; i < n * c; ++i) {
        const double* src = maps.data() + i * h * w;
        double* dst = out.data() + i * height * width;
        for (std::size_t y = 0; y < height; ++y) {
            const std::size_t sy = (y * h) / height;
            for (std::size_t x = 0; x < width; ++x) {
                dst[y * width + x] = src[sy * w + (x * w) / width];
            }
        }
    }
    return out;
}

Tensor upsample_bilinear(const Tensor& maps, std::size_t height, std::size_t width) {
    if (maps.rank() != 4) throw ShapeError("upsample expects [N,C,h,w], got " + shape_str(maps.shape()));
    const std::size_t n = maps.dim(0), c = maps.dim(1), h = maps.dim(2), w = maps.dim(3);
    Tensor out = Tensor::zeros({n, c, height, width});
    const double sy_scale = static_cast<double>(h) / static_cast<double>(height);
    const double sx_scale = static_cast<double>(w) / static_cast<double>(width);
    for (std::size_t i = 0; i < n * c; ++i) {
        const double* src = maps.data() + i * h * w;
        double* dst = out.data() + i * height * width;
        for (std::size_t y = 0; y < height; ++y) {
            double fy = (static_cast<double>(y) + 0.5) * sy_scale - 0.5;
            fy = std::clamp(fy, 0.0, static_cast<double>(h - 1));
            const std::size_t y0 = static_cast<std::size_t>(fy);
            const std::size_t y1 = std::min(y0 + 1, h - 1);
            const double wy = fy - static_cast<double>(y0);
            for (std::size_t x = 0; x < width; ++x) {
                double fx = (static_cast<double>(x) + 0.5) * sx_scale - 0.5;
                fx = std::clamp(fx, 0.0, static_cast<double>(w - 1));
                const std::size_t x0 = static_cast<std::size_t>(fx);
                const std::size_t x1 = std::min(x0 + 1, w - 1);
                const double wx = fx - static_cast<double>(x0);
                const double top = src[y0 * w + x0] * (1.0 - wx) + src[y0 * w + x1] * wx;
                const double bot = src[y1 * w + x0] * (1.0 - wx) + src[y1 * w + x1] * wx;
                dst[y * width + x] = top * (1.0 - wy) + bot * wy;
            }
        }
    }
    return out;
}

std::vector<std::uint8_t> to_gray_u8(const std::vector<double>& values) {
    std::vector<std::uint8_t> out(values.size(), 0);
    if (values.empty()) return out;
    double lo = values[0], hi = values[0];
    for (double v : values) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    if (hi <= lo) return out;  // constant map renders black
    const double scale = 255.0 / (hi - lo);
    for (std::size_t i = 0; i < values.size(); ++i) {
        out[i] = static_cast<std::uint8_t>(std::llround((values[i] - lo) * scale));
    }
    return out;
}

void write_pgm(const std::string& path, std::size_t width, std::size_t height,
               const std::vector<std::uint8_t>& pixels) {
    if (pixels.size() != width * height) throw ShapeError("pgm pixel count does not match dimensions");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValueError("cannot write " + path);
    out << "P5\n" << width << " " << height << "\n255\n";
    out.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
}

PgmImage read_pgm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValueError("cannot open " + path);
    std::string magic;
    in >> magic;
    if (magic != "P5") throw ValueError(path + ": not a binary PGM (P5) file");
    std::size_t width = 0, height = 0, maxval = 0;
    in >> width >> height >> maxval;
    if (!in || maxval != 255) throw ValueError(path + ": unsupported PGM header");
    in.get();  // single whitespace after header
    PgmImage img;
    img.width = width;
    img.height = height;
    img.pixels.resize(width * height);
    in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
    if (!in) throw ValueError(path + ": truncated pixel data");
    return img;
}

}  // namespace abn
