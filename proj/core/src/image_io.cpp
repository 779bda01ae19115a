#include "locinv/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "locinv/errors.hpp"

namespace locinv {

namespace {

int next_token(std::istream& is) {
    // Skips whitespace and '#' comments, then reads one integer.
    while (true) {
        int c = is.peek();
        if (c == '#') {
            std::string line;
            std::getline(is, line);
        } else if (std::isspace(c)) {
            is.get();
        } else {
            break;
        }
    }
    int v;
    if (!(is >> v)) throw DataError("malformed netpbm header");
    return v;
}

struct PnmData {
    int channels, width, height;
    std::vector<double> values;  // channel-interleaved, [0,1]
};

PnmData read_pnm(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open image: " + path);
    char p, kind;
    is.get(p).get(kind);
    if (p != 'P' || (kind != '2' && kind != '3' && kind != '5' && kind != '6'))
        throw DataError("unsupported image format in " + path + " (PGM/PPM expected)");
    bool color = kind == '3' || kind == '6';
    bool binary = kind == '5' || kind == '6';
    int w = next_token(is), h = next_token(is), maxval = next_token(is);
    if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 65535)
        throw DataError("bad netpbm dimensions in " + path);
    int ch = color ? 3 : 1;
    size_t n = static_cast<size_t>(w) * h * ch;
    PnmData out{ch, w, h, std::vector<double>(n)};
    if (binary) {
        is.get();  // single whitespace after maxval
        if (maxval < 256) {
            std::vector<unsigned char> buf(n);
            is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n));
            if (!is) throw DataError("truncated image data in " + path);
            for (size_t i = 0; i < n; ++i) out.values[i] = buf[i] / static_cast<double>(maxval);
        } else {
            std::vector<unsigned char> buf(2 * n);
            is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(2 * n));
            if (!is) throw DataError("truncated image data in " + path);
            for (size_t i = 0; i < n; ++i) {
                int v = (buf[2 * i] << 8) | buf[2 * i + 1];
                out.values[i] = v / static_cast<double>(maxval);
            }
        }
    } else {
        for (size_t i = 0; i < n; ++i) out.values[i] = next_token(is) / static_cast<double>(maxval);
    }
    return out;
}

}  // namespace

Tensor read_image(const std::string& path) {
    PnmData d = read_pnm(path);
    Tensor img({3, d.height, d.width});
    for (int y = 0; y < d.height; ++y)
        for (int x = 0; x < d.width; ++x)
            for (int c = 0; c < 3; ++c) {
                double v = d.channels == 3 ? d.values[(static_cast<size_t>(y) * d.width + x) * 3 + c]
                                           : d.values[static_cast<size_t>(y) * d.width + x];
                img.at3(c, y, x) = v;
            }
    return img;
}

Tensor read_mask_image(const std::string& path) {
    PnmData d = read_pnm(path);
    Tensor gray({1, d.height, d.width});
    for (int y = 0; y < d.height; ++y)
        for (int x = 0; x < d.width; ++x) {
            double v = 0;
            for (int c = 0; c < d.channels; ++c)
                v += d.values[(static_cast<size_t>(y) * d.width + x) * d.channels + c];
            gray.at3(0, y, x) = v / d.channels;
        }
    return gray;
}

static unsigned char to_byte(double v) {
    v = std::min(1.0, std::max(0.0, v));
    return static_cast<unsigned char>(std::lround(v * 255.0));
}

void write_ppm(const std::string& path, const Tensor& image) {
    if (image.ndim() != 3 || image.shape[0] != 3) throw DataError("write_ppm: expected [3 x H x W]");
    int h = image.shape[1], w = image.shape[2];
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot open for write: " + path);
    os << "P6\n" << w << " " << h << "\n255\n";
    std::vector<unsigned char> buf(static_cast<size_t>(w) * h * 3);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c)
                buf[(static_cast<size_t>(y) * w + x) * 3 + c] = to_byte(image.at3(c, y, x));
    os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!os) throw DataError("write failed: " + path);
}

void write_pgm(const std::string& path, const Tensor& gray) {
    if (gray.ndim() != 3 || gray.shape[0] != 1) throw DataError("write_pgm: expected [1 x H x W]");
    int h = gray.shape[1], w = gray.shape[2];
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot open for write: " + path);
    os << "P5\n" << w << " " << h << "\n255\n";
    std::vector<unsigned char> buf(static_cast<size_t>(w) * h);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) buf[static_cast<size_t>(y) * w + x] = to_byte(gray.at3(0, y, x));
    os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!os) throw DataError("write failed: " + path);
}

}  // namespace locinv
