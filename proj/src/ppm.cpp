#include "pcsa/ppm.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>
#include <sstream>

namespace pcsa {

std::string encode_ppm(const TensorF& image) {
    if (image.rank() != 3 || image.dim(0) != 3) {
        throw ShapeError("ppm: image must be [3,H,W], got " + shape_str(image.shape()));
    }
    const std::int64_t h = image.dim(1);
    const std::int64_t w = image.dim(2);
    std::string out = "P6\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
    const std::size_t header = out.size();
    out.resize(header + static_cast<std::size_t>(3 * h * w));
    const float* px = image.ptr();
    for (std::int64_t y = 0; y < h; ++y) {
        for (std::int64_t x = 0; x < w; ++x) {
            for (std::int64_t c = 0; c < 3; ++c) {
                const double v = std::clamp(static_cast<double>(px[(c * h + y) * w + x]), 0.0, 1.0);
                const long q = std::lround(v * 255.0);
                out[header + static_cast<std::size_t>((y * w + x) * 3 + c)] = static_cast<char>(q);
            }
        }
    }
    return out;
}

namespace {

class HeaderReader {
public:
    explicit HeaderReader(const std::string& bytes) : bytes_(bytes) {}

    void skip_space_and_comments() {
        while (pos_ < bytes_.size()) {
            const char c = bytes_[pos_];
            if (c == '#') {
                while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
            } else if (std::isspace(static_cast<unsigned char>(c))) {
                ++pos_;
            } else {
                break;
            }
        }
    }

    long read_int(const char* field) {
        skip_space_and_comments();
        const std::size_t start = pos_;
        long v = 0;
        while (pos_ < bytes_.size() && std::isdigit(static_cast<unsigned char>(bytes_[pos_]))) {
            v = v * 10 + (bytes_[pos_] - '0');
            if (v > 1'000'000) throw PpmError(PpmErrorKind::malformed_header, std::string("ppm: ") + field + " too large");
            ++pos_;
        }
        if (pos_ == start) throw PpmError(PpmErrorKind::malformed_header, std::string("ppm: missing ") + field);
        return v;
    }

    std::size_t pos_ = 0;
    const std::string& bytes_;
};

}  // namespace

TensorF decode_ppm(const std::string& bytes) {
    if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '6') {
        throw PpmError(PpmErrorKind::malformed_header, "ppm: missing P6 magic");
    }
    HeaderReader r(bytes);
    r.pos_ = 2;
    const long w = r.read_int("width");
    const long h = r.read_int("height");
    const long maxval = r.read_int("maxval");
    if (w <= 0 || h <= 0) throw PpmError(PpmErrorKind::malformed_header, "ppm: width and height must be positive");
    if (maxval != 255) {
        throw PpmError(PpmErrorKind::unsupported_maxval,
                       "ppm: unsupported maxval " + std::to_string(maxval) + " (only 255 is supported)");
    }
    if (r.pos_ >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[r.pos_]))) {
        throw PpmError(PpmErrorKind::malformed_header, "ppm: expected whitespace after maxval");
    }
    ++r.pos_;
    const std::size_t need = static_cast<std::size_t>(3 * w * h);
    if (bytes.size() - r.pos_ < need) {
        throw PpmError(PpmErrorKind::truncated_payload, "ppm: payload truncated, expected " + std::to_string(need) +
                                                            " bytes, got " + std::to_string(bytes.size() - r.pos_));
    }
    TensorF img({3, h, w});
    float* px = img.ptr();
    for (long y = 0; y < h; ++y)
        for (long x = 0; x < w; ++x)
            for (long c = 0; c < 3; ++c) {
                const auto b = static_cast<unsigned char>(bytes[r.pos_ + static_cast<std::size_t>((y * w + x) * 3 + c)]);
                px[(c * h + y) * w + x] = static_cast<float>(b) / 255.0f;
            }
    return img;
}

void write_ppm(const TensorF& image, const std::filesystem::path& path) {
    const std::string bytes = encode_ppm(image);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw PpmError(PpmErrorKind::io, "ppm: cannot open " + path.string() + " for writing");
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw PpmError(PpmErrorKind::io, "ppm: write failed for " + path.string());
}

TensorF read_ppm(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw PpmError(PpmErrorKind::io, "ppm: cannot open " + path.string());
    std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return decode_ppm(bytes);
}

}  // namespace pcsa
