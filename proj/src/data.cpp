#include "pcsa/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "pcsa/ppm.hpp"
#include "pcsa/random.hpp"

namespace pcsa {

TensorF synth_haze(const TensorF& clear, const TensorF& transmission, double airlight) {
    if (!(airlight >= 0.0 && airlight <= 1.0)) {
        throw std::invalid_argument("synth_haze: airlight must be in [0,1], got " + std::to_string(airlight));
    }
    if (clear.rank() != 3 || transmission.rank() != 3 || transmission.dim(0) != 1 ||
        clear.dim(1) != transmission.dim(1) || clear.dim(2) != transmission.dim(2)) {
        throw ShapeError("synth_haze: expected clear [C,H,W] and transmission [1,H,W], got " +
                         shape_str(clear.shape()) + " and " + shape_str(transmission.shape()));
    }
    const std::int64_t c = clear.dim(0);
    const std::int64_t hw = clear.dim(1) * clear.dim(2);
    TensorF out(clear.shape());
    const float a = static_cast<float>(airlight);
    const float* j = clear.ptr();
    const float* t = transmission.ptr();
    float* dst = out.ptr();
    for (std::int64_t ch = 0; ch < c; ++ch)
        for (std::int64_t p = 0; p < hw; ++p) dst[ch * hw + p] = j[ch * hw + p] * t[p] + a * (1.0f - t[p]);
    return out;
}

namespace {

enum Stream : std::uint64_t { scene_stream = 0, transmission_stream = 1, airlight_stream = 2 };

Rng stream_rng(const DatasetSpec& spec, std::size_t index, Stream s) {
    return Rng(derive_seed(spec.seed, 3 * static_cast<std::uint64_t>(index) + s));
}

void check_spec(const DatasetSpec& spec) {
    if (spec.height < 1 || spec.width < 1) throw std::invalid_argument("dataset image size must be positive");
    if (!(spec.t_min >= 0.0 && spec.t_min <= spec.t_max && spec.t_max <= 1.0)) {
        throw std::invalid_argument("transmission range must satisfy 0 <= t_min <= t_max <= 1");
    }
    if (!(spec.airlight_min >= 0.0 && spec.airlight_min <= spec.airlight_max && spec.airlight_max <= 1.0)) {
        throw std::invalid_argument("airlight range must satisfy 0 <= min <= max <= 1");
    }
}

// Coarse grid resolution along an axis such that bilinear steps stay within
// max_step for a value range of `span`.
std::int64_t grid_points(std::int64_t extent, double span, double max_step) {
    if (extent < 2 || span <= 0.0) return 1;
    const auto fit = static_cast<std::int64_t>(std::floor(static_cast<double>(extent - 1) * max_step / span));
    return std::clamp<std::int64_t>(1 + fit, 1, 4);
}

}  // namespace

TensorF gen_scene(const DatasetSpec& spec, std::size_t index) {
    check_spec(spec);
    Rng rng = stream_rng(spec, index, scene_stream);
    const std::int64_t h = spec.height;
    const std::int64_t w = spec.width;
    TensorF img({3, h, w});

    std::array<double, 3> lo{}, hi{};
    for (int c = 0; c < 3; ++c) {
        lo[c] = rng.uniform(0.05, 0.45);
        hi[c] = rng.uniform(0.55, 0.95);
    }
    const double angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double dx = std::cos(angle);
    const double dy = std::sin(angle);

    const bool checker = rng.uniform01() < 0.5;
    const std::int64_t period = 4 + static_cast<std::int64_t>(rng.below(9));
    const double checker_amp = rng.uniform(0.05, 0.15);

    struct Blob {
        double cy, cx, radius;
        std::array<double, 3> color;
        double strength;
    };
    std::vector<Blob> blobs(1 + rng.below(3));
    for (auto& b : blobs) {
        b.cy = rng.uniform(0.0, 1.0);
        b.cx = rng.uniform(0.0, 1.0);
        b.radius = rng.uniform(0.08, 0.3);
        for (auto& c : b.color) c = rng.uniform(0.0, 1.0);
        b.strength = rng.uniform(0.3, 0.8);
    }

    float* px = img.ptr();
    for (std::int64_t y = 0; y < h; ++y) {
        for (std::int64_t x = 0; x < w; ++x) {
            const double v = h > 1 ? static_cast<double>(y) / static_cast<double>(h - 1) : 0.5;
            const double u = w > 1 ? static_cast<double>(x) / static_cast<double>(w - 1) : 0.5;
            // Projection onto the gradient direction, remapped to [0,1].
            const double s = 0.5 + 0.5 * ((u - 0.5) * dx + (v - 0.5) * dy) * std::numbers::sqrt2;
            const double check = checker && (((y / period) + (x / period)) % 2 == 0) ? checker_amp : 0.0;
            for (int c = 0; c < 3; ++c) {
                double val = lo[c] + (hi[c] - lo[c]) * s + check;
                for (const auto& b : blobs) {
                    const double d2 = (u - b.cx) * (u - b.cx) + (v - b.cy) * (v - b.cy);
                    const double m = b.strength * std::exp(-d2 / (2.0 * b.radius * b.radius));
                    val = val * (1.0 - m) + b.color[c] * m;
                }
                px[(c * h + y) * w + x] = static_cast<float>(std::clamp(val, 0.0, 1.0));
            }
        }
    }
    return img;
}

TensorF gen_transmission(const DatasetSpec& spec, std::size_t index) {
    check_spec(spec);
    Rng rng = stream_rng(spec, index, transmission_stream);
    const std::int64_t h = spec.height;
    const std::int64_t w = spec.width;
    const double span = spec.t_max - spec.t_min;
    const std::int64_t gh = grid_points(h, span, spec.t_max_step);
    const std::int64_t gw = grid_points(w, span, spec.t_max_step);
    std::vector<double> grid(static_cast<std::size_t>(gh * gw));
    for (auto& g : grid) g = rng.uniform(spec.t_min, spec.t_max);

    TensorF t({1, h, w});
    float* px = t.ptr();
    for (std::int64_t y = 0; y < h; ++y) {
        const double gy = gh > 1 ? static_cast<double>(y) * static_cast<double>(gh - 1) / static_cast<double>(h - 1) : 0.0;
        const auto y0 = std::min<std::int64_t>(static_cast<std::int64_t>(gy), gh - 1);
        const auto y1 = std::min<std::int64_t>(y0 + 1, gh - 1);
        const double fy = gy - static_cast<double>(y0);
        for (std::int64_t x = 0; x < w; ++x) {
            const double gx =
                gw > 1 ? static_cast<double>(x) * static_cast<double>(gw - 1) / static_cast<double>(w - 1) : 0.0;
            const auto x0 = std::min<std::int64_t>(static_cast<std::int64_t>(gx), gw - 1);
            const auto x1 = std::min<std::int64_t>(x0 + 1, gw - 1);
            const double fx = gx - static_cast<double>(x0);
            const double top = grid[y0 * gw + x0] * (1.0 - fx) + grid[y0 * gw + x1] * fx;
            const double bot = grid[y1 * gw + x0] * (1.0 - fx) + grid[y1 * gw + x1] * fx;
            const double v = top * (1.0 - fy) + bot * fy;
            px[y * w + x] = static_cast<float>(std::clamp(v, spec.t_min, spec.t_max));
        }
    }
    return t;
}

double gen_airlight(const DatasetSpec& spec, std::size_t index) {
    check_spec(spec);
    Rng rng = stream_rng(spec, index, airlight_stream);
    return rng.uniform(spec.airlight_min, spec.airlight_max);
}

HazePair make_pair(const DatasetSpec& spec, std::size_t index) {
    HazePair p;
    p.clear = gen_scene(spec, index);
    p.transmission = gen_transmission(spec, index);
    p.airlight = gen_airlight(spec, index);
    p.hazy = synth_haze(p.clear, p.transmission, p.airlight);
    return p;
}

std::vector<HazePair> generate_dataset(const DatasetSpec& spec) {
    std::vector<HazePair> pairs;
    pairs.reserve(spec.count);
    for (std::size_t i = 0; i < spec.count; ++i) pairs.push_back(make_pair(spec, i));
    return pairs;
}

// ---------------------------------------------------------------------------

namespace {

std::string indexed_name(const char* stem, std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%s_%04zu.ppm", stem, i);
    return buf;
}

}  // namespace

void write_dataset(const std::vector<HazePair>& pairs, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    std::ostringstream manifest;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        const std::string hazy = indexed_name("hazy", i);
        const std::string clear = indexed_name("clear", i);
        write_ppm(pairs[i].hazy, dir / hazy);
        write_ppm(pairs[i].clear, dir / clear);
        manifest << hazy << ' ' << clear << '\n';
    }
    std::ofstream f(dir / "manifest.txt", std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write manifest in " + dir.string());
    f << manifest.str();
}

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& manifest) {
    std::ifstream f(manifest);
    if (!f) throw std::runtime_error("cannot open manifest " + manifest.string());
    std::vector<ManifestEntry> entries;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(f, line)) {
        ++line_no;
        std::istringstream is(line);
        ManifestEntry e;
        if (!(is >> e.hazy)) continue;  // blank line
        std::string extra;
        if (!(is >> e.clear) || (is >> extra)) {
            throw std::runtime_error("manifest " + manifest.string() + ":" + std::to_string(line_no) +
                                     ": expected 'hazy.ppm clear.ppm'");
        }
        entries.push_back(std::move(e));
    }
    return entries;
}

std::vector<ImagePair> load_dataset(const std::filesystem::path& manifest) {
    const auto base = manifest.parent_path();
    std::vector<ImagePair> pairs;
    for (const auto& e : read_manifest(manifest)) {
        ImagePair p;
        p.hazy = read_ppm(base / e.hazy);
        p.clear = read_ppm(base / e.clear);
        if (p.hazy.shape() != p.clear.shape()) {
            throw ShapeError("dataset pair " + e.hazy + " / " + e.clear + " differ in size");
        }
        p.name = e.hazy;
        pairs.push_back(std::move(p));
    }
    return pairs;
}

}  // namespace pcsa
