#include "vaeac/masks.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>

namespace vaeac {

std::size_t mask_popcount(const Mask& b) {
    std::size_t n = 0;
    for (auto v : b) n += v;
    return n;
}

double mask_fraction(const Mask& b) {
    if (b.empty()) return 0.0;
    return static_cast<double>(mask_popcount(b)) / static_cast<double>(b.size());
}

namespace {

std::vector<double> parse_args(const std::string& text, std::string& name) {
    std::vector<double> args;
    const auto open = text.find('(');
    if (open == std::string::npos) {
        name = text;
        return args;
    }
    if (text.back() != ')') throw ConfigError("mask spec: missing ')' in '" + text + "'");
    name = text.substr(0, open);
    std::string inner = text.substr(open + 1, text.size() - open - 2);
    std::size_t pos = 0;
    while (pos < inner.size()) {
        auto comma = inner.find(',', pos);
        if (comma == std::string::npos) comma = inner.size();
        const std::string tok = inner.substr(pos, comma - pos);
        try {
            args.push_back(std::stod(tok));
        } catch (const std::exception&) {
            throw ConfigError("mask spec: bad number '" + tok + "' in '" + text + "'");
        }
        pos = comma + 1;
    }
    return args;
}

std::size_t usize(double v) { return static_cast<std::size_t>(v); }

}  // namespace

MaskSpec MaskSpec::parse(const std::string& text) {
    std::string name;
    std::vector<double> args = parse_args(text, name);
    MaskSpec s;
    auto want = [&](std::size_t n) {
        if (args.size() != n) {
            throw ConfigError("mask spec '" + name + "': expected " + std::to_string(n) +
                              " argument(s), got " + std::to_string(args.size()));
        }
    };
    if (name == "bernoulli") {
        s.kind = Kind::kBernoulli;
        if (!args.empty()) {
            want(1);
            s.rate = args[0];
        }
    } else if (name == "rectangular") {
        want(0);
        s.kind = Kind::kRectangular;
    } else if (name == "line") {
        s.kind = Kind::kLine;
        if (!args.empty()) {
            want(1);
            s.line_width = usize(args[0]);
        }
    } else if (name == "center") {
        want(0);
        s.kind = Kind::kCenter;
    } else if (name == "half") {
        want(0);
        s.kind = Kind::kHalf;
    } else if (name == "random_bernoulli") {
        s.kind = Kind::kRandomBernoulli;
        s.rate = 0.8;
        if (!args.empty()) {
            want(1);
            s.rate = args[0];
        }
    } else if (name == "pattern") {
        want(0);
        s.kind = Kind::kPattern;
    } else if (name == "fixed_region") {
        want(4);
        s.kind = Kind::kFixedRegion;
        s.x1 = usize(args[0]);
        s.x2 = usize(args[1]);
        s.y1 = usize(args[2]);
        s.y2 = usize(args[3]);
    } else {
        throw ConfigError("mask spec: unknown kind '" + name + "'");
    }
    if (s.rate < 0.0 || s.rate > 1.0) throw ConfigError("mask spec: rate outside [0,1]");
    return s;
}

Mask sample_mask_bernoulli(const std::vector<double>& x, double rate, Rng& rng) {
    if (rate < 0.0 || rate > 1.0) throw ConfigError("bernoulli mask: rate outside [0,1]");
    Mask b(x.size(), 0);
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (std::isnan(x[i])) {
            b[i] = 1;  // missing is always unobserved
        } else {
            b[i] = uniform01(rng) < rate ? 1 : 0;
        }
    }
    return b;
}

Mask sample_mask_rectangular(std::size_t h, std::size_t w, Rng& rng) {
    if (h < 2 || w < 2) throw ConfigError("rectangular mask: image must be at least 2x2");
    std::uniform_int_distribution<std::size_t> row(0, h - 1), col(0, w - 1);
    for (int attempt = 0; attempt < 10000; ++attempt) {
        std::size_t r1 = row(rng), r2 = row(rng), c1 = col(rng), c2 = col(rng);
        if (r1 > r2) std::swap(r1, r2);
        if (c1 > c2) std::swap(c1, c2);
        const std::size_t area = (r2 - r1 + 1) * (c2 - c1 + 1);
        if (area * 4 < h * w) continue;
        Mask b(h * w, 0);
        for (std::size_t r = r1; r <= r2; ++r) {
            for (std::size_t c = c1; c <= c2; ++c) b[r * w + c] = 1;
        }
        return b;
    }
    throw Error("rectangular mask: rejection budget exceeded");
}

Mask sample_mask_line(std::size_t h, std::size_t w, std::size_t width, Rng& rng) {
    if (width > h) throw ConfigError("line mask: band wider than image");
    std::uniform_int_distribution<std::size_t> off(0, h - width);
    const std::size_t offset = off(rng);
    Mask b(h * w, 1);
    for (std::size_t r = offset; r < offset + width; ++r) {
        for (std::size_t c = 0; c < w; ++c) b[r * w + c] = 0;
    }
    return b;
}

namespace {

// Catmull-Rom cubic kernel weights for fractional position t over the four
// taps at offsets -1, 0, 1, 2.
void cubic_weights(double t, double out[4]) {
    const double t2 = t * t, t3 = t2 * t;
    out[0] = -0.5 * t3 + t2 - 0.5 * t;
    out[1] = 1.5 * t3 - 2.5 * t2 + 1.0;
    out[2] = -1.5 * t3 + 2.0 * t2 + 0.5 * t;
    out[3] = 0.5 * t3 - 0.5 * t2;
}

constexpr std::size_t kPatternNoise = 600;
constexpr std::size_t kPatternFull = 10000;
constexpr std::size_t kPatternCrop = 64;

double bicubic_at(const std::vector<double>& noise, std::size_t nh, std::size_t nw,
                  double sy, double sx) {
    const double fy = std::floor(sy), fx = std::floor(sx);
    double wy[4], wx[4];
    cubic_weights(sy - fy, wy);
    cubic_weights(sx - fx, wx);
    auto clampi = [](long v, long hi) { return std::clamp(v, 0l, hi); };
    double acc = 0.0;
    for (int j = 0; j < 4; ++j) {
        const long r = clampi(static_cast<long>(fy) + j - 1, static_cast<long>(nh) - 1);
        double rowacc = 0.0;
        for (int i = 0; i < 4; ++i) {
            const long c = clampi(static_cast<long>(fx) + i - 1, static_cast<long>(nw) - 1);
            rowacc += wx[i] * noise[static_cast<std::size_t>(r) * nw + c];
        }
        acc += wy[j] * rowacc;
    }
    return acc;
}

}  // namespace

Mask pattern_crop(const std::vector<double>& noise, std::size_t nh, std::size_t nw,
                  std::size_t crop_y, std::size_t crop_x) {
    if (noise.size() != nh * nw) throw ShapeError("pattern mask: noise size mismatch");
    // Upsampled pixel (Y, X) samples the noise field at the standard
    // half-pixel-aligned source coordinate; only crop pixels are evaluated.
    const double sy_scale = static_cast<double>(nh) / kPatternFull;
    const double sx_scale = static_cast<double>(nw) / kPatternFull;
    Mask b(kPatternCrop * kPatternCrop, 0);
    for (std::size_t r = 0; r < kPatternCrop; ++r) {
        const double sy = (static_cast<double>(crop_y + r) + 0.5) * sy_scale - 0.5;
        for (std::size_t c = 0; c < kPatternCrop; ++c) {
            const double sx = (static_cast<double>(crop_x + c) + 0.5) * sx_scale - 0.5;
            const double v = bicubic_at(noise, nh, nw, sy, sx);
            b[r * kPatternCrop + c] = v < 0.25 ? 1 : 0;  // below threshold = unobserved
        }
    }
    return b;
}

Mask sample_mask_pattern_from_noise(const std::vector<double>& noise, std::size_t nh,
                                    std::size_t nw, Rng& rng, int budget) {
    std::uniform_int_distribution<std::size_t> pos(0, kPatternFull - kPatternCrop);
    for (int attempt = 0; attempt < budget; ++attempt) {
        Mask b = pattern_crop(noise, nh, nw, pos(rng), pos(rng));
        const double frac = mask_fraction(b);
        if (frac >= 0.2 && frac <= 0.3) return b;
    }
    throw Error("pattern mask: rejection budget exceeded");
}

Mask sample_mask_pattern(Rng& rng) {
    std::vector<double> noise(kPatternNoise * kPatternNoise);
    for (double& v : noise) v = uniform01(rng);
    return sample_mask_pattern_from_noise(noise, kPatternNoise, kPatternNoise, rng);
}

Mask sample_mask_fixed(const MaskSpec& spec, Rng& rng) {
    const std::size_t h = spec.h, w = spec.w;
    if (h == 0 || w == 0) throw ConfigError("image mask: dims not set");
    Mask b(h * w, 0);
    switch (spec.kind) {
        case MaskSpec::Kind::kCenter: {
            const std::size_t ch = h / 2, cw = w / 2;
            const std::size_t r0 = (h - ch) / 2, c0 = (w - cw) / 2;
            for (std::size_t r = r0; r < r0 + ch; ++r) {
                for (std::size_t c = c0; c < c0 + cw; ++c) b[r * w + c] = 1;
            }
            return b;
        }
        case MaskSpec::Kind::kHalf: {
            std::uniform_int_distribution<int> which(0, 3);
            switch (which(rng)) {
                case 0:  // top
                    std::fill(b.begin(), b.begin() + static_cast<long>(h / 2 * w), 1);
                    break;
                case 1:  // bottom
                    std::fill(b.begin() + static_cast<long>((h - h / 2) * w), b.end(), 1);
                    break;
                case 2:  // left
                    for (std::size_t r = 0; r < h; ++r) {
                        for (std::size_t c = 0; c < w / 2; ++c) b[r * w + c] = 1;
                    }
                    break;
                default:  // right
                    for (std::size_t r = 0; r < h; ++r) {
                        for (std::size_t c = w - w / 2; c < w; ++c) b[r * w + c] = 1;
                    }
            }
            return b;
        }
        case MaskSpec::Kind::kRandomBernoulli: {
            for (auto& v : b) v = uniform01(rng) < spec.rate ? 1 : 0;
            return b;
        }
        case MaskSpec::Kind::kFixedRegion: {
            if (spec.x1 > spec.x2 || spec.y1 > spec.y2 || spec.x2 >= w || spec.y2 >= h) {
                throw ConfigError("fixed_region mask: region outside image bounds");
            }
            for (std::size_t r = spec.y1; r <= spec.y2; ++r) {
                for (std::size_t c = spec.x1; c <= spec.x2; ++c) b[r * w + c] = 1;
            }
            return b;
        }
        default:
            throw ConfigError("sample_mask_fixed: spec kind is not a fixed image mask");
    }
}

Mask um_mask_transform_with_u(const Mask& b0, double u, Rng& rng) {
    Mask b(b0.size(), 0);
    for (std::size_t i = 0; i < b0.size(); ++i) {
        b[i] = (b0[i] != 0 && uniform01(rng) < u) ? 1 : 0;
    }
    return b;
}

Mask um_mask_transform(const Mask& b0, Rng& rng) {
    const double u = uniform01(rng);
    return um_mask_transform_with_u(b0, u, rng);
}

void force_missing_unobserved(Mask& b, const std::vector<double>& x) {
    if (b.size() != x.size()) throw ShapeError("missing union: mask/instance length mismatch");
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (std::isnan(x[i])) b[i] = 1;
    }
}

Mask missing_mask(const std::vector<double>& x) {
    Mask m(x.size(), 0);
    for (std::size_t i = 0; i < x.size(); ++i) m[i] = std::isnan(x[i]) ? 1 : 0;
    return m;
}

Mask sample_mask(const MaskSpec& spec, const std::vector<double>& x, Rng& rng) {
    Mask b;
    switch (spec.kind) {
        case MaskSpec::Kind::kBernoulli:
            if (x.empty()) throw ConfigError("bernoulli mask: instance required");
            return sample_mask_bernoulli(x, spec.rate, rng);
        case MaskSpec::Kind::kRectangular:
            b = sample_mask_rectangular(spec.h, spec.w, rng);
            break;
        case MaskSpec::Kind::kLine:
            b = sample_mask_line(spec.h, spec.w, spec.line_width, rng);
            break;
        case MaskSpec::Kind::kPattern:
            if (!((spec.h == 0 && spec.w == 0) || (spec.h == 64 && spec.w == 64))) {
                throw ConfigError("pattern mask: defined for 64x64 images");
            }
            b = sample_mask_pattern(rng);
            break;
        default:
            b = sample_mask_fixed(spec, rng);
    }
    if (!x.empty()) force_missing_unobserved(b, x);
    return b;
}

}  // namespace vaeac
