#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vaeac/common.hpp"

namespace vaeac {

// Unobserved-feature mask: 1 = unobserved (to be generated), 0 = observed.
using Mask = std::vector<std::uint8_t>;

std::size_t mask_popcount(const Mask& b);
double mask_fraction(const Mask& b);

// Which mask distribution to draw from, parsed from run configs.
struct MaskSpec {
    enum class Kind {
        kBernoulli,        // per-feature Bernoulli(rate), missing-forced
        kRectangular,      // random rectangle, area >= hw/4
        kLine,             // observed horizontal band of `width` rows
        kCenter,           // centered h/2 x w/2 square unobserved
        kHalf,             // one of 4 image halves, equiprobable
        kRandomBernoulli,  // pixelwise Bernoulli(rate), image variant
        kPattern,          // thresholded upsampled noise, 64x64 crops
        kFixedRegion,      // inclusive [x1,x2] cols x [y1,y2] rows
    };

    Kind kind{Kind::kBernoulli};
    double rate{0.2};             // bernoulli / random_bernoulli
    std::size_t line_width{3};    // line
    std::size_t h{0}, w{0};       // image dims when applicable
    std::size_t x1{0}, x2{0}, y1{0}, y2{0};  // fixed_region, inclusive bounds

    // Accepts e.g. "bernoulli(0.2)", "line(3)", "fixed_region(33,70,52,115)",
    // "center", "half", "pattern", "random_bernoulli(0.8)", "rectangular".
    static MaskSpec parse(const std::string& text);
};

// Individual samplers. All are pure given the rng handle.

// b_i = 1 with probability `rate` where x_i is present; forced to 1 where
// x_i is the missing marker (NaN).
Mask sample_mask_bernoulli(const std::vector<double>& x, double rate, Rng& rng);

// Two uniform corner pixels, sorted per axis, inclusive rectangle; rejected
// until its pixel count reaches hw/4. Budgeted retries.
Mask sample_mask_rectangular(std::size_t h, std::size_t w, Rng& rng);

// Observed pixels form a `width`-row horizontal band at a uniform offset;
// everything else is unobserved.
Mask sample_mask_line(std::size_t h, std::size_t w, std::size_t width, Rng& rng);

// 600x600 uniform noise, bicubic upsampling to 10000x10000 (evaluated lazily
// on the crop only), threshold 0.25 (below = unobserved), random 64x64 crop,
// rejected unless the unobserved fraction lands in [0.2, 0.3].
Mask sample_mask_pattern(Rng& rng);
// Same rejection loop over crops of a caller-provided noise field.
Mask sample_mask_pattern_from_noise(const std::vector<double>& noise, std::size_t nh,
                                    std::size_t nw, Rng& rng, int budget = 10000);
// One deterministic crop (no rejection); exposed for the sampling audits.
Mask pattern_crop(const std::vector<double>& noise, std::size_t nh, std::size_t nw,
                  std::size_t crop_y, std::size_t crop_x);

// center / half / random_bernoulli / fixed_region dispatch.
Mask sample_mask_fixed(const MaskSpec& spec, Rng& rng);

// b = b0 ∘ b1 with b1 i.i.d. Bernoulli(u) for one shared u ~ U[0,1].
// Makes every popcount reachable during marginalizer training.
Mask um_mask_transform(const Mask& b0, Rng& rng);
Mask um_mask_transform_with_u(const Mask& b0, double u, Rng& rng);

// Post-step union with the instance's missing cells (NaN marker): any
// missing feature is always unobserved.
void force_missing_unobserved(Mask& b, const std::vector<double>& x);

// 1 exactly at the missing cells of x.
Mask missing_mask(const std::vector<double>& x);

// Top-level dispatch per spec; applies the missing union when x is given.
// For kBernoulli, x must be non-empty (it defines D and the missing cells).
Mask sample_mask(const MaskSpec& spec, const std::vector<double>& x, Rng& rng);

}  // namespace vaeac
