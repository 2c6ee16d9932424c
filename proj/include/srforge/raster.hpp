#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <tuple>
#include <vector>

#include "srforge/common.hpp"

namespace srforge {

/// Multi-band floating point image, band-sequential row-major storage.
/// Pixel math is carried out in double precision; the on-disk payload is
/// single precision (see io.hpp).
struct Raster {
    int width = 0;
    int height = 0;
    int bands = 0;
    std::vector<double> data;            // bands * height * width
    std::optional<double> gsd;           // ground sampling distance, m/pixel
    int nominal_bit_depth = 8;           // source sampling depth, 8 or 12

    Raster() = default;
    Raster(int w, int h, int b, double fill = 0.0)
        : width(w), height(h), bands(b), data(std::size_t(w) * h * b, fill) {
        require(w > 0 && h > 0 && b > 0, "raster", "dimensions must be positive");
    }

    std::size_t plane_size() const { return std::size_t(width) * height; }
    std::size_t size() const { return plane_size() * bands; }

    double& at(int band, int row, int col) {
        return data[std::size_t(band) * plane_size() + std::size_t(row) * width + col];
    }
    double at(int band, int row, int col) const {
        return data[std::size_t(band) * plane_size() + std::size_t(row) * width + col];
    }

    const double* plane(int band) const { return data.data() + std::size_t(band) * plane_size(); }
    double* plane(int band) { return data.data() + std::size_t(band) * plane_size(); }

    void validate() const {
        require(data.size() == size(), "raster", "data length != width*height*bands");
        if (gsd) require(*gsd > 0.0, "raster", "gsd must be positive");
    }
};

/// Side length of the anti-alias mean filter. Derived from the ratio of the
/// target and source ground sampling distances; must be odd.
struct BoxKernelSpec {
    int n = 1;

    static BoxKernelSpec from_gsd_ratio(double source_gsd, double target_gsd, bool* adjusted = nullptr) {
        require(source_gsd > 0 && target_gsd > 0, "raster", "gsd values must be positive");
        const double ratio = target_gsd / source_gsd;
        int n = int(std::llround(ratio));
        bool warn = std::abs(ratio - n) > 1e-9;
        if (n < 1) n = 1;
        if (n % 2 == 0) {
            n += 1; // nearest odd, ties resolved upward
            warn = true;
        }
        if (adjusted) *adjusted = warn;
        return BoxKernelSpec{n};
    }
};

struct Histogram {
    int bin_count = 0;
    std::vector<double> bin_edges;   // bin_count + 1 monotone edges on [0,1]
    std::vector<std::int64_t> counts;
    std::vector<double> cdf;         // normalized cumulative counts, last == 1

    double bin_center(int i) const { return 0.5 * (bin_edges[i] + bin_edges[i + 1]); }
};

enum class NormalizeMode { FixedRange, PerImageMinMax };

struct NormalizeResult {
    Raster raster;
    std::vector<int> constant_bands; // per-image mode: bands collapsed to 0.0
};

/// Map raw sensor counts into [0, 1]. Fixed-range mode divides by
/// 2^bit_depth - 1; per-image mode stretches each band's observed min/max.
inline NormalizeResult normalize(const Raster& r, NormalizeMode mode) {
    r.validate();
    NormalizeResult out;
    out.raster = r;
    if (mode == NormalizeMode::FixedRange) {
        require(r.nominal_bit_depth == 8 || r.nominal_bit_depth == 12, "raster",
                "fixed-range normalization requires bit depth 8 or 12");
        const double scale = 1.0 / (double((std::int64_t(1) << r.nominal_bit_depth)) - 1.0);
        for (double& v : out.raster.data) v = std::clamp(v * scale, 0.0, 1.0);
        return out;
    }
    for (int b = 0; b < r.bands; ++b) {
        const double* src = r.plane(b);
        double* dst = out.raster.plane(b);
        double lo = src[0], hi = src[0];
        for (std::size_t i = 0; i < r.plane_size(); ++i) {
            lo = std::min(lo, src[i]);
            hi = std::max(hi, src[i]);
        }
        if (hi == lo) {
            std::fill(dst, dst + r.plane_size(), 0.0);
            out.constant_bands.push_back(b);
            continue;
        }
        const double scale = 1.0 / (hi - lo);
        for (std::size_t i = 0; i < r.plane_size(); ++i) dst[i] = (src[i] - lo) * scale;
    }
    return out;
}

/// Arithmetic mean filter with an n x n box kernel and edge replication.
/// Output dimensions equal input dimensions.
inline Raster box_filter(const Raster& r, const BoxKernelSpec& k) {
    r.validate();
    require(k.n >= 1 && k.n % 2 == 1, "raster", "box kernel side must be odd and positive");
    require(k.n <= std::min(r.width, r.height), "raster",
            "box kernel larger than image (" + std::to_string(k.n) + " px)");
    const int half = k.n / 2;
    const int pw = r.width + 2 * half, ph = r.height + 2 * half;
    Raster out = r;

    // Replicated-border padding followed by a 2-D prefix sum; each output
    // pixel is a four-corner difference divided by n^2.
    std::vector<double> padded(std::size_t(pw) * ph);
    std::vector<double> integral(std::size_t(pw + 1) * (ph + 1), 0.0);
    const double inv_area = 1.0 / (double(k.n) * k.n);
    for (int b = 0; b < r.bands; ++b) {
        for (int y = 0; y < ph; ++y) {
            const int sy = std::clamp(y - half, 0, r.height - 1);
            for (int x = 0; x < pw; ++x) {
                const int sx = std::clamp(x - half, 0, r.width - 1);
                padded[std::size_t(y) * pw + x] = r.at(b, sy, sx);
            }
        }
        for (int y = 1; y <= ph; ++y) {
            double row_sum = 0.0;
            for (int x = 1; x <= pw; ++x) {
                row_sum += padded[std::size_t(y - 1) * pw + (x - 1)];
                integral[std::size_t(y) * (pw + 1) + x] =
                    integral[std::size_t(y - 1) * (pw + 1) + x] + row_sum;
            }
        }
        for (int y = 0; y < r.height; ++y) {
            for (int x = 0; x < r.width; ++x) {
                const int y0 = y, y1 = y + k.n, x0 = x, x1 = x + k.n;
                const double sum = integral[std::size_t(y1) * (pw + 1) + x1]
                                 - integral[std::size_t(y0) * (pw + 1) + x1]
                                 - integral[std::size_t(y1) * (pw + 1) + x0]
                                 + integral[std::size_t(y0) * (pw + 1) + x0];
                out.at(b, y, x) = sum * inv_area;
            }
        }
    }
    return out;
}

namespace detail {

/// Keys cubic convolution kernel, a = -0.5.
inline double keys_weight(double t) {
    constexpr double a = -0.5;
    t = std::abs(t);
    if (t <= 1.0) return ((a + 2.0) * t - (a + 3.0)) * t * t + 1.0;
    if (t < 2.0) return ((a * t - 5.0 * a) * t + 8.0 * a) * t - 4.0 * a;
    return 0.0;
}

/// Bicubic sample at continuous source pixel coordinates (edge clamped).
inline double bicubic_sample(const double* plane, int w, int h, double sx, double sy) {
    const int ix = int(std::floor(sx));
    const int iy = int(std::floor(sy));
    const double fx = sx - ix, fy = sy - iy;
    double wx[4], wy[4];
    for (int k = 0; k < 4; ++k) {
        wx[k] = keys_weight(fx - (k - 1));
        wy[k] = keys_weight(fy - (k - 1));
    }
    double value = 0.0;
    for (int ky = 0; ky < 4; ++ky) {
        const int yy = std::clamp(iy + ky - 1, 0, h - 1);
        double row = 0.0;
        for (int kx = 0; kx < 4; ++kx) {
            const int xx = std::clamp(ix + kx - 1, 0, w - 1);
            row += wx[kx] * plane[std::size_t(yy) * w + xx];
        }
        value += wy[ky] * row;
    }
    return value;
}

} // namespace detail

/// Resample with the Keys bicubic kernel (a = -0.5), pixel-center aligned:
/// src = (dst + 0.5) * size_ratio - 0.5, so a scale-1 resample reproduces the
/// input exactly.
inline Raster bicubic_resample(const Raster& r, int target_w, int target_h) {
    r.validate();
    require(target_w >= 1 && target_h >= 1, "raster", "target dimensions must be >= 1");
    Raster out(target_w, target_h, r.bands);
    out.nominal_bit_depth = r.nominal_bit_depth;
    if (r.gsd) out.gsd = *r.gsd * double(r.width) / double(target_w);
    const double rx = double(r.width) / target_w;
    const double ry = double(r.height) / target_h;
    for (int b = 0; b < r.bands; ++b) {
        const double* src = r.plane(b);
        double* dst = out.plane(b);
        for (int y = 0; y < target_h; ++y) {
            const double sy = (y + 0.5) * ry - 0.5;
            for (int x = 0; x < target_w; ++x) {
                const double sx = (x + 0.5) * rx - 0.5;
                dst[std::size_t(y) * target_w + x] =
                    detail::bicubic_sample(src, r.width, r.height, sx, sy);
            }
        }
    }
    return out;
}

/// Histogram of one band over [0, 1].
inline Histogram compute_histogram(const double* values, std::size_t count, int bins) {
    require(bins >= 2, "raster", "histogram needs at least 2 bins");
    Histogram h;
    h.bin_count = bins;
    h.bin_edges.resize(bins + 1);
    for (int i = 0; i <= bins; ++i) h.bin_edges[i] = double(i) / bins;
    h.counts.assign(bins, 0);
    for (std::size_t i = 0; i < count; ++i) {
        int bin = int(values[i] * bins);
        bin = std::clamp(bin, 0, bins - 1);
        ++h.counts[bin];
    }
    h.cdf.resize(bins);
    double running = 0.0;
    for (int i = 0; i < bins; ++i) {
        running += double(h.counts[i]);
        h.cdf[i] = running / double(count);
    }
    if (count > 0) h.cdf[bins - 1] = 1.0;
    return h;
}

namespace detail {

/// Piecewise-linear inverse of a reference CDF sampled at bin centers.
/// Queries at or above the total mass land on the highest populated bin
/// center.
inline double inverse_cdf(const Histogram& h, double q) {
    int last = -1;
    double prev_cdf = 0.0, prev_center = h.bin_center(0);
    for (int i = 0; i < h.bin_count; ++i) {
        if (h.counts[i] == 0) continue;
        const double c = h.bin_center(i);
        if (q <= h.cdf[i]) {
            if (last < 0 || h.cdf[i] == prev_cdf) return c;
            const double t = (q - prev_cdf) / (h.cdf[i] - prev_cdf);
            return t <= 0.0 ? prev_center : prev_center + t * (c - prev_center);
        }
        prev_cdf = h.cdf[i];
        prev_center = c;
        last = i;
    }
    return last >= 0 ? h.bin_center(last) : 0.0;
}

} // namespace detail

/// Per-band histogram matching T(v) = CDF_ref^-1(CDF_src(v)). The source CDF
/// is evaluated at the bin level (step convention), the reference inverse is
/// piecewise linear across populated bin centers; T is monotone
/// non-decreasing per band.
inline Raster histogram_match(const Raster& source, const Raster& reference, int bins = 256) {
    source.validate();
    reference.validate();
    require(source.bands == reference.bands, "raster", "band counts must match");
    require(bins >= 2, "raster", "histogram matching needs at least 2 bins");
    for (const double v : source.data)
        require(v >= 0.0 && v <= 1.0, "raster", "histogram matching expects normalized input");
    for (const double v : reference.data)
        require(v >= 0.0 && v <= 1.0, "raster", "histogram matching expects normalized input");

    Raster out = source;
    for (int b = 0; b < source.bands; ++b) {
        const Histogram hs = compute_histogram(source.plane(b), source.plane_size(), bins);
        const Histogram hr = compute_histogram(reference.plane(b), reference.plane_size(), bins);
        // Per-bin lookup table: all values in a source bin map to the same
        // reference quantile, which keeps the mapping monotone.
        std::vector<double> lut(bins);
        for (int i = 0; i < bins; ++i) lut[i] = detail::inverse_cdf(hr, hs.cdf[i]);
        double* dst = out.plane(b);
        for (std::size_t i = 0; i < out.plane_size(); ++i) {
            int bin = int(dst[i] * bins);
            bin = std::clamp(bin, 0, bins - 1);
            dst[i] = lut[bin];
        }
    }
    return out;
}

struct PatchRef {
    int row = 0;
    int col = 0;
    Raster patch;
};

/// Row-major patch grid; partial edge patches are dropped.
inline std::vector<PatchRef> extract_patch_grid(const Raster& r, int patch, int stride) {
    r.validate();
    require(patch >= 1 && patch <= std::min(r.width, r.height), "raster",
            "patch size must fit inside the raster");
    require(stride >= 1, "raster", "stride must be >= 1");
    std::vector<PatchRef> out;
    for (int y = 0; y + patch <= r.height; y += stride) {
        for (int x = 0; x + patch <= r.width; x += stride) {
            PatchRef ref;
            ref.row = y;
            ref.col = x;
            ref.patch = Raster(patch, patch, r.bands);
            ref.patch.gsd = r.gsd;
            ref.patch.nominal_bit_depth = r.nominal_bit_depth;
            for (int b = 0; b < r.bands; ++b)
                for (int py = 0; py < patch; ++py)
                    for (int px = 0; px < patch; ++px)
                        ref.patch.at(b, py, px) = r.at(b, y + py, x + px);
            out.push_back(std::move(ref));
        }
    }
    return out;
}

} // namespace srforge
