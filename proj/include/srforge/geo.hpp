#pragma once

#include <array>
#include <memory>
#include <string>
#include <vector>

#include "srforge/raster.hpp"

namespace srforge {

struct Point {
    double x = 0.0;
    double y = 0.0;
};

/// Affine pixel grid anchor. `origin` is the world position of the top-left
/// corner of pixel (0,0); pixel centers sit at origin + (index + 0.5) * size.
struct GeoAnchor {
    double origin_x = 0.0;
    double origin_y = 0.0;
    double pixel_size_x = 1.0;
    double pixel_size_y = -1.0; // negative for north-up grids
    std::string crs_id;

    void validate() const {
        require(pixel_size_x != 0.0 && pixel_size_y != 0.0, "geo", "pixel sizes must be nonzero");
    }

    Point pixel_to_world(double col, double row) const {
        return {origin_x + (col + 0.5) * pixel_size_x, origin_y + (row + 0.5) * pixel_size_y};
    }
    Point world_to_pixel(const Point& p) const {
        return {(p.x - origin_x) / pixel_size_x - 0.5, (p.y - origin_y) / pixel_size_y - 0.5};
    }
};

/// Point mapping between two coordinate reference systems. Shipped
/// implementations cover the testable part of registration (identity, affine,
/// composed chains); full datum mathematics plug in behind this interface.
class CoordinateTransform {
public:
    virtual ~CoordinateTransform() = default;
    virtual Point forward(const Point& p) const = 0;
    virtual Point inverse(const Point& p) const = 0;
    virtual std::string source_crs() const = 0;
    virtual std::string target_crs() const = 0;
};

class IdentityTransform final : public CoordinateTransform {
public:
    explicit IdentityTransform(std::string crs = "local") : crs_(std::move(crs)) {}
    Point forward(const Point& p) const override { return p; }
    Point inverse(const Point& p) const override { return p; }
    std::string source_crs() const override { return crs_; }
    std::string target_crs() const override { return crs_; }

private:
    std::string crs_;
};

/// world' = M * world + offset, with M a 2x2 matrix.
class AffineTransform final : public CoordinateTransform {
public:
    AffineTransform(std::array<double, 4> m, Point offset,
                    std::string source_crs, std::string target_crs)
        : m_(m), offset_(offset), src_(std::move(source_crs)), dst_(std::move(target_crs)) {
        const double det = m_[0] * m_[3] - m_[1] * m_[2];
        require(std::abs(det) > 1e-15, "geo", "affine transform is singular");
        const double inv_det = 1.0 / det;
        mi_ = {m_[3] * inv_det, -m_[1] * inv_det, -m_[2] * inv_det, m_[0] * inv_det};
    }

    Point forward(const Point& p) const override {
        return {m_[0] * p.x + m_[1] * p.y + offset_.x, m_[2] * p.x + m_[3] * p.y + offset_.y};
    }
    Point inverse(const Point& p) const override {
        const double dx = p.x - offset_.x, dy = p.y - offset_.y;
        return {mi_[0] * dx + mi_[1] * dy, mi_[2] * dx + mi_[3] * dy};
    }
    std::string source_crs() const override { return src_; }
    std::string target_crs() const override { return dst_; }

private:
    std::array<double, 4> m_, mi_;
    Point offset_;
    std::string src_, dst_;
};

class ComposedTransform final : public CoordinateTransform {
public:
    explicit ComposedTransform(std::vector<std::shared_ptr<const CoordinateTransform>> chain)
        : chain_(std::move(chain)) {
        require(!chain_.empty(), "geo", "composed transform needs at least one element");
    }
    Point forward(const Point& p) const override {
        Point q = p;
        for (const auto& t : chain_) q = t->forward(q);
        return q;
    }
    Point inverse(const Point& p) const override {
        Point q = p;
        for (auto it = chain_.rbegin(); it != chain_.rend(); ++it) q = (*it)->inverse(q);
        return q;
    }
    std::string source_crs() const override { return chain_.front()->source_crs(); }
    std::string target_crs() const override { return chain_.back()->target_crs(); }

private:
    std::vector<std::shared_ptr<const CoordinateTransform>> chain_;
};

struct ReprojectResult {
    Raster raster;
    std::vector<std::uint8_t> valid; // per pixel, 1 where the source footprint covers it
};

/// Inverse-mapping resample: every target pixel center is pulled back through
/// the transform into source pixel space and sampled bicubically. Pixels whose
/// pullback lands outside the source footprint are masked invalid.
inline ReprojectResult reproject(const Raster& r, const GeoAnchor& anchor,
                                 const CoordinateTransform& t, const GeoAnchor& target_anchor,
                                 int target_w, int target_h) {
    r.validate();
    anchor.validate();
    target_anchor.validate();
    require(target_w >= 1 && target_h >= 1, "geo", "target dimensions must be >= 1");

    ReprojectResult out;
    out.raster = Raster(target_w, target_h, r.bands);
    out.raster.nominal_bit_depth = r.nominal_bit_depth;
    out.raster.gsd = std::abs(target_anchor.pixel_size_x);
    out.valid.assign(std::size_t(target_w) * target_h, 0);

    std::size_t n_valid = 0;
    for (int y = 0; y < target_h; ++y) {
        for (int x = 0; x < target_w; ++x) {
            const Point world = target_anchor.pixel_to_world(x, y);
            const Point src_world = t.inverse(world);
            const Point sp = anchor.world_to_pixel(src_world);
            const bool inside = sp.x >= -0.5 && sp.x <= r.width - 0.5 &&
                                sp.y >= -0.5 && sp.y <= r.height - 0.5;
            if (!inside) continue;
            out.valid[std::size_t(y) * target_w + x] = 1;
            ++n_valid;
            for (int b = 0; b < r.bands; ++b)
                out.raster.at(b, y, x) =
                    detail::bicubic_sample(r.plane(b), r.width, r.height, sp.x, sp.y);
        }
    }
    if (n_valid == 0) fail("geo", "source footprint does not overlap the target grid");
    return out;
}

struct CropPair {
    Raster hr;
    Raster lr;
    GeoAnchor hr_anchor;
    GeoAnchor lr_anchor;
};

namespace detail {

struct WorldRect {
    double x0, y0, x1, y1; // x0 < x1, y0 < y1
};

inline WorldRect footprint(const Raster& r, const GeoAnchor& a) {
    const double x0 = a.origin_x, x1 = a.origin_x + r.width * a.pixel_size_x;
    const double y0 = a.origin_y, y1 = a.origin_y + r.height * a.pixel_size_y;
    return {std::min(x0, x1), std::min(y0, y1), std::max(x0, x1), std::max(y0, y1)};
}

} // namespace detail

/// Crop both rasters to their shared world footprint, snapped inward to whole
/// LR pixels so LR content is never fractionally sampled. HR dimensions come
/// out in the gsd ratio of the two grids.
inline CropPair intersect_and_crop(const Raster& hr, const GeoAnchor& hr_anchor,
                                   const Raster& lr, const GeoAnchor& lr_anchor) {
    hr.validate();
    lr.validate();
    hr_anchor.validate();
    lr_anchor.validate();
    require(hr_anchor.crs_id == lr_anchor.crs_id, "geo",
            "rasters must share a CRS before cropping (reproject first)");
    require(hr.bands == lr.bands, "geo", "band counts must match");

    const auto fr_hr = detail::footprint(hr, hr_anchor);
    const auto fr_lr = detail::footprint(lr, lr_anchor);
    const double ix0 = std::max(fr_hr.x0, fr_lr.x0), ix1 = std::min(fr_hr.x1, fr_lr.x1);
    const double iy0 = std::max(fr_hr.y0, fr_lr.y0), iy1 = std::min(fr_hr.y1, fr_lr.y1);
    if (ix0 >= ix1 || iy0 >= iy1) fail("geo", "tile footprints do not intersect");

    // Snap the intersection inward to the LR pixel grid. Columns follow
    // pixel_size_x sign conventions via fractional indices.
    const auto snap = [](double world0, double world1, double origin, double step, int limit,
                         int& i0, int& i1) {
        double f0 = (world0 - origin) / step;
        double f1 = (world1 - origin) / step;
        if (f0 > f1) std::swap(f0, f1);
        i0 = std::max(0, int(std::ceil(f0 - 1e-9)));
        i1 = std::min(limit, int(std::floor(f1 + 1e-9)));
    };
    int lc0, lc1, lr0, lr1;
    snap(ix0, ix1, lr_anchor.origin_x, lr_anchor.pixel_size_x, lr.width, lc0, lc1);
    snap(iy0, iy1, lr_anchor.origin_y, lr_anchor.pixel_size_y, lr.height, lr0, lr1);
    if (lc1 <= lc0 || lr1 <= lr0) fail("geo", "intersection smaller than one LR pixel");

    const double ratio = std::abs(lr_anchor.pixel_size_x) / std::abs(hr_anchor.pixel_size_x);
    const int scale = int(std::llround(ratio));
    require(scale >= 1 && std::abs(ratio - scale) < 1e-6, "geo",
            "gsd ratio must be a positive integer");

    // World rect of the snapped LR window.
    const double wx0 = lr_anchor.origin_x + lc0 * lr_anchor.pixel_size_x;
    const double wx1 = lr_anchor.origin_x + lc1 * lr_anchor.pixel_size_x;
    const double wy0 = lr_anchor.origin_y + lr0 * lr_anchor.pixel_size_y;
    const double wy1 = lr_anchor.origin_y + lr1 * lr_anchor.pixel_size_y;

    const auto hr_index = [](double world, double origin, double step) {
        return int(std::llround((world - origin) / step));
    };
    int hc0 = hr_index(wx0, hr_anchor.origin_x, hr_anchor.pixel_size_x);
    int hc1 = hr_index(wx1, hr_anchor.origin_x, hr_anchor.pixel_size_x);
    int hrr0 = hr_index(wy0, hr_anchor.origin_y, hr_anchor.pixel_size_y);
    int hrr1 = hr_index(wy1, hr_anchor.origin_y, hr_anchor.pixel_size_y);
    if (hc0 > hc1) std::swap(hc0, hc1);
    if (hrr0 > hrr1) std::swap(hrr0, hrr1);
    require(hc0 >= 0 && hc1 <= hr.width && hrr0 >= 0 && hrr1 <= hr.height, "geo",
            "snapped window escapes the HR raster");
    require(hc1 - hc0 == (lc1 - lc0) * scale && hrr1 - hrr0 == (lr1 - lr0) * scale, "geo",
            "HR/LR crop dimensions do not follow the gsd ratio (grids misaligned)");

    const auto crop = [](const Raster& src, int c0, int r0, int w, int h) {
        Raster out(w, h, src.bands);
        out.gsd = src.gsd;
        out.nominal_bit_depth = src.nominal_bit_depth;
        for (int b = 0; b < src.bands; ++b)
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) out.at(b, y, x) = src.at(b, r0 + y, c0 + x);
        return out;
    };

    CropPair out;
    out.lr = crop(lr, lc0, lr0, lc1 - lc0, lr1 - lr0);
    out.hr = crop(hr, hc0, hrr0, hc1 - hc0, hrr1 - hrr0);
    out.lr_anchor = lr_anchor;
    out.lr_anchor.origin_x = lr_anchor.origin_x + lc0 * lr_anchor.pixel_size_x;
    out.lr_anchor.origin_y = lr_anchor.origin_y + lr0 * lr_anchor.pixel_size_y;
    out.hr_anchor = hr_anchor;
    out.hr_anchor.origin_x = hr_anchor.origin_x + hc0 * hr_anchor.pixel_size_x;
    out.hr_anchor.origin_y = hr_anchor.origin_y + hrr0 * hr_anchor.pixel_size_y;
    return out;
}

} // namespace srforge
