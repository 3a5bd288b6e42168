// SPDX-License-Identifier: Apache-2.0
//
// Scene description, grid partition of the map plane, line-of-sight tests and
// angle-of-departure sectorization.

#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace vscat {

using Point3 = Eigen::Vector3d;

inline constexpr double kPi = std::numbers::pi;

/// Reserved visibility id of the transmitter.
inline constexpr int kTxId = 0;

// ---------------------------------------------------------------------------
// Box
// ---------------------------------------------------------------------------

/// Axis-aligned box given by its min and max corners (meters).
struct Box {
    Point3 min = Point3::Zero();
    Point3 max = Point3::Zero();

    Point3 center() const { return 0.5 * (min + max); }
    Point3 extent() const { return max - min; }
    double volume() const {
        const Point3 e = extent();
        return e.x() * e.y() * e.z();
    }
    bool has_positive_extent() const { return (max.array() > min.array()).all(); }

    /// Closed containment.
    bool contains(const Point3& p) const {
        return (p.array() >= min.array()).all() && (p.array() <= max.array()).all();
    }
    bool contains(const Box& other) const { return contains(other.min) && contains(other.max); }

    Point3 clamp(const Point3& p) const { return p.cwiseMax(min).cwiseMin(max); }

    Box dilated(double margin) const {
        const Point3 m = Point3::Constant(margin);
        return Box{min - m, max + m};
    }

    /// Intersection; the result may be empty (min > max on some axis).
    Box intersected(const Box& other) const { return Box{min.cwiseMax(other.min), max.cwiseMin(other.max)}; }

    /// True when the horizontal footprints share a region of positive area.
    bool footprint_overlaps(double x0, double x1, double y0, double y1) const {
        return std::min(max.x(), x1) > std::max(min.x(), x0) && std::min(max.y(), y1) > std::max(min.y(), y0);
    }

    bool operator==(const Box&) const = default;
};

/// True when boxes share interior volume.
inline bool boxes_overlap(const Box& a, const Box& b) {
    for (int k = 0; k < 3; ++k) {
        if (std::min(a.max[k], b.max[k]) <= std::max(a.min[k], b.min[k])) return false;
    }
    return true;
}

// ---------------------------------------------------------------------------
// Scene
// ---------------------------------------------------------------------------

struct PhysicalScatterer {
    int id = 0;
    Box box;
};

/// Propagation scene: region, transmitter, dominant scatterers and the
/// power-law constants shared by every line-of-sight path.
struct Scene {
    Box region;
    Point3 tx = Point3::Zero();
    std::vector<PhysicalScatterer> scatterers;
    double beta0 = 1.0;       // reference path power gain at 1 m (linear)
    double alpha = 2.0;       // path-loss exponent
    double wavelength = 0.11; // meters

    /// Throws std::invalid_argument describing the first violated invariant.
    void validate() const {
        if (!region.has_positive_extent()) throw std::invalid_argument("scene: region has non-positive extent");
        if (!region.contains(tx)) throw std::invalid_argument("scene: tx lies outside the region");
        if (!(beta0 > 0.0)) throw std::invalid_argument("scene: beta0 must be > 0");
        if (!(alpha > 0.0)) throw std::invalid_argument("scene: alpha must be > 0");
        if (!(wavelength > 0.0)) throw std::invalid_argument("scene: wavelength must be > 0");
        for (std::size_t a = 0; a < scatterers.size(); ++a) {
            const auto& s = scatterers[a];
            const std::string tag = "scene: scatterer " + std::to_string(s.id);
            if (s.id <= kTxId) throw std::invalid_argument(tag + ": id must be >= 1 (0 is reserved for the tx)");
            if (!s.box.has_positive_extent()) throw std::invalid_argument(tag + ": box has non-positive extent");
            if (!region.contains(s.box)) throw std::invalid_argument(tag + ": box leaves the region");
            if (s.box.contains(tx)) throw std::invalid_argument(tag + ": box contains the tx");
            for (std::size_t b = 0; b < a; ++b) {
                if (scatterers[b].id == s.id) throw std::invalid_argument(tag + ": duplicate id");
            }
        }
    }

    const PhysicalScatterer* find(int id) const {
        for (const auto& s : scatterers) {
            if (s.id == id) return &s;
        }
        return nullptr;
    }

    const PhysicalScatterer& at(int id) const {
        if (const auto* s = find(id)) return *s;
        throw std::invalid_argument("scene: unknown scatterer id " + std::to_string(id));
    }

    /// Scatterers sorted by box volume (descending), ties by id (ascending).
    std::vector<const PhysicalScatterer*> by_size() const {
        std::vector<const PhysicalScatterer*> out;
        out.reserve(scatterers.size());
        for (const auto& s : scatterers) out.push_back(&s);
        std::stable_sort(out.begin(), out.end(), [](const auto* a, const auto* b) {
            const double va = a->box.volume();
            const double vb = b->box.volume();
            if (va != vb) return va > vb;
            return a->id < b->id;
        });
        return out;
    }
};

// ---------------------------------------------------------------------------
// Line of sight
// ---------------------------------------------------------------------------

/// Slab test: does the open segment (a, b) pass through the interior of the
/// box? Grazing contact with a face, edge or corner does not count.
inline bool segment_crosses_box(const Point3& a, const Point3& b, const Box& box) {
    const Point3 d = b - a;
    double t_enter = 0.0;
    double t_exit = 1.0;
    for (int k = 0; k < 3; ++k) {
        if (d[k] == 0.0) {
            if (!(a[k] > box.min[k] && a[k] < box.max[k])) return false;
            continue;
        }
        double t0 = (box.min[k] - a[k]) / d[k];
        double t1 = (box.max[k] - a[k]) / d[k];
        if (t0 > t1) std::swap(t0, t1);
        t_enter = std::max(t_enter, t0);
        t_exit = std::min(t_exit, t1);
        if (!(t_enter < t_exit)) return false;
    }
    return t_enter < t_exit;
}

/// True iff no scatterer box (other than `ignore_id`) blocks the segment.
inline bool los_visible(const Point3& source, const Point3& target, const Scene& scene,
                        std::optional<int> ignore_id = std::nullopt) {
    for (const auto& s : scene.scatterers) {
        if (ignore_id && s.id == *ignore_id) continue;
        if (segment_crosses_box(source, target, s.box)) return false;
    }
    return true;
}

// ---------------------------------------------------------------------------
// Angles of departure
// ---------------------------------------------------------------------------

struct Aod {
    double azimuth = 0.0;   // [-pi, pi)
    double elevation = 0.0; // [-pi/2, pi/2]
};

/// Departure direction of target as seen from source. Straight up/down has
/// azimuth 0.
inline Aod aod_of(const Point3& source, const Point3& target) {
    const Point3 d = target - source;
    if (d.isZero(0.0)) throw std::invalid_argument("aod_of: coincident points");
    const double horizontal = std::hypot(d.x(), d.y());
    Aod out;
    out.elevation = std::atan2(d.z(), horizontal);
    out.azimuth = horizontal == 0.0 ? 0.0 : std::atan2(d.y(), d.x());
    if (out.azimuth >= kPi) out.azimuth -= 2.0 * kPi;
    return out;
}

/// Uniform azimuth x elevation binning of departure directions. Sector
/// indices are 0-based: m = elevation_bin * m_azimuth + azimuth_bin.
struct AodSectorization {
    int m_azimuth = 8;
    int m_elevation = 1;

    int count() const { return m_azimuth * m_elevation; }
    double azimuth_width() const { return 2.0 * kPi / m_azimuth; }
    double elevation_width() const { return kPi / m_elevation; }

    void validate() const {
        if (m_azimuth < 1 || m_elevation < 1) throw std::invalid_argument("sectorization: bin counts must be >= 1");
    }

    bool operator==(const AodSectorization&) const = default;
};

inline int sector_index(const Aod& aod, const AodSectorization& sectors) {
    auto bin = [](double value, double lo, double width, int n) {
        const int b = static_cast<int>(std::floor((value - lo) / width));
        return std::clamp(b, 0, n - 1);
    };
    const int az = bin(aod.azimuth, -kPi, sectors.azimuth_width(), sectors.m_azimuth);
    const int el = bin(aod.elevation, -0.5 * kPi, sectors.elevation_width(), sectors.m_elevation);
    return el * sectors.m_azimuth + az;
}

/// Centroid angle of sector m.
inline Aod sector_center(int m, const AodSectorization& sectors) {
    if (m < 0 || m >= sectors.count()) {
        throw std::invalid_argument("sector_center: sector " + std::to_string(m) + " out of range");
    }
    const int az = m % sectors.m_azimuth;
    const int el = m / sectors.m_azimuth;
    return Aod{-kPi + (az + 0.5) * sectors.azimuth_width(), -0.5 * kPi + (el + 0.5) * sectors.elevation_width()};
}

// ---------------------------------------------------------------------------
// Grid partition
// ---------------------------------------------------------------------------

/// Square-ish grid over the region's horizontal extent on a plane of constant
/// height. Cells are addressed by cell index iy * nx + ix; the valid cells
/// (not occupied by the tx or a scatterer footprint) are numbered densely
/// 0..I-1 in cell-index order.
struct GridMap {
    int nx = 0;
    int ny = 0;
    double side_x = 0.0;
    double side_y = 0.0;
    double plane_height = 0.0;
    double origin_x = 0.0;
    double origin_y = 0.0;

    std::vector<int> valid_cells;          // dense index -> cell index
    std::vector<int> dense_of_cell;        // cell index -> dense index, -1 if occupied
    std::vector<Point3> centers;           // per dense index
    std::vector<std::vector<int>> visible; // per dense index, sorted ids (0 = tx)

    int size() const { return static_cast<int>(valid_cells.size()); }
    int cell_count() const { return nx * ny; }
    int ix_of(int cell) const { return cell % nx; }
    int iy_of(int cell) const { return cell / nx; }

    Point3 cell_center(int cell) const {
        return Point3(origin_x + (ix_of(cell) + 0.5) * side_x, origin_y + (iy_of(cell) + 0.5) * side_y, plane_height);
    }

    bool sees(int dense, int id) const {
        const auto& v = visible[dense];
        return std::binary_search(v.begin(), v.end(), id);
    }
};

/// Partitions the region into nx x ny cells on the plane z = plane_height and
/// computes per-cell visibility of the tx and of each scatterer (from its box
/// center, ignoring its own box).
inline GridMap partition_region(const Scene& scene, int nx, int ny, double plane_height) {
    if (nx < 1 || ny < 1) throw std::invalid_argument("partition_region: grid counts must be >= 1");
    if (plane_height < scene.region.min.z() || plane_height > scene.region.max.z()) {
        throw std::invalid_argument("partition_region: plane height outside the region");
    }
    GridMap g;
    g.nx = nx;
    g.ny = ny;
    g.plane_height = plane_height;
    g.origin_x = scene.region.min.x();
    g.origin_y = scene.region.min.y();
    g.side_x = scene.region.extent().x() / nx;
    g.side_y = scene.region.extent().y() / ny;
    if (g.side_x < scene.wavelength || g.side_y < scene.wavelength) {
        throw std::invalid_argument("partition_region: region too small for the requested grid counts "
                                    "(cell side below one wavelength)");
    }

    const int tx_ix = std::clamp(static_cast<int>(std::floor((scene.tx.x() - g.origin_x) / g.side_x)), 0, nx - 1);
    const int tx_iy = std::clamp(static_cast<int>(std::floor((scene.tx.y() - g.origin_y) / g.side_y)), 0, ny - 1);

    g.dense_of_cell.assign(static_cast<std::size_t>(nx) * ny, -1);
    for (int cell = 0; cell < nx * ny; ++cell) {
        const int ix = cell % nx;
        const int iy = cell / nx;
        if (ix == tx_ix && iy == tx_iy) continue;
        const double x0 = g.origin_x + ix * g.side_x;
        const double y0 = g.origin_y + iy * g.side_y;
        bool occupied = false;
        for (const auto& s : scene.scatterers) {
            if (s.box.footprint_overlaps(x0, x0 + g.side_x, y0, y0 + g.side_y)) {
                occupied = true;
                break;
            }
        }
        if (occupied) continue;
        g.dense_of_cell[cell] = static_cast<int>(g.valid_cells.size());
        g.valid_cells.push_back(cell);
        g.centers.push_back(g.cell_center(cell));
    }

    g.visible.resize(g.valid_cells.size());
    for (std::size_t i = 0; i < g.valid_cells.size(); ++i) {
        auto& v = g.visible[i];
        if (los_visible(scene.tx, g.centers[i], scene)) v.push_back(kTxId);
        for (const auto& s : scene.scatterers) {
            if (los_visible(s.box.center(), g.centers[i], scene, s.id)) v.push_back(s.id);
        }
        std::sort(v.begin(), v.end());
    }
    return g;
}

} // namespace vscat
