// SPDX-License-Identifier: Apache-2.0
//
// Virtual-scatterer parameterization and the forward map from scatterer
// parameters to per-grid average channel power gain.

#pragma once

#include "vscat/geometry.hpp"

#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace vscat {

/// Raised when a prediction needs a response coefficient that has not been
/// estimated or inferred yet.
class MissingCoefficientError : public std::runtime_error {
public:
    struct Entry {
        int scatterer; // 0-based virtual scatterer index
        int sector;    // 0-based sector
        int grid;      // dense grid index, -1 if not tied to a grid
    };

    explicit MissingCoefficientError(std::vector<Entry> entries)
        : std::runtime_error(describe(entries)), entries_(std::move(entries)) {}

    const std::vector<Entry>& entries() const { return entries_; }

private:
    static std::string describe(const std::vector<Entry>& entries) {
        std::string msg = "missing scatterer response coefficient(s):";
        const std::size_t shown = std::min<std::size_t>(entries.size(), 8);
        for (std::size_t k = 0; k < shown; ++k) {
            msg += " (scatterer " + std::to_string(entries[k].scatterer) + ", sector " +
                   std::to_string(entries[k].sector);
            if (entries[k].grid >= 0) msg += ", grid " + std::to_string(entries[k].grid);
            msg += ")";
        }
        if (entries.size() > shown) msg += " ... " + std::to_string(entries.size() - shown) + " more";
        return msg;
    }

    std::vector<Entry> entries_;
};

/// beta0 / |s - c|^alpha.
inline double path_gain(const Point3& s, const Point3& c, double beta0, double alpha) {
    const double d = (s - c).norm();
    if (d == 0.0) throw std::invalid_argument("path_gain: coincident points");
    return beta0 / std::pow(d, alpha);
}

/// Point scatterer with per-sector response coefficients. Visibility to the
/// grid is inherited from the anchor physical scatterer.
struct VirtualScatterer {
    Point3 position = Point3::Zero();
    int anchor_id = 0;
    std::vector<std::optional<double>> src; // one slot per AoD sector

    int defined_count() const {
        int n = 0;
        for (const auto& v : src) n += v.has_value();
        return n;
    }
};

struct VirtualScattererSet {
    AodSectorization sectors;
    std::vector<VirtualScatterer> items;

    int size() const { return static_cast<int>(items.size()); }

    VirtualScatterer& add(const Point3& position, int anchor_id) {
        items.push_back(VirtualScatterer{position, anchor_id, std::vector<std::optional<double>>(sectors.count())});
        return items.back();
    }

    /// Throws std::invalid_argument when an anchor is unknown, an SRC vector
    /// has the wrong length or a defined entry is not finite.
    void validate(const Scene& scene) const {
        for (int k = 0; k < size(); ++k) {
            const auto& v = items[k];
            if (!scene.find(v.anchor_id)) {
                throw std::invalid_argument("virtual scatterer " + std::to_string(k) + ": unknown anchor id " +
                                            std::to_string(v.anchor_id));
            }
            if (static_cast<int>(v.src.size()) != sectors.count()) {
                throw std::invalid_argument("virtual scatterer " + std::to_string(k) + ": SRC length mismatch");
            }
            for (const auto& s : v.src) {
                if (s && !std::isfinite(*s)) {
                    throw std::invalid_argument("virtual scatterer " + std::to_string(k) + ": non-finite SRC");
                }
            }
        }
    }
};

/// Position constraint for virtual scatterers.
struct ConstraintRegion {
    enum class Mode { anchor_dilated, scene_region, fixed_box };

    Mode mode = Mode::anchor_dilated;
    double margin = 20.0; // meters, for anchor_dilated
    Box box;              // for fixed_box

    /// Feasible box for a virtual scatterer anchored at `anchor_id`.
    Box for_anchor(const Scene& scene, int anchor_id) const {
        switch (mode) {
        case Mode::scene_region:
            return scene.region;
        case Mode::fixed_box:
            return box.intersected(scene.region);
        case Mode::anchor_dilated:
        default:
            return scene.at(anchor_id).box.dilated(margin).intersected(scene.region);
        }
    }
};

/// Channel gain map over the valid grids, indexed densely like GridMap.
struct Cgm {
    std::vector<double> gain;

    int size() const { return static_cast<int>(gain.size()); }

    /// Export view: negative estimates are clamped to zero.
    Cgm clamped() const {
        Cgm out = *this;
        for (auto& g : out.gain) g = std::max(g, 0.0);
        return out;
    }
};

/// Direct-path gain of the tx at grid i (0 when the tx is not visible).
inline double tx_path_power(const GridMap& grid, int i, const Scene& scene) {
    if (!grid.sees(i, kTxId)) return 0.0;
    return path_gain(scene.tx, grid.centers[i], scene.beta0, scene.alpha);
}

/// Gain of the last-hop path from virtual scatterer k to grid i; 0 when the
/// anchor has no line of sight to the grid.
inline double scatterer_path_power(const VirtualScattererSet& vs, int k, const GridMap& grid, int i,
                                   const Scene& scene) {
    const auto& v = vs.items[k];
    if (!grid.sees(i, v.anchor_id)) return 0.0;
    const int m = sector_index(aod_of(v.position, grid.centers[i]), vs.sectors);
    if (!v.src[m]) throw MissingCoefficientError({{k, m, i}});
    return *v.src[m] * path_gain(v.position, grid.centers[i], scene.beta0, scene.alpha);
}

/// Sum of visible path powers at grid i, tx included with unit response.
inline double predict_gain(const VirtualScattererSet& vs, const GridMap& grid, int i, const Scene& scene) {
    double q = tx_path_power(grid, i, scene);
    std::vector<MissingCoefficientError::Entry> missing;
    for (int k = 0; k < vs.size(); ++k) {
        try {
            q += scatterer_path_power(vs, k, grid, i, scene);
        } catch (const MissingCoefficientError& e) {
            missing.insert(missing.end(), e.entries().begin(), e.entries().end());
        }
    }
    if (!missing.empty()) throw MissingCoefficientError(std::move(missing));
    return q;
}

inline Cgm predict_map(const VirtualScattererSet& vs, const GridMap& grid, const Scene& scene) {
    Cgm out;
    out.gain.resize(grid.size());
    std::vector<MissingCoefficientError::Entry> missing;
    for (int i = 0; i < grid.size(); ++i) {
        try {
            out.gain[i] = predict_gain(vs, grid, i, scene);
        } catch (const MissingCoefficientError& e) {
            missing.insert(missing.end(), e.entries().begin(), e.entries().end());
        }
    }
    if (!missing.empty()) throw MissingCoefficientError(std::move(missing));
    return out;
}

} // namespace vscat
