// SPDX-License-Identifier: Apache-2.0
//
// Synthetic scenes, ground-truth channel gain maps and measurement sampling.

#pragma once

#include "vscat/channel_model.hpp"
#include "vscat/kernel.hpp"
#include "vscat/seed.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace vscat {

// ---------------------------------------------------------------------------
// Scenes
// ---------------------------------------------------------------------------

struct SceneGenSpec {
    std::uint64_t seed = 1;
    double side = 300.0;        // square region side (m)
    double height = 60.0;       // region height (m)
    int n_scatterers = 30;
    double tx_height = 9.0;
    double min_footprint = 10.0; // box side range (m), scaled by side / 300
    double max_footprint = 40.0;
    double min_box_height = 8.0;
    double max_box_height = 40.0;
    double gap = 5.0;            // minimum street width between boxes (m)
    double wavelength = 0.11;
    double alpha = 2.0;
    std::optional<double> beta0; // free-space (lambda / 4 pi)^2 when unset
    int max_attempts = 1000;     // per box
};

class PlacementError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Rejection-samples non-overlapping boxes around a tx at the region center.
inline Scene generate_scene(const SceneGenSpec& spec) {
    if (spec.n_scatterers < 0) throw std::invalid_argument("generate_scene: n_scatterers must be >= 0");
    if (!(spec.side > 0.0) || !(spec.height > 0.0)) throw std::invalid_argument("generate_scene: bad region size");
    if (spec.tx_height < 0.0 || spec.tx_height > spec.height) {
        throw std::invalid_argument("generate_scene: tx height outside the region");
    }
    Scene scene;
    scene.region = Box{Point3(0, 0, 0), Point3(spec.side, spec.side, spec.height)};
    scene.tx = Point3(0.5 * spec.side, 0.5 * spec.side, spec.tx_height);
    scene.wavelength = spec.wavelength;
    scene.alpha = spec.alpha;
    scene.beta0 = spec.beta0.value_or(std::pow(spec.wavelength / (4.0 * kPi), 2));

    const double scale = spec.side / 300.0;
    const double fmin = spec.min_footprint * scale;
    const double fmax = spec.max_footprint * scale;
    const double margin = spec.gap * scale;
    std::mt19937_64 rng(derive_seed(spec.seed, "scene"));
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    for (int n = 0; n < spec.n_scatterers; ++n) {
        bool placed = false;
        for (int attempt = 0; attempt < spec.max_attempts && !placed; ++attempt) {
            const double wx = fmin + (fmax - fmin) * unit(rng);
            const double wy = fmin + (fmax - fmin) * unit(rng);
            const double h = std::min(spec.min_box_height + (spec.max_box_height - spec.min_box_height) * unit(rng),
                                      spec.height);
            const double span_x = spec.side - 2.0 * margin - wx;
            const double span_y = spec.side - 2.0 * margin - wy;
            if (span_x <= 0.0 || span_y <= 0.0) break;
            const double x0 = margin + span_x * unit(rng);
            const double y0 = margin + span_y * unit(rng);
            const Box box{Point3(x0, y0, 0.0), Point3(x0 + wx, y0 + wy, h)};

            // Keep a street around the tx and between boxes.
            const Box keep_out = box.dilated(margin);
            if (scene.tx.x() >= keep_out.min.x() && scene.tx.x() <= keep_out.max.x() &&
                scene.tx.y() >= keep_out.min.y() && scene.tx.y() <= keep_out.max.y()) {
                continue;
            }
            bool clash = false;
            for (const auto& other : scene.scatterers) {
                if (boxes_overlap(keep_out, other.box)) {
                    clash = true;
                    break;
                }
            }
            if (clash) continue;
            scene.scatterers.push_back(PhysicalScatterer{n + 1, box});
            placed = true;
        }
        if (!placed) {
            throw PlacementError("generate_scene: could not place scatterer " + std::to_string(n + 1) + " after " +
                                 std::to_string(spec.max_attempts) +
                                 " attempts; request fewer or smaller scatterers");
        }
    }
    scene.validate();
    return scene;
}

// ---------------------------------------------------------------------------
// Ground truth
// ---------------------------------------------------------------------------

enum class TruthGenerator { model_consistent, single_bounce };

struct TruthSpec {
    std::uint64_t seed = 1;
    int n_true = 0;
    double src_v = 0.15;        // GP amplitude of the SRC prior
    double src_rho = 1.0;       // GP angular length scale (rad)
    double src_mean = 0.3;
    double noise_std_rel = 0.0; // multiplicative measurement noise
    double jitter_frac = 0.5;   // displacement from box center, fraction of box extent
    double reflection_loss = 0.3;
    TruthGenerator generator = TruthGenerator::model_consistent;

    void validate() const {
        if (!(src_v > 0.0) || !(src_rho > 0.0)) throw std::invalid_argument("truth spec: v and rho must be > 0");
        if (noise_std_rel < 0.0) throw std::invalid_argument("truth spec: noise_std_rel must be >= 0");
        if (n_true < 0) throw std::invalid_argument("truth spec: n_true must be >= 0");
        if (jitter_frac < 0.0 || jitter_frac > 1.0) throw std::invalid_argument("truth spec: jitter_frac in [0, 1]");
    }
};

struct Truth {
    VirtualScattererSet model; // empty for the single-bounce generator
    Cgm map;
};

/// Correlated SRC draw over the sector centers, truncated below at 0.
inline std::vector<std::optional<double>> sample_src_vector(const AodSectorization& sectors, double v, double rho,
                                                            double mean, std::mt19937_64& rng) {
    std::vector<Aod> angles;
    for (int m = 0; m < sectors.count(); ++m) angles.push_back(sector_center(m, sectors));
    Eigen::MatrixXd k = kernel_matrix(angles, v, rho);
    k.diagonal().array() += 1e-10 * v * v;
    Eigen::LLT<Eigen::MatrixXd> llt(k);
    std::normal_distribution<double> normal(0.0, 1.0);
    Eigen::VectorXd z(sectors.count());
    for (int m = 0; m < sectors.count(); ++m) z[m] = normal(rng);
    const Eigen::VectorXd draw = llt.matrixL() * z;
    std::vector<std::optional<double>> out(sectors.count());
    for (int m = 0; m < sectors.count(); ++m) out[m] = std::max(0.0, mean + draw[m]);
    return out;
}

namespace detail {

/// Tx mirrored in the box face nearest to it, with the face's plane.
struct Mirror {
    int axis = 0;
    double plane = 0.0;
    Point3 image;
    bool valid = false;
};

inline Mirror nearest_face_mirror(const Point3& tx, const Box& box) {
    Mirror best;
    double best_dist = std::numeric_limits<double>::infinity();
    for (int axis = 0; axis < 3; ++axis) {
        const double candidates[2] = {box.min[axis], box.max[axis]};
        for (int side = 0; side < 2; ++side) {
            const double plane = candidates[side];
            const double sign = side == 0 ? -1.0 : 1.0; // outward normal
            const double dist = sign * (tx[axis] - plane);
            if (dist <= 0.0 || dist >= best_dist) continue;
            best_dist = dist;
            best.axis = axis;
            best.plane = plane;
            best.image = tx;
            best.image[axis] = 2.0 * plane - tx[axis];
            best.valid = true;
        }
    }
    return best;
}

inline Cgm single_bounce_map(const Scene& scene, const GridMap& grid, double reflection_loss) {
    Cgm out;
    out.gain.assign(grid.size(), 0.0);
    for (int i = 0; i < grid.size(); ++i) out.gain[i] = tx_path_power(grid, i, scene);
    for (const auto& s : scene.scatterers) {
        const Mirror mirror = nearest_face_mirror(scene.tx, s.box);
        if (!mirror.valid) continue;
        const int a = mirror.axis;
        for (int i = 0; i < grid.size(); ++i) {
            const Point3& c = grid.centers[i];
            // Receiver must be on the tx side of the face.
            if ((c[a] - mirror.plane) * (scene.tx[a] - mirror.plane) <= 0.0) continue;
            const Point3 d = c - mirror.image;
            const double t = (mirror.plane - mirror.image[a]) / d[a];
            const Point3 p = mirror.image + t * d;
            bool on_face = true;
            for (int k = 0; k < 3; ++k) {
                if (k == a) continue;
                if (p[k] < s.box.min[k] || p[k] > s.box.max[k]) on_face = false;
            }
            if (!on_face) continue;
            if (!los_visible(scene.tx, p, scene, s.id) || !los_visible(p, c, scene, s.id)) continue;
            out.gain[i] += reflection_loss * path_gain(mirror.image, c, scene.beta0, scene.alpha);
        }
    }
    return out;
}

} // namespace detail

/// Ground-truth virtual scatterers and their exact forward map. The
/// model-consistent generator anchors one scatterer to each of the n_true
/// largest boxes, displaced from the box center by up to jitter_frac / 2 of
/// the box extent per axis.
inline Truth generate_truth(const Scene& scene, const GridMap& grid, const AodSectorization& sectors,
                            const TruthSpec& spec) {
    spec.validate();
    sectors.validate();
    Truth truth;
    truth.model.sectors = sectors;
    if (spec.generator == TruthGenerator::single_bounce) {
        truth.map = detail::single_bounce_map(scene, grid, spec.reflection_loss);
        return truth;
    }
    if (spec.n_true > static_cast<int>(scene.scatterers.size())) {
        throw std::invalid_argument("generate_truth: n_true exceeds the number of physical scatterers");
    }
    std::mt19937_64 pos_rng(derive_seed(spec.seed, "truth-positions"));
    std::mt19937_64 src_rng(derive_seed(spec.seed, "truth-srcs"));
    std::uniform_real_distribution<double> unit(-0.5, 0.5);
    const auto ordered = scene.by_size();
    for (int n = 0; n < spec.n_true; ++n) {
        const auto& box = ordered[n]->box;
        Point3 offset;
        for (int k = 0; k < 3; ++k) offset[k] = unit(pos_rng) * spec.jitter_frac * box.extent()[k];
        auto& v = truth.model.add(box.center() + offset, ordered[n]->id);
        v.src = sample_src_vector(sectors, spec.src_v, spec.src_rho, spec.src_mean, src_rng);
    }
    truth.map = predict_map(truth.model, grid, scene);
    return truth;
}

// ---------------------------------------------------------------------------
// Measurements
// ---------------------------------------------------------------------------

enum class Selection { type1, type2 };

/// Measured grids (dense indices, ascending) and their gains.
struct MeasurementSet {
    std::vector<int> grids;
    std::vector<double> gains;
    Selection selection = Selection::type2;
    std::uint64_t seed = 0;

    int size() const { return static_cast<int>(grids.size()); }
};

namespace detail {

/// Scatterer-proximate selection: physical scatterers take turns (largest
/// first); each cycles through its occupied sectors and claims the nearest
/// unclaimed visible grid in the current sector.
inline std::vector<int> select_type1(const GridMap& grid, const Scene& scene, const AodSectorization& sectors,
                                     int count, std::vector<char>& taken) {
    struct Cursor {
        Point3 center;
        std::vector<std::vector<int>> by_sector; // candidates sorted by distance, per occupied sector
        std::size_t next = 0;
    };
    std::vector<Cursor> cursors;
    for (const auto* s : scene.by_size()) {
        Cursor cur;
        cur.center = s->box.center();
        std::vector<std::vector<std::pair<double, int>>> buckets(sectors.count());
        for (int i = 0; i < grid.size(); ++i) {
            if (!grid.sees(i, s->id)) continue;
            const int m = sector_index(aod_of(cur.center, grid.centers[i]), sectors);
            buckets[m].emplace_back((grid.centers[i] - cur.center).norm(), i);
        }
        for (auto& b : buckets) {
            if (b.empty()) continue;
            std::sort(b.begin(), b.end());
            std::vector<int> ids;
            for (const auto& [d, i] : b) ids.push_back(i);
            cur.by_sector.push_back(std::move(ids));
        }
        if (!cur.by_sector.empty()) cursors.push_back(std::move(cur));
    }

    std::vector<int> chosen;
    bool progress = true;
    while (static_cast<int>(chosen.size()) < count && progress) {
        progress = false;
        for (auto& cur : cursors) {
            if (static_cast<int>(chosen.size()) >= count) break;
            for (std::size_t tries = 0; tries < cur.by_sector.size(); ++tries) {
                const auto& bucket = cur.by_sector[cur.next];
                cur.next = (cur.next + 1) % cur.by_sector.size();
                const auto it = std::find_if(bucket.begin(), bucket.end(), [&](int i) { return !taken[i]; });
                if (it == bucket.end()) continue;
                taken[*it] = 1;
                chosen.push_back(*it);
                progress = true;
                break;
            }
        }
    }
    return chosen;
}

} // namespace detail

/// Picks L of the I valid grids and reports the truth perturbed by
/// multiplicative Gaussian noise, floored at 0. Type-I falls back to uniform
/// draws once every scatterer's visible grids are exhausted.
inline MeasurementSet sample_measurements(const Cgm& truth, const GridMap& grid, const Scene& scene,
                                          const AodSectorization& sectors, int count, Selection selection,
                                          double noise_std_rel, std::uint64_t seed) {
    if (count < 0 || count >= grid.size()) {
        throw std::invalid_argument("sample_measurements: L must satisfy 0 <= L < I (I = " +
                                    std::to_string(grid.size()) + ")");
    }
    if (truth.size() != grid.size()) throw std::invalid_argument("sample_measurements: truth/grid size mismatch");
    if (noise_std_rel < 0.0) throw std::invalid_argument("sample_measurements: noise_std_rel must be >= 0");

    MeasurementSet out;
    out.selection = selection;
    out.seed = seed;
    std::vector<char> taken(grid.size(), 0);
    if (selection == Selection::type1) out.grids = detail::select_type1(grid, scene, sectors, count, taken);

    std::mt19937_64 pick_rng(derive_seed(seed, "selection"));
    std::vector<int> pool;
    for (int i = 0; i < grid.size(); ++i) {
        if (!taken[i]) pool.push_back(i);
    }
    std::shuffle(pool.begin(), pool.end(), pick_rng);
    for (std::size_t k = 0; static_cast<int>(out.grids.size()) < count; ++k) out.grids.push_back(pool[k]);
    std::sort(out.grids.begin(), out.grids.end());

    std::mt19937_64 noise_rng(derive_seed(seed, "noise"));
    std::normal_distribution<double> normal(0.0, 1.0);
    for (int i : out.grids) {
        const double eps = noise_std_rel > 0.0 ? noise_std_rel * normal(noise_rng) : 0.0;
        out.gains.push_back(std::max(0.0, truth.gain[i] * (1.0 + eps)));
    }
    return out;
}

} // namespace vscat
