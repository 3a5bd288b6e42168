// SPDX-License-Identifier: Apache-2.0
//
// Shared builders for test scenes.

#pragma once

#include "vscat/vscat.hpp"

#include <cstdint>

namespace testing_support {

struct World {
    vscat::Scene scene;
    vscat::GridMap grid;
    vscat::AodSectorization sectors;
};

/// Generated scene over a square region with an n x n grid.
inline World make_world(std::uint64_t seed, int n_scatterers = 10, int n = 30, int m_az = 8, int m_el = 1) {
    vscat::SceneGenSpec spec;
    spec.seed = seed;
    spec.n_scatterers = n_scatterers;
    World w;
    w.scene = vscat::generate_scene(spec);
    w.grid = vscat::partition_region(w.scene, n, n, 1.5);
    w.sectors = vscat::AodSectorization{m_az, m_el};
    return w;
}

/// Model-consistent truth on a world.
inline vscat::Truth make_truth(const World& w, std::uint64_t seed, int n_true) {
    vscat::TruthSpec spec;
    spec.seed = seed;
    spec.n_true = n_true;
    return vscat::generate_truth(w.scene, w.grid, w.sectors, spec);
}

} // namespace testing_support
