// SPDX-License-Identifier: Apache-2.0
//
// Umbrella header for the whole library.

#pragma once

#include "vscat/baselines.hpp"
#include "vscat/channel_model.hpp"
#include "vscat/config.hpp"
#include "vscat/estimation.hpp"
#include "vscat/geometry.hpp"
#include "vscat/gpr.hpp"
#include "vscat/io.hpp"
#include "vscat/kernel.hpp"
#include "vscat/metrics.hpp"
#include "vscat/seed.hpp"
#include "vscat/synth.hpp"
