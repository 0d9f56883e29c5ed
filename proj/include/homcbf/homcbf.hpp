#pragma once

// Umbrella header for the full library: dense symmetric-matrix kernel,
// control-affine fields, barrier chains, SDP filters, beacon localization,
// and the simulation harness.

#include "chain.hpp"
#include "linalg.hpp"
#include "localization.hpp"
#include "sdp.hpp"
#include "sim.hpp"
#include "symmat.hpp"
#include "system.hpp"
