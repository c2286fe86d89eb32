#pragma once

// Umbrella header for the whole library.

#include "drce/consensus.hpp"
#include "drce/core.hpp"
#include "drce/experiment.hpp"
#include "drce/ingest.hpp"
#include "drce/io.hpp"
#include "drce/rng.hpp"
#include "drce/simulator.hpp"
#include "drce/solver.hpp"
