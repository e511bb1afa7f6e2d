#pragma once

// Umbrella header for the FedOBD simulation library.

#include "fedobd/block_dropout.hpp"
#include "fedobd/config.hpp"
#include "fedobd/data.hpp"
#include "fedobd/harness.hpp"
#include "fedobd/model.hpp"
#include "fedobd/orchestrator.hpp"
#include "fedobd/protocol.hpp"
#include "fedobd/quantize.hpp"
#include "fedobd/rng.hpp"
#include "fedobd/tensor.hpp"
#include "fedobd/version.hpp"
