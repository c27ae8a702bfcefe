#pragma once

// Umbrella header.

#include "flowalign/crpo.hpp"
#include "flowalign/experiment.hpp"
#include "flowalign/flow.hpp"
#include "flowalign/metrics.hpp"
#include "flowalign/numkit.hpp"
#include "flowalign/preference.hpp"
#include "flowalign/reward.hpp"
#include "flowalign/synthdata.hpp"
#include "flowalign/vectorfield.hpp"
