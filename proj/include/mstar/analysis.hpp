#pragma once

#include "mstar/analysis/attribution.hpp"
#include "mstar/analysis/cwt.hpp"
#include "mstar/analysis/experiments.hpp"
#include "mstar/stats.hpp"
