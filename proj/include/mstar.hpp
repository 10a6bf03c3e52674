#pragma once

#include "mstar/analysis.hpp"
#include "mstar/cell_compiler.hpp"
#include "mstar/data_io.hpp"
#include "mstar/search.hpp"
#include "mstar/search_space.hpp"
#include "mstar/surrogate.hpp"
#include "mstar/training.hpp"
