#pragma once

#include "mstar/search/config.hpp"
#include "mstar/search/engine.hpp"
#include "mstar/search/evaluator.hpp"
#include "mstar/search/io.hpp"
#include "mstar/search/predictor_eval.hpp"
