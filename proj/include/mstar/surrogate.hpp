#pragma once

#include "mstar/surrogate/cae.hpp"
#include "mstar/surrogate/predictors.hpp"
#include "mstar/surrogate/vae.hpp"
