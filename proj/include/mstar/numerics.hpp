#pragma once

#include "mstar/numerics/array.hpp"
#include "mstar/numerics/checkpoint.hpp"
#include "mstar/numerics/grad_check.hpp"
#include "mstar/numerics/loss.hpp"
#include "mstar/numerics/ops.hpp"
#include "mstar/numerics/optim.hpp"
#include "mstar/numerics/parameters.hpp"
#include "mstar/numerics/tensor.hpp"
