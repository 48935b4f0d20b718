#pragma once

#include "spuq/gradcore/init.hpp"
#include "spuq/gradcore/ops.hpp"
#include "spuq/gradcore/rng.hpp"
#include "spuq/gradcore/sgd.hpp"
#include "spuq/gradcore/tape.hpp"
#include "spuq/gradcore/tensor.hpp"
