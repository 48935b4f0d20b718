#pragma once

#include "spuq/uqwrap/batch_ensemble.hpp"
#include "spuq/uqwrap/strategy.hpp"
#include "spuq/uqwrap/swag.hpp"
#include "spuq/uqwrap/uq.hpp"
