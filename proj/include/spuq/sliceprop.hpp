#pragma once

#include "spuq/sliceprop/affinity.hpp"
#include "spuq/sliceprop/edges.hpp"
#include "spuq/sliceprop/flow.hpp"
#include "spuq/sliceprop/network.hpp"
#include "spuq/sliceprop/refine.hpp"
#include "spuq/sliceprop/types.hpp"
