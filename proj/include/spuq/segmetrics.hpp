#pragma once

#include "spuq/segmetrics/metrics.hpp"
#include "spuq/segmetrics/retention.hpp"
#include "spuq/segmetrics/surface.hpp"
#include "spuq/segmetrics/trend.hpp"
