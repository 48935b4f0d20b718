#pragma once

#include "spuq/benchcli/cache.hpp"
#include "spuq/benchcli/checkpoint.hpp"
#include "spuq/benchcli/commands.hpp"
#include "spuq/benchcli/config.hpp"
#include "spuq/benchcli/evaluate.hpp"
#include "spuq/benchcli/report.hpp"
