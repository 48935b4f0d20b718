#pragma once

#include "spuq/phantomgen/generator.hpp"
#include "spuq/phantomgen/suite.hpp"
#include "spuq/phantomgen/volume_io.hpp"
