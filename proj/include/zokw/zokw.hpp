// Umbrella header.

#ifndef ZOKW_ZOKW_HPP
#define ZOKW_ZOKW_HPP

#include "zokw/linalg.hpp"
#include "zokw/random.hpp"
#include "zokw/directions.hpp"
#include "zokw/models.hpp"
#include "zokw/kw.hpp"
#include "zokw/plugin.hpp"
#include "zokw/random_scaling.hpp"
#include "zokw/experiment.hpp"
#include "zokw/config.hpp"
#include "zokw/harness.hpp"

#endif  // ZOKW_ZOKW_HPP
