#pragma once

#include "dirform/drivers.hpp"
#include "dirform/error_algebra.hpp"
#include "dirform/experiments.hpp"
#include "dirform/finance.hpp"
#include "dirform/io.hpp"
#include "dirform/limit_law.hpp"
#include "dirform/parallel.hpp"
#include "dirform/rng.hpp"
#include "dirform/sde.hpp"
#include "dirform/stats.hpp"
#include "dirform/wiener.hpp"
