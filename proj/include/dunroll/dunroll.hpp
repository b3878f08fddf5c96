#pragma once

#include "core.hpp"
#include "csv.hpp"
#include "dataset.hpp"
#include "diagnostics.hpp"
#include "instance.hpp"
#include "rng.hpp"
#include "solvers.hpp"
#include "topology.hpp"
#include "unroll.hpp"
#include "cli.hpp"
