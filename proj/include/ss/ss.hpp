#pragma once

#include "ss/config.hpp"
#include "ss/csv.hpp"
#include "ss/error.hpp"
#include "ss/experiments.hpp"
#include "ss/langevin.hpp"
#include "ss/lattice.hpp"
#include "ss/mechanics.hpp"
#include "ss/mlp.hpp"
#include "ss/random.hpp"
#include "ss/stats.hpp"
#include "ss/thermo.hpp"
#include "ss/training.hpp"
