#pragma once

#include "sclab/bounds.hpp"
#include "sclab/experiment.hpp"
#include "sclab/factorization.hpp"
#include "sclab/fit.hpp"
#include "sclab/generators.hpp"
#include "sclab/io.hpp"
#include "sclab/networks.hpp"
#include "sclab/plot.hpp"
#include "sclab/problem.hpp"
#include "sclab/rng.hpp"
#include "sclab/solvers.hpp"
#include "sclab/training.hpp"
