#pragma once

#include "midas/estimators.hpp"
#include "midas/io.hpp"
#include "midas/ll1.hpp"
#include "midas/metrics.hpp"
#include "midas/parallel.hpp"
#include "midas/prox.hpp"
#include "midas/rng.hpp"
#include "midas/solver.hpp"
#include "midas/tensor.hpp"
