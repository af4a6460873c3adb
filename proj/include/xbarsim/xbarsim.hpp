#pragma once

#include "xbarsim/qcore.hpp"
#include "xbarsim/netgraph.hpp"
#include "xbarsim/datasets.hpp"
#include "xbarsim/estimator.hpp"
#include "xbarsim/engine.hpp"
#include "xbarsim/hwmodel.hpp"
#include "xbarsim/benchmarks.hpp"
#include "xbarsim/experiment.hpp"
