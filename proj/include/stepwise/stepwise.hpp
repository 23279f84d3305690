#pragma once

#include "stepwise/engine.hpp"
#include "stepwise/error.hpp"
#include "stepwise/evaluation.hpp"
#include "stepwise/forecaster.hpp"
#include "stepwise/graph.hpp"
#include "stepwise/io.hpp"
#include "stepwise/policy.hpp"
#include "stepwise/random.hpp"
#include "stepwise/service.hpp"
#include "stepwise/simulator.hpp"
#include "stepwise/tracker.hpp"
