#pragma once

#include "assignment.hpp"
#include "costmodel.hpp"
#include "domain.hpp"
#include "grouping.hpp"
#include "orchestration.hpp"
#include "planner.hpp"
#include "report.hpp"
#include "serialize.hpp"
#include "sharding.hpp"
#include "simulator.hpp"
#include "solver.hpp"
#include "trace.hpp"
