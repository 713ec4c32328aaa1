#pragma once

#include "optdesign/error.hpp"
#include "optdesign/model.hpp"
#include "optdesign/conic/program.hpp"
#include "optdesign/conic/solver.hpp"
#include "optdesign/formulations.hpp"
#include "optdesign/baselines.hpp"
#include "optdesign/verify.hpp"
#include "optdesign/instances.hpp"
#include "optdesign/cli.hpp"
