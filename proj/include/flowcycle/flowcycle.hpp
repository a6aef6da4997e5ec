#pragma once

#include "flowcycle/adam.hpp"
#include "flowcycle/bench.hpp"
#include "flowcycle/config.hpp"
#include "flowcycle/editors.hpp"
#include "flowcycle/errors.hpp"
#include "flowcycle/flowmodel.hpp"
#include "flowcycle/report.hpp"
#include "flowcycle/rng.hpp"
#include "flowcycle/sampler.hpp"
#include "flowcycle/tensor.hpp"
#include "flowcycle/worlds.hpp"
