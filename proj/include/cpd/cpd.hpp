#pragma once

#include "cpd/adam.hpp"
#include "cpd/binary_io.hpp"
#include "cpd/checkpoint.hpp"
#include "cpd/curves.hpp"
#include "cpd/distill.hpp"
#include "cpd/env.hpp"
#include "cpd/gaussian.hpp"
#include "cpd/nn.hpp"
#include "cpd/ppo.hpp"
#include "cpd/replay.hpp"
#include "cpd/rng.hpp"

#include "cpd/bench/config.hpp"
#include "cpd/bench/metrics.hpp"
#include "cpd/bench/pipeline.hpp"
#include "cpd/bench/report.hpp"
#include "cpd/bench/verify.hpp"
