#pragma once

#include "sbmmd/adam.hpp"
#include "sbmmd/autodiff.hpp"
#include "sbmmd/config.hpp"
#include "sbmmd/control_net.hpp"
#include "sbmmd/datasets.hpp"
#include "sbmmd/error.hpp"
#include "sbmmd/experiment.hpp"
#include "sbmmd/io.hpp"
#include "sbmmd/kernel_mmd.hpp"
#include "sbmmd/oracle.hpp"
#include "sbmmd/rng.hpp"
#include "sbmmd/sde.hpp"
#include "sbmmd/stats.hpp"
#include "sbmmd/svg.hpp"
#include "sbmmd/trainer.hpp"
