#pragma once

#include "polar_denoise/error.hpp"
#include "polar_denoise/specfun.hpp"
#include "polar_denoise/vec.hpp"
#include "polar_denoise/kernel.hpp"
#include "polar_denoise/rng.hpp"
#include "polar_denoise/parallel.hpp"
#include "polar_denoise/binary_io.hpp"
#include "polar_denoise/prior.hpp"
#include "polar_denoise/dynamics.hpp"
#include "polar_denoise/posterior.hpp"
#include "polar_denoise/scorematch.hpp"
#include "polar_denoise/audit.hpp"
#include "polar_denoise/version.hpp"
#include "polar_denoise/experiment.hpp"
