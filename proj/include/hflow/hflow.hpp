#pragma once

#include "hflow/config.hpp"
#include "hflow/covariance.hpp"
#include "hflow/errors.hpp"
#include "hflow/experiment.hpp"
#include "hflow/gaussian_field.hpp"
#include "hflow/harris_flow.hpp"
#include "hflow/inverse_flow.hpp"
#include "hflow/measure.hpp"
#include "hflow/parallel.hpp"
#include "hflow/rng.hpp"
#include "hflow/smooth_flow.hpp"
#include "hflow/stats.hpp"
#include "hflow/sweep.hpp"
#include "hflow/trajectory.hpp"
