#pragma once

#include "mvp/baselines.hpp"
#include "mvp/csv.hpp"
#include "mvp/experiment.hpp"
#include "mvp/grid.hpp"
#include "mvp/groups.hpp"
#include "mvp/metrics.hpp"
#include "mvp/online_least_squares.hpp"
#include "mvp/predictor.hpp"
#include "mvp/rates.hpp"
#include "mvp/rng.hpp"
#include "mvp/scores.hpp"
#include "mvp/synthetic.hpp"
#include "mvp/transcript.hpp"
