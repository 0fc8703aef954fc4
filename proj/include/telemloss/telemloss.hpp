#pragma once

#include "telemloss/bias_model.hpp"
#include "telemloss/config.hpp"
#include "telemloss/error.hpp"
#include "telemloss/event_model.hpp"
#include "telemloss/loss_estimation.hpp"
#include "telemloss/scorecard.hpp"
#include "telemloss/simulation.hpp"
#include "telemloss/stats.hpp"
#include "telemloss/synthgen.hpp"
#include "telemloss/text.hpp"
