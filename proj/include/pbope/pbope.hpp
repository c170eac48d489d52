#pragma once

// Offline evaluation of deterministic ranking policies from logged clicks,
// using examination probabilities from a position-bias model as propensities.

#include "pbope/counterfactual.hpp"
#include "pbope/domain.hpp"
#include "pbope/em.hpp"
#include "pbope/estimator.hpp"
#include "pbope/harness.hpp"
#include "pbope/json_io.hpp"
#include "pbope/policies.hpp"
#include "pbope/simulate.hpp"
#include "pbope/util.hpp"
