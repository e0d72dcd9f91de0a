#pragma once

#include "gammabound/bounds.hpp"
#include "gammabound/config.hpp"
#include "gammabound/data.hpp"
#include "gammabound/errors.hpp"
#include "gammabound/experiment.hpp"
#include "gammabound/hypothesis.hpp"
#include "gammabound/lower_bound.hpp"
#include "gammabound/nuisance.hpp"
#include "gammabound/rng.hpp"
#include "gammabound/serialize.hpp"
#include "gammabound/stats.hpp"
#include "gammabound/subsample.hpp"
#include "gammabound/synthetic.hpp"
