#pragma once

#include "sfl/errors.hpp"
#include "sfl/schedule.hpp"
#include "sfl/ensemble.hpp"
#include "sfl/rng.hpp"
#include "sfl/environment.hpp"
#include "sfl/hamiltonian.hpp"
#include "sfl/estimate.hpp"
#include "sfl/settings.hpp"
#include "sfl/quadrature.hpp"
#include "sfl/functionals.hpp"
#include "sfl/sample_tree.hpp"
#include "sfl/nested_estimator.hpp"
#include "sfl/gamma_measures.hpp"
#include "sfl/lift_calculus.hpp"
#include "sfl/stationarizer.hpp"
#include "sfl/model_zoo.hpp"
