#pragma once

// Multivariate (2D) regression discontinuity estimation: boundary geometry,
// kernel moments, local-polynomial fitting, MSE-optimal bandwidth selection,
// bias-corrected inference, the univariate distance baseline with its
// diagnostics, and a Monte Carlo harness.

#include "mrd/bandwidth.hpp"
#include "mrd/dgp.hpp"
#include "mrd/distance.hpp"
#include "mrd/errors.hpp"
#include "mrd/estimator.hpp"
#include "mrd/geometry.hpp"
#include "mrd/io.hpp"
#include "mrd/kernels.hpp"
#include "mrd/localpoly.hpp"
#include "mrd/mc.hpp"
#include "mrd/quadrature.hpp"
#include "mrd/rng.hpp"
