#pragma once

#include "extrema_gp/empirical_bayes.hpp"
#include "extrema_gp/error.hpp"
#include "extrema_gp/gp_fit.hpp"
#include "extrema_gp/io.hpp"
#include "extrema_gp/kernel.hpp"
#include "extrema_gp/nelder_mead.hpp"
#include "extrema_gp/normal.hpp"
#include "extrema_gp/posterior.hpp"
#include "extrema_gp/rng.hpp"
#include "extrema_gp/simulate.hpp"
#include "extrema_gp/summarize.hpp"
#include "extrema_gp/validation.hpp"
