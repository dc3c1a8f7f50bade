#pragma once

#include "rmtbag/data.hpp"
#include "rmtbag/errors.hpp"
#include "rmtbag/estimation.hpp"
#include "rmtbag/isotropic.hpp"
#include "rmtbag/lssvm.hpp"
#include "rmtbag/model.hpp"
#include "rmtbag/parallel.hpp"
#include "rmtbag/random.hpp"
#include "rmtbag/rmt.hpp"
#include "rmtbag/selection.hpp"
#include "rmtbag/stats.hpp"
#include "rmtbag/version.hpp"
