#pragma once

#include "pointpert/errors.hpp"
#include "pointpert/types.hpp"
#include "pointpert/lattice.hpp"
#include "pointpert/spectra.hpp"
#include "pointpert/modes.hpp"
#include "pointpert/fit.hpp"
#include "pointpert/extension.hpp"
#include "pointpert/green.hpp"
#include "pointpert/weyl.hpp"
#include "pointpert/measures.hpp"
#include "pointpert/csv.hpp"
