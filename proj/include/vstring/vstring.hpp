#pragma once

#include "vstring/common.hpp"
#include "vstring/csv.hpp"
#include "vstring/expression.hpp"
#include "vstring/identify.hpp"
#include "vstring/material.hpp"
#include "vstring/moment.hpp"
#include "vstring/simulate.hpp"
#include "vstring/spectral.hpp"
#include "vstring/volterra.hpp"
