#pragma once

#include "smu/csv_io.hpp"
#include "smu/density_metrics.hpp"
#include "smu/error.hpp"
#include "smu/experiment.hpp"
#include "smu/grenander.hpp"
#include "smu/minimax.hpp"
#include "smu/npmle.hpp"
#include "smu/quadrature.hpp"
#include "smu/random.hpp"
#include "smu/rect_geometry.hpp"
#include "smu/smu_core.hpp"
