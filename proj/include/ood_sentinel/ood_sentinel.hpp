#pragma once

#include "calibration.hpp"
#include "detection.hpp"
#include "embedding_io.hpp"
#include "error.hpp"
#include "evaluation.hpp"
#include "recipe.hpp"
#include "representation.hpp"
#include "special_functions.hpp"
