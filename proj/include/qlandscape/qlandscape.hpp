#pragma once

#include "qlandscape/error.hpp"
#include "qlandscape/random.hpp"
#include "qlandscape/operators.hpp"
#include "qlandscape/matrix_json.hpp"
#include "qlandscape/dynamics.hpp"
#include "qlandscape/tomography.hpp"
#include "qlandscape/landscape.hpp"
#include "qlandscape/learning.hpp"
#include "qlandscape/presets.hpp"
#include "qlandscape/verification.hpp"
