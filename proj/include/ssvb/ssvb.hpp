#pragma once

// Everything in one include.

#include "ssvb/csse.hpp"
#include "ssvb/dataset_io.hpp"
#include "ssvb/evaluation.hpp"
#include "ssvb/gradients.hpp"
#include "ssvb/linalg.hpp"
#include "ssvb/models.hpp"
#include "ssvb/observations.hpp"
#include "ssvb/ode.hpp"
#include "ssvb/optimizer.hpp"
#include "ssvb/plotdata.hpp"
#include "ssvb/profiles.hpp"
#include "ssvb/result_json.hpp"
#include "ssvb/simulate.hpp"
#include "ssvb/sir.hpp"
#include "ssvb/splines.hpp"
#include "ssvb/tuning.hpp"
#include "ssvb/vb.hpp"
