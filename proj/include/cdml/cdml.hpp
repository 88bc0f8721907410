#pragma once

#include "cdml/calibration/calibrators.hpp"
#include "cdml/calibration/isotonic.hpp"
#include "cdml/calibration/reweight.hpp"
#include "cdml/core.hpp"
#include "cdml/csv.hpp"
#include "cdml/dml.hpp"
#include "cdml/learners/features.hpp"
#include "cdml/learners/learner.hpp"
#include "cdml/learners/tune.hpp"
#include "cdml/parallel.hpp"
#include "cdml/random.hpp"
#include "cdml/report.hpp"
#include "cdml/simulation/dgp.hpp"
#include "cdml/simulation/overlap.hpp"
#include "cdml/simulation/study.hpp"
