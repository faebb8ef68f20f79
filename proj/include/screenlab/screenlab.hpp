#pragma once

#include "screenlab/core.hpp"
#include "screenlab/design.hpp"
#include "screenlab/evalkit.hpp"
#include "screenlab/experiment.hpp"
#include "screenlab/format.hpp"
#include "screenlab/negbin.hpp"
#include "screenlab/objective.hpp"
#include "screenlab/oracle.hpp"
#include "screenlab/parallel.hpp"
#include "screenlab/predictor.hpp"
#include "screenlab/screen.hpp"
#include "screenlab/seqmodel.hpp"
#include "screenlab/verify.hpp"
