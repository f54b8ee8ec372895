// Umbrella header for the event detection toolkit.
#pragma once

#include "edet/aggregation.hpp"
#include "edet/core.hpp"
#include "edet/corpus.hpp"
#include "edet/crf.hpp"
#include "edet/encoder.hpp"
#include "edet/evaluation.hpp"
#include "edet/identification.hpp"
#include "edet/localization.hpp"
#include "edet/training.hpp"
#include "edet/util.hpp"
#include "edet/verbalizer.hpp"
