#pragma once

#include "anomattr/attribution.hpp"
#include "anomattr/classifier.hpp"
#include "anomattr/clustering.hpp"
#include "anomattr/clv.hpp"
#include "anomattr/datetime.hpp"
#include "anomattr/error.hpp"
#include "anomattr/matrix.hpp"
#include "anomattr/nn.hpp"
#include "anomattr/preprocess.hpp"
#include "anomattr/rng.hpp"
#include "anomattr/stats.hpp"
#include "anomattr/synth.hpp"
#include "anomattr/table.hpp"
#include "anomattr/threshold.hpp"
#include "anomattr/util.hpp"
