#pragma once

#include "cgmvp/backtest.hpp"
#include "cgmvp/clustering.hpp"
#include "cgmvp/errors.hpp"
#include "cgmvp/gmvp.hpp"
#include "cgmvp/market_data.hpp"
#include "cgmvp/metrics.hpp"
#include "cgmvp/preprocess.hpp"
#include "cgmvp/tsne.hpp"
#include "cgmvp/two_stage.hpp"
