#pragma once

#include "xbench/attribution.hpp"
#include "xbench/augment.hpp"
#include "xbench/corpus.hpp"
#include "xbench/engine.hpp"
#include "xbench/error.hpp"
#include "xbench/fixtures.hpp"
#include "xbench/image.hpp"
#include "xbench/log.hpp"
#include "xbench/metrics.hpp"
#include "xbench/model.hpp"
#include "xbench/synthetic.hpp"
#include "xbench/tensor.hpp"
#include "xbench/train.hpp"
#include "xbench/xbw.hpp"
#include "xbench/harness.hpp"
