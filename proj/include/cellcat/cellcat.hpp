#pragma once
// Umbrella header.

#include "core.hpp"
#include "io.hpp"
#include "segmentation.hpp"
#include "qc.hpp"
#include "gmm.hpp"
#include "cat.hpp"
#include "balance.hpp"
#include "classify.hpp"
#include "synth.hpp"
#include "parallel.hpp"
#include "config.hpp"
#include "pipeline.hpp"
#include "harness.hpp"
