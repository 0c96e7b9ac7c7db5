#pragma once

#include "myo/common.hpp"
#include "myo/dataset.hpp"
#include "myo/windowing.hpp"
#include "myo/augment.hpp"
#include "myo/embedding.hpp"
#include "myo/encoder.hpp"
#include "myo/checkpoint.hpp"
#include "myo/evaluation.hpp"
#include "myo/training.hpp"
#include "myo/kvconfig.hpp"
#include "myo/experiment.hpp"
