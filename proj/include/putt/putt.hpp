#pragma once

#include "putt/adam.hpp"
#include "putt/baselines.hpp"
#include "putt/checkpoint.hpp"
#include "putt/dense.hpp"
#include "putt/error.hpp"
#include "putt/experiment.hpp"
#include "putt/grid.hpp"
#include "putt/grid_io.hpp"
#include "putt/loss.hpp"
#include "putt/metrics.hpp"
#include "putt/prolongation.hpp"
#include "putt/pyramid.hpp"
#include "putt/qtt_layout.hpp"
#include "putt/schedule.hpp"
#include "putt/tensor_train.hpp"
#include "putt/train.hpp"
#include "putt/ttsvd.hpp"
