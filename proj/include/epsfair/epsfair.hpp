#pragma once

#include "epsfair/tensor.hpp"
#include "epsfair/autodiff.hpp"
#include "epsfair/ops.hpp"
#include "epsfair/grad_check.hpp"
#include "epsfair/geometry.hpp"
#include "epsfair/losses.hpp"
#include "epsfair/fairkl.hpp"
#include "epsfair/datagen.hpp"
#include "epsfair/encoder.hpp"
#include "epsfair/optim.hpp"
#include "epsfair/probe.hpp"
#include "epsfair/train.hpp"
#include "epsfair/oracles.hpp"
#include "epsfair/config.hpp"
#include "epsfair/experiment.hpp"
