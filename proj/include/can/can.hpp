#pragma once

#include "can/config.hpp"
#include "can/data.hpp"
#include "can/error.hpp"
#include "can/eval.hpp"
#include "can/grad_check.hpp"
#include "can/image.hpp"
#include "can/kernels.hpp"
#include "can/layers.hpp"
#include "can/losses.hpp"
#include "can/models.hpp"
#include "can/optim.hpp"
#include "can/serialize.hpp"
#include "can/tensor.hpp"
#include "can/training.hpp"
