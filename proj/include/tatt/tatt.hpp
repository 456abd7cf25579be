#pragma once

#include "tatt/attention.hpp"
#include "tatt/checkpoint.hpp"
#include "tatt/evaluate.hpp"
#include "tatt/glyph.hpp"
#include "tatt/gradcheck.hpp"
#include "tatt/gradcheck_suite.hpp"
#include "tatt/image.hpp"
#include "tatt/interpreter.hpp"
#include "tatt/losses.hpp"
#include "tatt/network.hpp"
#include "tatt/nn.hpp"
#include "tatt/ops.hpp"
#include "tatt/optim.hpp"
#include "tatt/runtime.hpp"
#include "tatt/tensor.hpp"
#include "tatt/train.hpp"
#include "tatt/warp.hpp"
