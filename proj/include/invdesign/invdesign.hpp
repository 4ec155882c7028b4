#pragma once

#include "checkpoint.hpp"
#include "conv.hpp"
#include "dataset.hpp"
#include "errors.hpp"
#include "eval.hpp"
#include "geometry.hpp"
#include "nn.hpp"
#include "pgm.hpp"
#include "random.hpp"
#include "surrogate.hpp"
#include "tensor.hpp"
#include "training.hpp"
