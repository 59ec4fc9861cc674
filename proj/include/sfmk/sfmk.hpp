#pragma once

// Umbrella header: the whole library in dependency order.

#include "sfmk/common.hpp"
#include "sfmk/random.hpp"
#include "sfmk/tensor.hpp"
#include "sfmk/tensor_ops.hpp"
#include "sfmk/geometry.hpp"
#include "sfmk/depth_range.hpp"
#include "sfmk/losses.hpp"
#include "sfmk/nets.hpp"
#include "sfmk/optim.hpp"
#include "sfmk/image_io.hpp"
#include "sfmk/config.hpp"
#include "sfmk/dataset.hpp"
#include "sfmk/scene.hpp"
#include "sfmk/eval.hpp"
#include "sfmk/corrupt.hpp"
#include "sfmk/train.hpp"
#include "sfmk/attack.hpp"
