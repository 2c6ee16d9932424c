#pragma once

#include "srforge/common.hpp"
#include "srforge/raster.hpp"
#include "srforge/geo.hpp"
#include "srforge/io.hpp"
#include "srforge/metrics.hpp"
#include "srforge/tensor.hpp"
#include "srforge/nn.hpp"
#include "srforge/models.hpp"
#include "srforge/losses.hpp"
#include "srforge/train.hpp"
#include "srforge/dataset.hpp"
#include "srforge/figure.hpp"
#include "srforge/runtime.hpp"
