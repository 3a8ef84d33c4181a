#pragma once

#include "gsct/bench.hpp"
#include "gsct/common.hpp"
#include "gsct/core.hpp"
#include "gsct/half.hpp"
#include "gsct/init.hpp"
#include "gsct/io.hpp"
#include "gsct/losses.hpp"
#include "gsct/metrics.hpp"
#include "gsct/optim.hpp"
#include "gsct/parallel.hpp"
#include "gsct/projector.hpp"
#include "gsct/rng.hpp"
#include "gsct/synthetic.hpp"
#include "gsct/voxelizer.hpp"
