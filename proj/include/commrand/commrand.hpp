#pragma once

#include "commrand/types.hpp"
#include "commrand/random.hpp"
#include "commrand/graph.hpp"
#include "commrand/tensor.hpp"
#include "commrand/dataset.hpp"
#include "commrand/sbm.hpp"
#include "commrand/community.hpp"
#include "commrand/minibatch.hpp"
#include "commrand/gnn.hpp"
#include "commrand/metrics.hpp"
#include "commrand/train.hpp"
#include "commrand/experiment.hpp"
