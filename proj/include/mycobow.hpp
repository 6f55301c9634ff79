#pragma once

#include "mycobow/aggregation.hpp"
#include "mycobow/baseline_head.hpp"
#include "mycobow/descriptors.hpp"
#include "mycobow/error.hpp"
#include "mycobow/evaluation.hpp"
#include "mycobow/explainability.hpp"
#include "mycobow/fisher.hpp"
#include "mycobow/gmm.hpp"
#include "mycobow/grid_search.hpp"
#include "mycobow/image.hpp"
#include "mycobow/manifest.hpp"
#include "mycobow/parallel.hpp"
#include "mycobow/patching.hpp"
#include "mycobow/pipeline.hpp"
#include "mycobow/rng.hpp"
#include "mycobow/species.hpp"
#include "mycobow/svm.hpp"
#include "mycobow/synthetic.hpp"
#include "mycobow/version.hpp"
