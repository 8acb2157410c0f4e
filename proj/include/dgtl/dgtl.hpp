#pragma once

#include "dgtl/checkpoint.hpp"
#include "dgtl/dataset.hpp"
#include "dgtl/embedder.hpp"
#include "dgtl/experiment.hpp"
#include "dgtl/losses.hpp"
#include "dgtl/objective.hpp"
#include "dgtl/pooling.hpp"
#include "dgtl/retrieval.hpp"
#include "dgtl/run_config.hpp"
#include "dgtl/sampler.hpp"
#include "dgtl/trainer.hpp"
