#pragma once

#include "kficl/common.hpp"
#include "kficl/ssm.hpp"
#include "kficl/sampler.hpp"
#include "kficl/filters.hpp"
#include "kficl/baselines.hpp"
#include "kficl/context_codec.hpp"
#include "kficl/dataset_io.hpp"
#include "kficl/tape_vm.hpp"
#include "kficl/tape_io.hpp"
#include "kficl/eval.hpp"
