// Everything in one include.
#pragma once

#include "dine/autodiff.hpp"
#include "dine/blackbox.hpp"
#include "dine/cache.hpp"
#include "dine/checkpoint.hpp"
#include "dine/distill.hpp"
#include "dine/errors.hpp"
#include "dine/finetune.hpp"
#include "dine/grad_check.hpp"
#include "dine/harness.hpp"
#include "dine/losses.hpp"
#include "dine/memory_bank.hpp"
#include "dine/nn.hpp"
#include "dine/optim.hpp"
#include "dine/scenarios.hpp"
#include "dine/service.hpp"
#include "dine/source_training.hpp"
#include "dine/tensor.hpp"
#include "dine/training.hpp"
