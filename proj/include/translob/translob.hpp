#pragma once

// Umbrella header for the TransLOB library.

#include "translob/adam.hpp"
#include "translob/archive.hpp"
#include "translob/attention_export.hpp"
#include "translob/autodiff.hpp"
#include "translob/checkpoint.hpp"
#include "translob/config_json.hpp"
#include "translob/error.hpp"
#include "translob/init.hpp"
#include "translob/lob.hpp"
#include "translob/metrics.hpp"
#include "translob/model.hpp"
#include "translob/nn.hpp"
#include "translob/rng.hpp"
#include "translob/synth.hpp"
#include "translob/tensor.hpp"
#include "translob/train.hpp"
