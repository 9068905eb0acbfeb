#pragma once
// Umbrella header.

#include "uncprop/core/checksum.hpp"
#include "uncprop/core/errors.hpp"
#include "uncprop/core/image.hpp"
#include "uncprop/core/parallel.hpp"
#include "uncprop/core/rng.hpp"
#include "uncprop/distributions.hpp"
#include "uncprop/propagation.hpp"
#include "uncprop/metrics.hpp"
#include "uncprop/models.hpp"
#include "uncprop/losses.hpp"
#include "uncprop/training.hpp"
#include "uncprop/synth.hpp"
#include "uncprop/io.hpp"
#include "uncprop/dataset.hpp"
#include "uncprop/pipeline.hpp"
#include "uncprop/config.hpp"
#include "uncprop/commands.hpp"
