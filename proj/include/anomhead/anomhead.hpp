#pragma once

#include "anomhead/adapters.hpp"
#include "anomhead/config.hpp"
#include "anomhead/errors.hpp"
#include "anomhead/feature_io.hpp"
#include "anomhead/head.hpp"
#include "anomhead/image_io.hpp"
#include "anomhead/losses.hpp"
#include "anomhead/metrics.hpp"
#include "anomhead/numerics.hpp"
#include "anomhead/synth.hpp"
#include "anomhead/training.hpp"
