#pragma once

#include "aat/attention.hpp"
#include "aat/decoder.hpp"
#include "aat/errors.hpp"
#include "aat/halting.hpp"
#include "aat/metrics.hpp"
#include "aat/nn.hpp"
#include "aat/serialize.hpp"
#include "aat/synth.hpp"
#include "aat/tape.hpp"
#include "aat/tensor.hpp"
#include "aat/training.hpp"
