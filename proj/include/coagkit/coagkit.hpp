#pragma once

#include "coalescent.hpp"
#include "config.hpp"
#include "deterministic.hpp"
#include "errors.hpp"
#include "harness.hpp"
#include "kernels.hpp"
#include "measures.hpp"
#include "nonuniqueness.hpp"
#include "rng.hpp"
#include "truncation.hpp"
