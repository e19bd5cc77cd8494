#pragma once

#include "ckf/belief.hpp"
#include "ckf/checkpoint.hpp"
#include "ckf/config.hpp"
#include "ckf/drift.hpp"
#include "ckf/errors.hpp"
#include "ckf/harness.hpp"
#include "ckf/inference.hpp"
#include "ckf/prediction.hpp"
#include "ckf/probit.hpp"
#include "ckf/synth.hpp"
