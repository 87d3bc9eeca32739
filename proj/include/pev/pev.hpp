#pragma once

// Federated unlearning simulator: adaptive checkpointing during training,
// layer-adaptive DP client removal, fingerprint-based verification.

#include "pev/checkpoint.hpp"
#include "pev/config.hpp"
#include "pev/data.hpp"
#include "pev/errors.hpp"
#include "pev/fingerprint.hpp"
#include "pev/fl.hpp"
#include "pev/metrics.hpp"
#include "pev/model.hpp"
#include "pev/rng.hpp"
#include "pev/runner.hpp"
#include "pev/sweep.hpp"
#include "pev/tensor.hpp"
#include "pev/unlearn.hpp"
