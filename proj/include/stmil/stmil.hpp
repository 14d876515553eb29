#pragma once

// Umbrella header for the whole library.

#include "stmil/bagging.hpp"
#include "stmil/errors.hpp"
#include "stmil/eval.hpp"
#include "stmil/fcub.hpp"
#include "stmil/manifest.hpp"
#include "stmil/net.hpp"
#include "stmil/pipeline.hpp"
#include "stmil/ranking_loss.hpp"
#include "stmil/rng.hpp"
#include "stmil/synthetic.hpp"
#include "stmil/tensor.hpp"
#include "stmil/train.hpp"
