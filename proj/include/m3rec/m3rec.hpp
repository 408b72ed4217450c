// Copyright 2026 the m3rec authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "m3rec/adam.hpp"
#include "m3rec/autodiff.hpp"
#include "m3rec/config.hpp"
#include "m3rec/datagen.hpp"
#include "m3rec/errors.hpp"
#include "m3rec/evaluate.hpp"
#include "m3rec/ggsnn.hpp"
#include "m3rec/grouping.hpp"
#include "m3rec/matrix.hpp"
#include "m3rec/metrics.hpp"
#include "m3rec/model.hpp"
#include "m3rec/rng.hpp"
#include "m3rec/sequence.hpp"
#include "m3rec/task.hpp"
#include "m3rec/train.hpp"
