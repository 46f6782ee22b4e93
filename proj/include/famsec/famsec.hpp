// Copyright (c) 2026 the famsec authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Umbrella header.

#include "famsec/common.hpp"
#include "famsec/config.hpp"
#include "famsec/data.hpp"
#include "famsec/eval.hpp"
#include "famsec/image.hpp"
#include "famsec/inference.hpp"
#include "famsec/io.hpp"
#include "famsec/lora.hpp"
#include "famsec/matrix.hpp"
#include "famsec/plot.hpp"
#include "famsec/png_io.hpp"
#include "famsec/rng.hpp"
#include "famsec/sec.hpp"
#include "famsec/trainer.hpp"
#include "famsec/tsne.hpp"
#include "famsec/vit.hpp"
