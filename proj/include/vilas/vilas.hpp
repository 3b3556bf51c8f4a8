// Copyright 2026 The vilas Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include "vilas/cif.hpp"
#include "vilas/config.hpp"
#include "vilas/data.hpp"
#include "vilas/decoder.hpp"
#include "vilas/decoding.hpp"
#include "vilas/encoder.hpp"
#include "vilas/error.hpp"
#include "vilas/frontend.hpp"
#include "vilas/losses.hpp"
#include "vilas/matrix.hpp"
#include "vilas/model.hpp"
#include "vilas/nn.hpp"
#include "vilas/numerics/grad_check.hpp"
#include "vilas/numerics/ops.hpp"
#include "vilas/numerics/param_store.hpp"
#include "vilas/numerics/tensor.hpp"
#include "vilas/perception.hpp"
#include "vilas/rng.hpp"
#include "vilas/training.hpp"
