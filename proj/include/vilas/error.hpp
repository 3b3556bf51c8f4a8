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

#include <stdexcept>
#include <string>

namespace vilas {

// Base class for every error raised by the library. The CLI maps the
// subclasses onto exit codes (validation = 3, everything else = 4).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operand extents do not conform for an op.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf produced or an ill-posed numeric request (zero weight sum, ...).
class NumericError : public Error {
 public:
  using Error::Error;
};

// Malformed on-disk data: bad magic, truncated payloads, broken JSON.
class FormatError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration or arguments, detected before any work starts.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Runtime failure of a pipeline step (missing checkpoint, runaway CIF, ...).
class RuntimeError : public Error {
 public:
  using Error::Error;
};

}  // namespace vilas
