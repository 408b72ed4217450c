// Copyright 2026 the m3rec authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace m3rec {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Dimension mismatch between operands; message names both shapes.
struct ShapeError : Error {
  using Error::Error;
};

// Unknown id: vocabulary entry, user, task, or group that does not exist.
struct LookupError : Error {
  using Error::Error;
};

// Invalid configuration or invalid structural input (empty sequence, bad range).
struct ConfigError : Error {
  using Error::Error;
};

// Malformed file content; message carries the line number where known.
struct ParseError : Error {
  using Error::Error;
};

// A verification oracle could not run (e.g. non-deterministic forward).
struct OracleError : Error {
  using Error::Error;
};

// Tape misuse: backward without forward, double backward, mixed tapes.
struct TapeError : Error {
  using Error::Error;
};

}  // namespace m3rec
